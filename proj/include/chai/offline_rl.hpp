#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chai/candidates.hpp"
#include "chai/critic.hpp"
#include "chai/dataset.hpp"
#include "chai/features.hpp"

namespace chai {

enum class TrainerVariant { Prop, Cql, Brac };

std::string_view to_string(TrainerVariant v);
TrainerVariant parse_trainer_variant(std::string_view s);

struct TrainerConfig {
  TrainerVariant variant = TrainerVariant::Prop;
  RewardVariant reward = RewardVariant::Final;
  double gamma = 0.99;
  double alpha = 1.0;
  double tau = 0.05;
  double lr = 3e-4;
  double proposal_lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t n_target_utterances = 5;
  std::size_t n_target_prices = 5;
  std::size_t hidden = kCriticHidden;
  std::size_t proposal_hidden = 32;
  std::size_t cache_k = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Where candidate utterances come from during training: the pre-generated cache
/// first, the live generator when an entry is missing or yields nothing legal.
struct TargetContext {
  const CandidateCache* cache = nullptr;
  const CandidateGenerator* generator = nullptr;
  const Featurizer* featurizer = nullptr;
};

/// Id of the transition whose state equals `t.next_state` ("d:j" -> "d:j+1").
std::string successor_id(const std::string& transition_id);

/// n templates resampled (with replacement) from the cache entry `id`, or freshly
/// proposed for `state` when the entry is missing.
std::vector<std::string> resample_templates(const TargetContext& ctx, const std::string& id,
                                            const DialogueState& state, std::size_t n, Rng& rng);

enum class Backup { Max, Mean };

/// reward + gamma * (max | mean) of q.
double bellman_backup(double reward, double gamma, std::span<const double> q, Backup mode);

/// Legal candidates at the transition's next state: resampled cached utterances
/// crossed with fresh uniform prices. Regenerates once from the live generator
/// when nothing legal comes out.
std::vector<CandidateAction> draw_prop_candidates(const Transition& t, const TargetContext& ctx,
                                                  const TrainerConfig& cfg, Rng& rng);

double compute_target_prop(const Transition& t, const TargetContext& ctx,
                           const CriticParams& target, const TrainerConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// CQL(H) regularizer over a candidate set.

struct LogSumExpPenalty {
  double value = 0.0;
  Eigen::VectorXd dq;  // d value / d q_j
};

/// logsumexp(q) - q[data_index], with its gradient in q.
LogSumExpPenalty cql_penalty(const Eigen::VectorXd& q, std::size_t data_index);

struct CqlTerm {
  double value = 0.0;
  CriticParams grads;
};

/// Appends `dataset_action` to `candidates` when absent, then evaluates the
/// penalty and its parameter gradient.
CqlTerm cql_penalty(const DialogueState& state, const CandidateAction& dataset_action,
                    std::vector<CandidateAction> candidates, const CriticParams& params,
                    const Featurizer& featurizer);

/// Index of `action` in `candidates`, appending it when missing.
std::size_t include_action(std::vector<CandidateAction>& candidates, const CandidateAction& action);

CandidateAction to_candidate(const Turn& turn);

// ---------------------------------------------------------------------------
// Behavior-regularized price proposal.

struct Gaussian {
  double mean = 0.0;
  double std = 1.0;
};

/// KL(p || q) between univariate Gaussians.
double gaussian_kl(Gaussian p, Gaussian q);

/// Behavior prior: mean and std both linear in the seller's previous price.
struct PriorProposal {
  double mean_slope = 1.0;
  double mean_intercept = 0.0;
  double std_slope = 0.0;
  double std_intercept = 0.1;
  double std_floor = 1e-3;

  Gaussian at(double prev) const;
};

PriorProposal fit_prior_proposal(std::span<const Transition> transitions);

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;
inline constexpr double kMaxProposalPrice = 2.0;

/// One-hidden-layer network on [state features, previous seller price] producing
/// offsets from the prior: mean = prior mean + o0, log std = clamp(log prior std + o1).
class PriceProposalNet {
 public:
  PriceProposalNet() = default;
  PriceProposalNet(std::size_t inputs, std::size_t hidden);  // zero output layer
  /// Glorot hidden layer; output weights scaled by `output_scale` (0 starts at the prior).
  static PriceProposalNet random(std::size_t inputs, std::size_t hidden, Rng& rng,
                                 double output_scale = 1.0);

  std::size_t inputs() const { return m_; }
  std::size_t hidden() const { return h_; }
  Eigen::VectorXd& flat() { return theta_; }
  const Eigen::VectorXd& flat() const { return theta_; }

  struct Output {
    Gaussian dist;
    bool log_std_clamped = false;
    Eigen::VectorXd hidden_pre;  // for backprop
  };

  Output forward(const Eigen::VectorXd& input, const PriorProposal& prior, double prev) const;
  /// Adds the gradient of (dmean * mean + dlogstd * log std) into `grads`.
  void backward(const Eigen::VectorXd& input, const Output& out, double dmean, double dlogstd,
                Eigen::VectorXd& grads) const;

 private:
  Eigen::Map<const RowMatrix> Wh() const { return {theta_.data(), hh(), mm()}; }
  Eigen::Map<const Eigen::VectorXd> bh() const { return {theta_.data() + hh() * mm(), hh()}; }
  Eigen::Map<const RowMatrix> Wo() const { return {theta_.data() + hh() * mm() + hh(), 2, hh()}; }
  Eigen::Map<const Eigen::VectorXd> bo() const { return {theta_.data() + hh() * mm() + 3 * hh(), 2}; }
  Eigen::Index hh() const { return static_cast<Eigen::Index>(h_); }
  Eigen::Index mm() const { return static_cast<Eigen::Index>(m_); }

  std::size_t m_ = 0, h_ = 0;
  Eigen::VectorXd theta_;
};

/// Input to the price proposal: state half of the features plus the previous seller price.
Eigen::VectorXd proposal_input(const DialogueState& state, const Featurizer& featurizer);

struct SampledActions {
  std::vector<CandidateAction> actions;
  std::vector<double> noise;        // standard-normal draw behind each price (0 if unpriced)
  std::vector<bool> price_active;   // price drawn from the proposal and not clipped
};

/// Actions a' ~ (pi_phi, mu): types uniform over the types legal in `state`,
/// message utterances from `templates`, prices from `dist`.
SampledActions sample_proposal_actions(const DialogueState& state,
                                       std::span<const std::string> templates, Gaussian dist,
                                       std::size_t count, Rng& rng);

double compute_target_brac(const Transition& t, const PriceProposalNet& phi,
                           const PriorProposal& prior, const TargetContext& ctx,
                           const CriticParams& target, const TrainerConfig& cfg, Rng& rng);

struct ProposalGradient {
  double objective = 0.0;  // mean over states of E[Q(s, a')] - KL
  double kl = 0.0;
  Eigen::VectorXd grad;    // d objective / d phi
};

ProposalGradient price_proposal_gradient(const PriceProposalNet& phi,
                                         std::span<const Transition* const> batch,
                                         const PriorProposal& prior, const CriticParams& critic,
                                         const TargetContext& ctx, const TrainerConfig& cfg,
                                         Rng& rng);

/// One Adam ascent step on the proposal objective.
ProposalGradient train_price_proposal(PriceProposalNet& phi, AdamState& opt,
                                      std::span<const Transition* const> batch,
                                      const PriorProposal& prior, const CriticParams& critic,
                                      const TargetContext& ctx, const TrainerConfig& cfg,
                                      Rng& rng);

// ---------------------------------------------------------------------------

struct TrainerNets {
  CriticParams critic;
  CriticParams target;
  AdamState optimizer;
  std::optional<PriorProposal> prior;
  std::optional<PriceProposalNet> proposal;
  AdamState proposal_optimizer;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double cql = 0.0;
  double q_mean = 0.0;
};

StepMetrics train_step(TrainerNets& nets, std::span<const Transition* const> batch,
                       const TargetContext& ctx, const TrainerConfig& cfg, Rng& rng);

class Trainer {
 public:
  Trainer(std::vector<Transition> transitions, CandidateCache cache,
          std::shared_ptr<const CandidateGenerator> generator,
          std::shared_ptr<const Featurizer> featurizer, TrainerConfig cfg);

  StepMetrics step();
  /// Runs `steps` updates, writing one JSON line per step to `metrics` when given.
  void run(std::size_t steps, std::ostream* metrics = nullptr);

  const TrainerNets& nets() const { return nets_; }
  const TrainerConfig& config() const { return cfg_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const CandidateCache& cache() const { return cache_; }
  std::size_t steps_done() const { return steps_; }
  TargetContext context() const { return {&cache_, generator_.get(), featurizer_.get()}; }

  Checkpoint checkpoint() const;

 private:
  std::vector<Transition> transitions_;
  CandidateCache cache_;
  std::shared_ptr<const CandidateGenerator> generator_;
  std::shared_ptr<const Featurizer> featurizer_;
  TrainerConfig cfg_;
  TrainerNets nets_;
  Rng rng_;
  std::size_t steps_ = 0;
};

/// Extracts transitions, builds the candidate cache and returns a ready trainer.
Trainer make_trainer(const Corpus& corpus, std::shared_ptr<const CandidateGenerator> generator,
                     std::shared_ptr<const Featurizer> featurizer, const TrainerConfig& cfg,
                     const CandidateCache* cache = nullptr);

}  // namespace chai
