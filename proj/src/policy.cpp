#include "chai/policy.hpp"

#include <algorithm>
#include <cmath>

namespace chai {

std::vector<double> softmax_probabilities(std::span<const double> q, double temperature) {
  if (q.empty()) throw Error(ErrorCode::EmptyCandidates, "softmax over an empty candidate set");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::Domain, "temperature must be > 0");
  for (double v : q)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite Q value among candidates");
  const double m = *std::max_element(q.begin(), q.end());
  std::vector<double> p(q.size());
  double z = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) z += p[i] = std::exp((q[i] - m) / temperature);
  for (double& v : p) v /= z;
  return p;
}

std::size_t softmax_select(std::span<const double> q, double temperature, Rng& rng) {
  const auto p = softmax_probabilities(q, temperature);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  return pick(rng);
}

std::size_t argmax_select(std::span<const double> q) {
  if (q.empty()) throw Error(ErrorCode::EmptyCandidates, "argmax over an empty candidate set");
  for (double v : q)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite Q value among candidates");
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

void DecodeConfig::validate() const {
  if (!greedy && !(temperature > 0.0)) throw Error(ErrorCode::Domain, "temperature must be > 0");
  if (n_utterances == 0 || n_prices == 0) throw Error(ErrorCode::Domain, "candidate counts must be >= 1");
}

std::vector<CandidateAction> propose_candidates(const CandidateGenerator& generator,
                                                const DialogueState& state, std::size_t n_utterances,
                                                std::size_t n_prices, Rng& rng) {
  const auto prices = sample_prices(seller_reference_price(state), n_prices, rng);
  for (int attempt = 0;; ++attempt) {
    const auto templates = generator.propose(*state.scenario, state.history, n_utterances, rng());
    try {
      return enumerate_actions(templates, prices, state);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyCandidates || attempt == 1) throw;
    }
  }
}

DecodePolicy::DecodePolicy(std::shared_ptr<const CriticParams> critic,
                           std::shared_ptr<const CandidateGenerator> generator,
                           std::shared_ptr<const Featurizer> featurizer, DecodeConfig cfg)
    : critic_(std::move(critic)),
      generator_(std::move(generator)),
      featurizer_(std::move(featurizer)),
      cfg_(cfg) {
  if (!critic_ || !generator_ || !featurizer_)
    throw Error(ErrorCode::Selection, "decode policy needs a critic, a generator and a featurizer");
  if (critic_->inputs() != featurizer_->feature_size())
    throw Error(ErrorCode::Shape, "critic expects " + std::to_string(critic_->inputs()) +
                                      " features, featurizer produces " +
                                      std::to_string(featurizer_->feature_size()));
  cfg_.validate();
}

Decision DecodePolicy::decide(const DialogueState& state, Rng& rng) const {
  if (state.is_terminal()) throw Error(ErrorCode::EpisodeOver, "cannot act in a finished dialogue");
  Decision d;
  d.candidates = propose_candidates(*generator_, state, cfg_.n_utterances, cfg_.n_prices, rng);
  const auto turns = to_turns(d.candidates);
  d.q = q_forward_batch(*critic_, featurizer_->featurize_batch(state, turns));
  const std::span<const double> q(d.q.data(), static_cast<std::size_t>(d.q.size()));
  d.chosen = cfg_.greedy ? argmax_select(q) : softmax_select(q, cfg_.temperature, rng);
  d.turn = turns[d.chosen];
  return d;
}

Turn DecodePolicy::respond(const DialogueState& state, Rng& rng) const { return decide(state, rng).turn; }

Turn decode(const DialogueState& state, const DecodePolicy& policy, Rng& rng) {
  return policy.respond(state, rng);
}

Turn greedy_decode(const DialogueState& state, const CriticParams& critic,
                   const CandidateGenerator& generator, const Featurizer& featurizer, Rng& rng,
                   std::size_t n_utterances, std::size_t n_prices) {
  if (state.is_terminal()) throw Error(ErrorCode::EpisodeOver, "cannot act in a finished dialogue");
  const auto turns = to_turns(propose_candidates(generator, state, n_utterances, n_prices, rng));
  const Eigen::VectorXd q = q_forward_batch(critic, featurizer.featurize_batch(state, turns));
  return turns[argmax_select({q.data(), static_cast<std::size_t>(q.size())})];
}

std::shared_ptr<DecodePolicy> load_policy(const std::string& checkpoint_path,
                                          std::shared_ptr<const CandidateGenerator> generator,
                                          std::shared_ptr<const Featurizer> featurizer,
                                          DecodeConfig cfg) {
  if (!featurizer) throw Error(ErrorCode::Checkpoint, "no featurizer to check the checkpoint against");
  Checkpoint ck = read_checkpoint_file(checkpoint_path, featurizer->feature_size(),
                                       featurizer->provider().id());
  return std::make_shared<DecodePolicy>(std::make_shared<const CriticParams>(std::move(ck.online)),
                                        std::move(generator), std::move(featurizer), cfg);
}

Turn ListPriceSeller::respond(const DialogueState& state, Rng&) const {
  if (state.is_terminal()) throw Error(ErrorCode::EpisodeOver, "cannot act in a finished dialogue");
  if (state.last_offer && state.last_offer->role == Role::Buyer && state.last_offer->price >= 1.0)
    return Turn::accept(Role::Seller);
  return Turn::offer(Role::Seller, 1.0);
}

RandomSeller::RandomSeller(std::shared_ptr<const CandidateGenerator> generator, std::size_t n_utterances,
                           std::size_t n_prices)
    : generator_(std::move(generator)), n_u_(n_utterances), n_p_(n_prices) {
  if (!generator_) throw Error(ErrorCode::Selection, "random seller needs a generator");
}

Turn RandomSeller::respond(const DialogueState& state, Rng& rng) const {
  if (state.is_terminal()) throw Error(ErrorCode::EpisodeOver, "cannot act in a finished dialogue");
  const auto c = propose_candidates(*generator_, state, n_u_, n_p_, rng);
  return c[uniform_index(rng, c.size())].to_turn(Role::Seller);
}

}  // namespace chai
