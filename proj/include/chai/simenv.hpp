#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/candidates.hpp"
#include "chai/dataset.hpp"
#include "chai/policy.hpp"

namespace chai {

struct ConcedingBuyerConfig {
  double concession = 0.5;
  double opening = 0.5;
  double accept_margin = 0.1;
  double gap_tolerance = 0.02;
  std::size_t gap_rounds = 2;
  std::size_t patience = 8;
  // Chance per turn of rejecting an offer above the buyer's target, scaled by
  // (s - target) / (1 - target).
  double walk_hazard = 0.0;
};

/// Buyer that opens low and closes a fixed share of the gap to each new seller price.
class ConcedingBuyer final : public Agent {
 public:
  explicit ConcedingBuyer(ConcedingBuyerConfig cfg = {});
  static ConcedingBuyer rule_based();
  static ConcedingBuyer stingy();

  Role role() const override { return Role::Buyer; }
  Turn respond(const DialogueState& state, Rng& rng) const override;
  const ConcedingBuyerConfig& config() const { return cfg_; }

 private:
  ConcedingBuyerConfig cfg_;
};

/// Accepts any seller offer; matches a seller's quoted price with an offer.
class AlwaysAcceptBuyer final : public Agent {
 public:
  Role role() const override { return Role::Buyer; }
  Turn respond(const DialogueState& state, Rng& rng) const override;
};

/// Plays a fixed list of turns; its n-th turn (0-based) is the list's n-th entry.
/// Once the list runs out it keeps sending a short message.
class ScriptedAgent final : public Agent {
 public:
  ScriptedAgent(Role role, std::vector<Turn> turns);
  Role role() const override { return role_; }
  Turn respond(const DialogueState& state, Rng& rng) const override;

 private:
  Role role_;
  std::vector<Turn> turns_;
};

struct NamedAgent {
  std::string name;
  std::shared_ptr<const Agent> agent;
};

/// "rule-based", "stingy", "always-accept".
NamedAgent make_buyer(std::string_view name);

struct EpisodeResult {
  std::vector<Turn> transcript;
  EpisodeOutcome outcome = EpisodeOutcome::timed_out();
  double reward = 0.0;
  std::size_t turns = 0;
  std::optional<std::string> diagnostic;
};

inline constexpr std::size_t kDefaultMaxTurns = 20;

/// Buyer speaks first; stops on accept/reject or after max_turns turns (TimedOut).
/// A seller that fails to act ends the episode as TimedOut with a diagnostic.
EpisodeResult run_episode(const Agent& seller, const Agent& buyer, const ScenarioPtr& scenario,
                          RewardVariant variant, Rng& rng, std::size_t max_turns = kDefaultMaxTurns,
                          const RewardParams& params = {});

struct EpisodeRecord {
  std::string buyer;
  std::size_t index = 0;
  std::string scenario_id;
  EpisodeOutcome outcome = EpisodeOutcome::timed_out();
  double reward = 0.0;
  std::size_t turns = 0;
  std::vector<double> offered;  // every price the seller quoted, as fractions
  std::optional<std::string> diagnostic;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

MeanStd mean_std(std::span<const double> xs);

struct EvalRow {
  std::string buyer;
  std::size_t episodes = 0;
  double accept_rate = 0.0;  // percent
  MeanStd revenue;
  MeanStd offered;
  MeanStd accepted;
  double reward_mean = 0.0;
};

EvalRow summarize(const std::string& buyer, std::span<const EpisodeRecord> episodes);

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EpisodeRecord> episodes;

  nlohmann::json to_json() const;
  /// Buyer | Acc% | Revenue (mean ± std)
  std::string table() const;
  /// One JSON object per episode.
  std::string episodes_jsonl() const;
};

nlohmann::json to_json(const EpisodeRecord& r);

/// Episode e of every buyer uses the stream derive_seed(seed, e), so buyers see the
/// same scenarios and seller randomness.
EvalReport evaluate(const Agent& seller, std::span<const NamedAgent> buyers,
                    std::span<const ScenarioPtr> scenarios, std::size_t episodes_per_pair,
                    RewardVariant variant, std::uint64_t seed,
                    std::size_t max_turns = kDefaultMaxTurns, const RewardParams& params = {});

// ---------------------------------------------------------------------------
// Synthetic data.

struct ScriptedSellerConfig {
  double counter_low = 0.85;
  double counter_high = 0.95;
  double accept_ratio = 0.75;
  double early_accept_prob = 0.1;   // accept an outstanding buyer offer below the ratio
  double lowball_ratio = 0.6;       // buyer offers under this share of the ask may be rejected
  double reject_prob = 0.15;
  double chat_prob = 0.2;           // an unpriced message instead of a move on price
  double priced_message_prob = 0.4; // counter as a priced message rather than an offer
  double open_with_chat_prob = 0.5;
  double explore_prob = 0.5;        // a uniformly random legal candidate instead
  std::size_t explore_utterances = 5;
  std::size_t explore_prices = 5;
};

/// The behavior policy behind synthetic corpora: template utterances plus a noisy
/// concession rule on its own previous price.
class ScriptedSeller final : public Agent {
 public:
  explicit ScriptedSeller(std::shared_ptr<const CandidateGenerator> generator,
                          ScriptedSellerConfig cfg = {});
  Role role() const override { return Role::Seller; }
  Turn respond(const DialogueState& state, Rng& rng) const override;

 private:
  std::string pick_template(const DialogueState& state, bool priced, Rng& rng) const;

  std::shared_ptr<const CandidateGenerator> generator_;
  ScriptedSellerConfig cfg_;
};

/// Rounds a fraction so that fraction * list_price is a whole number of cents.
double quantize_price(double fraction, double list_price);

std::vector<ScenarioPtr> synthetic_scenarios(std::size_t count, std::uint64_t seed);

Corpus generate_synthetic_corpus(std::span<const ScenarioPtr> scenarios, const Agent& buyer,
                                 const Agent& seller, std::size_t n_dialogues, std::uint64_t seed,
                                 std::size_t max_turns = kDefaultMaxTurns);

}  // namespace chai
