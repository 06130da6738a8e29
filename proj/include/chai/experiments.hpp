#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/offline_rl.hpp"
#include "chai/simenv.hpp"

namespace chai {

struct AblationConfig {
  TrainerConfig trainer;      // reward is overridden per row
  std::size_t steps = 5000;
  std::size_t episodes = 200;
  std::uint64_t eval_seed = 0;
  DecodeConfig decode;
  std::vector<RewardVariant> variants{RewardVariant::Final, RewardVariant::Penalty, RewardVariant::AcceptOnly,
                                      RewardVariant::Utility, RewardVariant::Fair};
};

struct AblationRow {
  RewardVariant reward = RewardVariant::Final;
  double accept_rate = 0.0;  // fraction of episodes
  MeanStd offered;
  MeanStd accepted;
  MeanStd revenue;
  std::vector<EpisodeRecord> episodes;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  /// Reward | Accept Rate | Prices Offered | Prices Accepted | Revenue
  std::string table() const;
  nlohmann::json to_json() const;
};

/// Trains one critic per reward variant on the same corpus and seed, then evaluates
/// each against `buyer` on the corpus scenarios.
AblationReport run_ablation(const Corpus& corpus, const NamedAgent& buyer, const AblationConfig& cfg,
                            std::shared_ptr<const CandidateGenerator> generator,
                            std::shared_ptr<const Featurizer> featurizer);

}  // namespace chai
