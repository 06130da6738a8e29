#include "chai/experiments.hpp"

#include <cstdio>
#include <sstream>

namespace chai {

using nlohmann::json;

AblationReport run_ablation(const Corpus& corpus, const NamedAgent& buyer, const AblationConfig& cfg,
                            std::shared_ptr<const CandidateGenerator> generator,
                            std::shared_ptr<const Featurizer> featurizer) {
  const auto scenarios = corpus.scenario_list();
  AblationReport report;
  for (RewardVariant reward : cfg.variants) {
    TrainerConfig tc = cfg.trainer;
    tc.reward = reward;
    Trainer trainer = make_trainer(corpus, generator, featurizer, tc);
    trainer.run(cfg.steps);
    DecodePolicy policy(std::make_shared<const CriticParams>(trainer.nets().critic), generator, featurizer,
                        cfg.decode);
    const NamedAgent buyers[] = {buyer};
    EvalReport eval = evaluate(policy, buyers, scenarios, cfg.episodes, reward, cfg.eval_seed);
    const EvalRow& r = eval.rows.front();
    report.rows.push_back({reward, r.accept_rate / 100.0, r.offered, r.accepted, r.revenue, std::move(eval.episodes)});
  }
  return report;
}

std::string AblationReport::table() const {
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-8s  %11s  %14s  %15s  %11s\n", "Reward", "Accept Rate", "Prices Offered",
                "Prices Accepted", "Revenue");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s  %11.2f  %7.2f ± %4.2f  %8.2f ± %4.2f  %4.2f ± %4.2f\n",
                  std::string(to_string(r.reward)).c_str(), r.accept_rate, r.offered.mean, r.offered.std,
                  r.accepted.mean, r.accepted.std, r.revenue.mean, r.revenue.std);
    os << buf;
  }
  return os.str();
}

json AblationReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"reward", to_string(r.reward)},
                      {"accept_rate", r.accept_rate},
                      {"offered_mean", r.offered.mean},
                      {"offered_std", r.offered.std},
                      {"accepted_mean", r.accepted.mean},
                      {"accepted_std", r.accepted.std},
                      {"revenue_mean", r.revenue.mean},
                      {"revenue_std", r.revenue.std}});
  return {{"rows", rows_j}};
}

}  // namespace chai
