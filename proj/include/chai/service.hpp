#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/policy.hpp"

namespace chai {

struct SurveyRatings {
  int fluency = 0;
  int coherency = 0;
  int on_topic = 0;
  int human_like = 0;
};

struct SurveyQuestion {
  std::string key;
  std::string statement;
};

/// The four 1-5 Likert items shown after a negotiation.
const std::vector<SurveyQuestion>& survey_questions();

struct Session {
  std::string id;
  DialogueState state;
  std::shared_ptr<const Agent> policy;
  std::chrono::system_clock::time_point created;
  bool practice = false;
  std::optional<EpisodeOutcome> outcome;
  std::optional<SurveyRatings> survey;
  Rng rng;
  std::mutex mu;

  Session(std::string id, ScenarioPtr scenario, std::shared_ptr<const Agent> policy, bool practice,
          std::uint64_t seed);
  bool finished() const { return outcome.has_value(); }
};

struct ServiceConfig {
  std::string sessions_log;  // empty disables logging
  std::string surveys_log;
  std::size_t max_turns = 40;
  std::uint64_t seed = 0;    // 0 draws from std::random_device
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Loads a policy for a checkpoint path named by a client.
using PolicyLoader = std::function<std::shared_ptr<const Agent>(const std::string&)>;

/// HTTP-independent session logic; every method is safe to call concurrently.
class NegotiationService {
 public:
  NegotiationService(ServiceConfig cfg, std::vector<ScenarioPtr> scenarios,
                     std::shared_ptr<const Agent> default_policy, PolicyLoader loader = {});

  ServiceResponse create_session(const nlohmann::json& body);
  ServiceResponse post_message(const std::string& id, const nlohmann::json& body);
  ServiceResponse submit_survey(const std::string& id, const nlohmann::json& body);
  ServiceResponse transcript(const std::string& id) const;
  ServiceResponse questions() const;

  std::shared_ptr<Session> find(const std::string& id) const;
  std::size_t session_count() const;

 private:
  std::string new_id();
  void append_log(const std::string& path, const nlohmann::json& record);
  void finish(Session& s, const EpisodeOutcome& outcome);
  nlohmann::json outcome_json(const Session& s) const;

  ServiceConfig cfg_;
  std::vector<ScenarioPtr> scenarios_;
  std::shared_ptr<const Agent> default_policy_;
  PolicyLoader loader_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex rng_mu_;
  Rng rng_;
  std::mutex log_mu_;
  std::map<std::string, std::shared_ptr<const Agent>> loaded_;
};

nlohmann::json turn_json(const Turn& turn, double list_price);

struct MetricSummary {
  std::string key;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and population std per survey item over a surveys.log; practice sessions
/// are skipped unless `include_practice`.
std::vector<MetricSummary> summarize_surveys(const std::string& log_text, bool include_practice = false);
std::string format_survey_summary(const std::vector<MetricSummary>& rows);

}  // namespace chai
