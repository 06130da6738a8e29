#include "chai/service.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "chai/simenv.hpp"

namespace chai {

using nlohmann::json;

const std::vector<SurveyQuestion>& survey_questions() {
  static const std::vector<SurveyQuestion> q{
      {"fluency", "The agent wrote without grammar or word-choice mistakes."},
      {"coherency", "The conversation flowed in a coherent way."},
      {"on_topic", "The agent stayed on the topic of the sale."},
      {"human_like", "The agent behaved the way a human seller would."},
  };
  return q;
}

Session::Session(std::string id_, ScenarioPtr scenario, std::shared_ptr<const Agent> policy_,
                 bool practice_, std::uint64_t seed)
    : id(std::move(id_)),
      state(std::move(scenario)),
      policy(std::move(policy_)),
      created(std::chrono::system_clock::now()),
      practice(practice_),
      rng(seed) {}

namespace {

ServiceResponse error(int status, std::string message) { return {status, {{"error", std::move(message)}}}; }

json scenario_json(const Scenario& s) {
  json j{{"id", s.id}, {"title", s.title}, {"description", s.description}, {"list_price", s.list_price}};
  if (s.category) j["category"] = *s.category;
  return j;
}

std::optional<double> last_price(const DialogueState& state) {
  for (auto it = state.history.rbegin(); it != state.history.rend(); ++it)
    if (it->price) return it->price;
  return std::nullopt;
}

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json turn_json(const Turn& turn, double list_price) {
  json j{{"role", to_string(turn.role)},
         {"type", to_string(turn.rtype)},
         {"text", render_turn(turn, list_price)},
         {"price", nullptr},
         {"amount", nullptr}};
  if (turn.price) {
    j["price"] = *turn.price;
    j["amount"] = std::round(*turn.price * list_price * 100.0) / 100.0;
  }
  return j;
}

NegotiationService::NegotiationService(ServiceConfig cfg, std::vector<ScenarioPtr> scenarios,
                                       std::shared_ptr<const Agent> default_policy, PolicyLoader loader)
    : cfg_(std::move(cfg)),
      scenarios_(std::move(scenarios)),
      default_policy_(std::move(default_policy)),
      loader_(std::move(loader)),
      rng_(cfg_.seed ? cfg_.seed : std::random_device{}()) {
  if (scenarios_.empty()) throw Error(ErrorCode::InvalidScenario, "service needs at least one scenario");
  if (!default_policy_) throw Error(ErrorCode::Selection, "service needs a default policy");
}

std::string NegotiationService::new_id() {
  std::lock_guard lock(rng_mu_);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                static_cast<unsigned long long>(rng_()));
  return buf;
}

void NegotiationService::append_log(const std::string& path, const json& record) {
  if (path.empty()) return;
  std::lock_guard lock(log_mu_);
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path);
  out << record.dump() << '\n';
}

json NegotiationService::outcome_json(const Session& s) const {
  const EpisodeOutcome& o = *s.outcome;
  json j{{"kind", to_string(o.kind())}, {"price", nullptr}, {"amount", nullptr}};
  if (o.is_deal()) {
    j["price"] = o.price();
    j["amount"] = std::round(o.price() * s.state.scenario->list_price * 100.0) / 100.0;
  }
  return j;
}

void NegotiationService::finish(Session& s, const EpisodeOutcome& outcome) {
  s.outcome = outcome;
  json turns = json::array();
  for (const auto& t : s.state.history) turns.push_back(turn_json(t, s.state.scenario->list_price));
  append_log(cfg_.sessions_log, {{"event", "finished"},
                                 {"session_id", s.id},
                                 {"scenario_id", s.state.scenario->id},
                                 {"practice", s.practice},
                                 {"time", iso_time(std::chrono::system_clock::now())},
                                 {"outcome", outcome_json(s)},
                                 {"turns", turns}});
}

ServiceResponse NegotiationService::create_session(const json& body) {
  if (!body.is_null() && !body.is_object()) return error(400, "request body must be a JSON object");
  const json b = body.is_null() ? json::object() : body;

  ScenarioPtr scenario;
  if (b.contains("scenario_id")) {
    if (!b["scenario_id"].is_string()) return error(400, "scenario_id must be a string");
    const auto wanted = b["scenario_id"].get<std::string>();
    for (const auto& s : scenarios_)
      if (s->id == wanted) scenario = s;
    if (!scenario) return error(404, "unknown scenario '" + wanted + "'");
  } else {
    std::lock_guard lock(rng_mu_);
    scenario = scenarios_[uniform_index(rng_, scenarios_.size())];
  }

  bool practice = false;
  if (b.contains("practice")) {
    if (!b["practice"].is_boolean()) return error(400, "practice must be a boolean");
    practice = b["practice"].get<bool>();
  }

  std::shared_ptr<const Agent> policy = default_policy_;
  if (b.contains("checkpoint")) {
    if (!b["checkpoint"].is_string()) return error(400, "checkpoint must be a string");
    const auto path = b["checkpoint"].get<std::string>();
    std::lock_guard lock(sessions_mu_);
    if (auto it = loaded_.find(path); it != loaded_.end()) {
      policy = it->second;
    } else {
      if (!loader_) return error(500, "this service cannot load checkpoints");
      try {
        policy = loader_(path);
      } catch (const std::exception& e) {
        return error(500, std::string("cannot load checkpoint: ") + e.what());
      }
      loaded_.emplace(path, policy);
    }
  }

  std::uint64_t seed;
  {
    std::lock_guard lock(rng_mu_);
    seed = rng_();
  }
  auto session = std::make_shared<Session>(new_id(), scenario, policy, practice, seed);
  {
    std::lock_guard lock(sessions_mu_);
    sessions_.emplace(session->id, session);
  }
  append_log(cfg_.sessions_log, {{"event", "created"},
                                 {"session_id", session->id},
                                 {"scenario_id", scenario->id},
                                 {"practice", practice},
                                 {"time", iso_time(session->created)}});
  return {201, {{"session_id", session->id}, {"practice", practice}, {"scenario", scenario_json(*scenario)}}};
}

std::shared_ptr<Session> NegotiationService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t NegotiationService::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

ServiceResponse NegotiationService::post_message(const std::string& id, const json& body) {
  auto session = find(id);
  if (!session) return error(404, "unknown session");
  Session& s = *session;
  std::lock_guard lock(s.mu);
  if (s.finished()) return error(409, "this negotiation has ended");
  if (!body.is_object()) return error(400, "request body must be a JSON object");
  const int fields = body.contains("text") + body.contains("offer") + body.contains("decision");
  if (fields != 1) return error(400, "send exactly one of text, offer or decision");

  const double list = s.state.scenario->list_price;
  Turn turn;
  if (body.contains("text")) {
    if (!body["text"].is_string() || body["text"].get<std::string>().empty())
      return error(400, "text must be a non-empty string");
    const MaskedText m = mask_prices(body["text"].get<std::string>(), list, last_price(s.state));
    std::optional<double> price;
    if (!m.prices.empty()) price = m.prices.back();
    turn = Turn::message(Role::Buyer, m.text, price);
  } else if (body.contains("offer")) {
    if (!body["offer"].is_number() || !(body["offer"].get<double>() > 0.0) ||
        !std::isfinite(body["offer"].get<double>()))
      return error(400, "offer must be a positive amount");
    turn = Turn::offer(Role::Buyer, body["offer"].get<double>() / list);
  } else {
    const auto& d = body["decision"];
    if (!d.is_string() || (d != "accept" && d != "reject"))
      return error(400, "decision must be \"accept\" or \"reject\"");
    if (!s.state.can_close(Role::Buyer)) return error(400, "there is no offer from the seller to " + d.get<std::string>());
    turn = d == "accept" ? Turn::accept(Role::Buyer) : Turn::reject(Role::Buyer);
  }

  try {
    s.state = apply_turn(s.state, turn);
  } catch (const Error& e) {
    return error(400, e.what());
  }
  json out{{"buyer_turn", turn_json(turn, list)}, {"agent_turn", nullptr}};

  auto close_if_done = [&] {
    if (s.state.is_terminal()) finish(s, *s.state.terminal);
    else if (s.state.history.size() >= cfg_.max_turns) finish(s, EpisodeOutcome::timed_out());
    if (s.finished()) out["outcome"] = outcome_json(s);
    return s.finished();
  };
  if (close_if_done()) return {200, out};

  Turn reply;
  try {
    reply = s.policy->respond(s.state, s.rng);
    s.state = apply_turn(s.state, reply);
  } catch (const std::exception& e) {
    return error(500, std::string("the agent failed to respond: ") + e.what());
  }
  out["agent_turn"] = turn_json(reply, list);
  close_if_done();
  return {200, out};
}

ServiceResponse NegotiationService::submit_survey(const std::string& id, const json& body) {
  auto session = find(id);
  if (!session) return error(404, "unknown session");
  Session& s = *session;
  std::lock_guard lock(s.mu);
  if (!s.finished()) return error(409, "the negotiation is still in progress");
  if (s.survey) return error(409, "a survey was already submitted for this session");
  if (!body.is_object()) return error(400, "request body must be a JSON object");

  SurveyRatings r;
  int* slots[] = {&r.fluency, &r.coherency, &r.on_topic, &r.human_like};
  const auto& qs = survey_questions();
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto it = body.find(qs[i].key);
    if (it == body.end() || !it->is_number_integer()) return error(400, qs[i].key + " must be an integer from 1 to 5");
    const auto v = it->get<long long>();
    if (v < 1 || v > 5) return error(400, qs[i].key + " must be an integer from 1 to 5");
    *slots[i] = static_cast<int>(v);
  }
  s.survey = r;
  append_log(cfg_.surveys_log, {{"session_id", s.id},
                                {"scenario_id", s.state.scenario->id},
                                {"practice", s.practice},
                                {"time", iso_time(std::chrono::system_clock::now())},
                                {"outcome", outcome_json(s)},
                                {"fluency", r.fluency},
                                {"coherency", r.coherency},
                                {"on_topic", r.on_topic},
                                {"human_like", r.human_like}});
  return {204, nullptr};
}

ServiceResponse NegotiationService::transcript(const std::string& id) const {
  auto session = find(id);
  if (!session) return error(404, "unknown session");
  Session& s = *session;
  std::lock_guard lock(s.mu);
  json turns = json::array();
  for (const auto& t : s.state.history) turns.push_back(turn_json(t, s.state.scenario->list_price));
  json out{{"session_id", s.id},
           {"scenario", scenario_json(*s.state.scenario)},
           {"practice", s.practice},
           {"turns", turns},
           {"finished", s.finished()}};
  if (s.finished()) out["outcome"] = outcome_json(s);
  return {200, out};
}

ServiceResponse NegotiationService::questions() const {
  json items = json::array();
  for (const auto& q : survey_questions())
    items.push_back({{"key", q.key}, {"statement", q.statement}, {"min", 1}, {"max", 5}});
  return {200, {{"questions", items}}};
}

// ---------------------------------------------------------------------------

std::vector<MetricSummary> summarize_surveys(const std::string& log_text, bool include_practice) {
  std::map<std::string, std::vector<double>> values;
  std::istringstream in(log_text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, "survey log line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!include_practice && j.value("practice", false)) continue;
    for (const auto& q : survey_questions()) {
      if (!j.contains(q.key) || !j[q.key].is_number())
        throw Error(ErrorCode::Parse, "survey log line " + std::to_string(lineno) + " lacks " + q.key);
      values[q.key].push_back(j[q.key].get<double>());
    }
  }
  std::vector<MetricSummary> out;
  for (const auto& q : survey_questions()) {
    const auto ms = mean_std(values[q.key]);
    out.push_back({q.key, ms.mean, ms.std, ms.count});
  }
  return out;
}

std::string format_survey_summary(const std::vector<MetricSummary>& rows) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-11s  %s\n", "Metric", "Mean ± Std");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-11s  %.2f ± %.2f\n", r.key.c_str(), r.mean, r.std);
    os << buf;
  }
  os << "sessions: " << (rows.empty() ? 0 : rows.front().count) << "\n";
  return os.str();
}

}  // namespace chai
