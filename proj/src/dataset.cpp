#include "chai/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace chai {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!f) throw Error(ErrorCode::Io, "failed writing " + path);
}

const Scenario& Corpus::scenario(const std::string& id) const {
  auto it = scenarios.find(id);
  if (it == scenarios.end()) throw Error(ErrorCode::Validation, "unknown scenario '" + id + "'");
  return *it->second;
}

std::vector<ScenarioPtr> Corpus::scenario_list() const {
  std::vector<ScenarioPtr> out;
  out.reserve(scenarios.size());
  for (const auto& [id, s] : scenarios) out.push_back(s);
  return out;
}

namespace {

bool same_scenario(const Scenario& a, const Scenario& b) {
  return a.id == b.id && a.title == b.title && a.description == b.description &&
         a.list_price == b.list_price && a.category == b.category && a.buyer_target == b.buyer_target;
}

std::string where(std::size_t dialogue, const std::string& scenario_id) {
  return "dialogue #" + std::to_string(dialogue) + " (scenario '" + scenario_id + "')";
}

std::string line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

double cents(double amount) { return std::round(amount * 100.0) / 100.0; }

Scenario parse_scenario(const json& j, std::size_t index) {
  const std::string ctx = "scenario #" + std::to_string(index);
  if (!j.is_object()) throw Error(ErrorCode::Validation, ctx + ": not an object");
  Scenario s;
  try {
    s.id = j.at("id").get<std::string>();
    s.title = j.at("title").get<std::string>();
    s.description = j.at("description").get<std::string>();
    s.list_price = j.at("list_price").get<double>();
    if (j.contains("category") && !j["category"].is_null())
      s.category = j["category"].get<std::string>();
    if (j.contains("buyer_target") && !j["buyer_target"].is_null())
      s.buyer_target = j["buyer_target"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Validation, ctx + ": " + e.what());
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Validation, ctx + ": " + e.what());
  }
  return s;
}

}  // namespace

bool operator==(const Corpus& a, const Corpus& b) {
  if (a.scenarios.size() != b.scenarios.size()) return false;
  for (const auto& [id, s] : a.scenarios) {
    auto it = b.scenarios.find(id);
    if (it == b.scenarios.end() || !same_scenario(*s, *it->second)) return false;
  }
  if (a.dialogues.size() != b.dialogues.size()) return false;
  for (std::size_t i = 0; i < a.dialogues.size(); ++i) {
    const auto& x = a.dialogues[i];
    const auto& y = b.dialogues[i];
    if (x.scenario_id != y.scenario_id || x.turns != y.turns || !(x.outcome == y.outcome))
      return false;
  }
  return true;
}

DialogueState replay(const Corpus& corpus, std::size_t dialogue_index) {
  const Dialogue& d = corpus.dialogues.at(dialogue_index);
  auto it = corpus.scenarios.find(d.scenario_id);
  if (it == corpus.scenarios.end())
    throw Error(ErrorCode::Validation,
                where(dialogue_index, d.scenario_id) + ": references an unknown scenario");
  DialogueState state(it->second);
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    try {
      state = apply_turn(state, d.turns[t]);
    } catch (const Error& e) {
      throw Error(ErrorCode::Validation,
                  where(dialogue_index, d.scenario_id) + ", turn " + std::to_string(t) + ": " +
                      e.what());
    }
  }
  return state;
}

Corpus parse_corpus(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("scenarios") || !doc["scenarios"].is_array() ||
      !doc.contains("dialogues") || !doc["dialogues"].is_array())
    throw Error(ErrorCode::Validation, "corpus must be an object with scenarios and dialogues arrays");

  Corpus corpus;
  const json& scenarios = doc["scenarios"];
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    Scenario s = parse_scenario(scenarios[i], i);
    const std::string id = s.id;
    if (!corpus.scenarios.emplace(id, std::make_shared<const Scenario>(std::move(s))).second)
      throw Error(ErrorCode::Validation, "duplicate scenario id '" + id + "'");
  }

  const json& dialogues = doc["dialogues"];
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const json& jd = dialogues[i];
    Dialogue d;
    std::string outcome;
    try {
      d.scenario_id = jd.at("scenario_id").get<std::string>();
      outcome = jd.at("outcome").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Validation, "dialogue #" + std::to_string(i) + ": " + e.what());
    }
    auto sit = corpus.scenarios.find(d.scenario_id);
    if (sit == corpus.scenarios.end())
      throw Error(ErrorCode::Validation, where(i, d.scenario_id) + ": references an unknown scenario");
    const Scenario& scenario = *sit->second;
    if (outcome != "accepted" && outcome != "rejected")
      throw Error(ErrorCode::Validation, where(i, d.scenario_id) + ": outcome must be accepted|rejected");

    const json& turns = jd.contains("turns") ? jd["turns"] : json::array();
    if (!turns.is_array()) throw Error(ErrorCode::Validation, where(i, d.scenario_id) + ": turns must be an array");
    std::optional<double> last_price;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      const json& jt = turns[t];
      const std::string ctx = where(i, d.scenario_id) + ", turn " + std::to_string(t);
      Turn turn;
      try {
        turn.role = parse_role(jt.at("role").get<std::string>());
        turn.rtype = parse_response_type(jt.at("type").get<std::string>());
        std::optional<double> explicit_price;
        if (jt.contains("price") && !jt["price"].is_null())
          explicit_price = normalize_price(jt["price"].get<double>(), scenario.list_price);
        const std::string raw = jt.value("text", std::string());
        switch (turn.rtype) {
          case ResponseType::Message: {
            MaskedText m = mask_prices(raw, scenario.list_price, last_price);
            turn.text = std::move(m.text);
            if (turn.has_placeholder())
              turn.price = explicit_price ? explicit_price : std::optional<double>(m.prices.back());
            break;
          }
          case ResponseType::Offer:
            if (!explicit_price) throw Error(ErrorCode::Validation, "offer without a price");
            turn.text = "offer <PRICE>";
            turn.price = explicit_price;
            break;
          case ResponseType::Accept: turn = Turn::accept(turn.role); break;
          case ResponseType::Reject: turn = Turn::reject(turn.role); break;
        }
      } catch (const Error& e) {
        throw Error(ErrorCode::Validation, ctx + ": " + e.what());
      } catch (const json::exception& e) {
        throw Error(ErrorCode::Validation, ctx + ": " + e.what());
      }
      if (turn.price) last_price = turn.price;
      d.turns.push_back(std::move(turn));
    }
    corpus.dialogues.push_back(std::move(d));

    const DialogueState end = replay(corpus, corpus.dialogues.size() - 1);
    Dialogue& stored = corpus.dialogues.back();
    if (outcome == "accepted") {
      if (!end.terminal || !end.terminal->is_deal())
        throw Error(ErrorCode::Validation, where(i, stored.scenario_id) +
                                               ": outcome 'accepted' but the dialogue does not end in an accept");
      stored.outcome = *end.terminal;
    } else {
      if (end.terminal && end.terminal->is_deal())
        throw Error(ErrorCode::Validation, where(i, stored.scenario_id) +
                                               ": outcome 'rejected' but the dialogue ends in an accept");
      stored.outcome = EpisodeOutcome::rejected();
    }
  }
  return corpus;
}

Corpus load_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

json corpus_to_json(const Corpus& corpus) {
  json scenarios = json::array();
  for (const auto& [id, s] : corpus.scenarios) {
    json js = {{"id", s->id},
               {"title", s->title},
               {"description", s->description},
               {"list_price", s->list_price}};
    if (s->category) js["category"] = *s->category;
    if (s->buyer_target) js["buyer_target"] = *s->buyer_target;
    scenarios.push_back(std::move(js));
  }
  json dialogues = json::array();
  for (const Dialogue& d : corpus.dialogues) {
    const Scenario& s = corpus.scenario(d.scenario_id);
    json turns = json::array();
    for (const Turn& t : d.turns) {
      json jt = {{"role", to_string(t.role)}, {"type", to_string(t.rtype)}};
      switch (t.rtype) {
        case ResponseType::Message:
          jt["text"] = t.price ? substitute_price(t.text, *t.price, s.list_price) : t.text;
          break;
        case ResponseType::Offer:
          jt["text"] = render_turn(t, s.list_price);
          jt["price"] = cents(*t.price * s.list_price);
          break;
        default:
          break;
      }
      turns.push_back(std::move(jt));
    }
    dialogues.push_back({{"scenario_id", d.scenario_id},
                         {"turns", std::move(turns)},
                         {"outcome", d.outcome.is_deal() ? "accepted" : "rejected"}});
  }
  return {{"scenarios", std::move(scenarios)}, {"dialogues", std::move(dialogues)}};
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  write_file(path, corpus_to_json(corpus).dump(1) + "\n");
}

// ---------------------------------------------------------------------------

std::vector<Transition> extract_transitions(const Corpus& corpus, RewardVariant variant,
                                            const RewardParams& params) {
  std::vector<Transition> out;
  for (std::size_t di = 0; di < corpus.dialogues.size(); ++di) {
    const Dialogue& d = corpus.dialogues[di];
    auto sit = corpus.scenarios.find(d.scenario_id);
    if (sit == corpus.scenarios.end())
      throw Error(ErrorCode::Validation, where(di, d.scenario_id) + ": references an unknown scenario");
    const double reward =
        compute_reward(d.outcome, variant, sit->second->fair_midpoint(), params);

    DialogueState state(sit->second);
    std::size_t t = 0;
    while (t < d.turns.size() && d.turns[t].role != Role::Seller) state = apply_turn(state, d.turns[t++]);
    std::size_t seller_index = 0;
    while (t < d.turns.size()) {
      Transition tr{std::to_string(di) + ":" + std::to_string(seller_index++), state, d.turns[t],
                    0.0, state, false};
      DialogueState next = apply_turn(state, d.turns[t++]);
      while (t < d.turns.size() && d.turns[t].role != Role::Seller) next = apply_turn(next, d.turns[t++]);
      tr.terminal = next.is_terminal() || t >= d.turns.size();
      tr.reward = tr.terminal ? reward : 0.0;
      tr.next_state = next;
      state = std::move(next);
      out.push_back(std::move(tr));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>* CandidateCache::find(const std::string& id) const {
  auto it = entries.find(id);
  return it == entries.end() ? nullptr : &it->second;
}

CandidateCache build_candidate_cache(std::span<const Transition> transitions,
                                     const CandidateGenerator& generator, std::size_t k,
                                     std::uint64_t seed) {
  if (k == 0) throw Error(ErrorCode::Cache, "k must be at least 1");
  CandidateCache cache;
  cache.k = k;
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const Transition& tr = transitions[i];
    std::vector<std::string> templates;
    try {
      templates = generator.propose(*tr.state.scenario, tr.state.history, k, derive_seed(seed, i));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::Cache, "generator failed for transition " + tr.id + ": " + e.what());
    }
    if (templates.size() != k)
      throw Error(ErrorCode::Cache, "generator returned " + std::to_string(templates.size()) +
                                        " templates for transition " + tr.id);
    cache.entries.emplace(tr.id, std::move(templates));
  }
  return cache;
}

void validate_cache(const CandidateCache& cache, std::span<const Transition> transitions) {
  std::map<std::string, bool> known;
  for (const auto& t : transitions) known.emplace(t.id, true);
  for (const auto& [id, templates] : cache.entries) {
    if (!known.count(id)) throw Error(ErrorCode::Cache, "cache key " + id + " is not a transition");
    if (templates.size() != cache.k)
      throw Error(ErrorCode::Cache, "cache entry " + id + " has " + std::to_string(templates.size()) +
                                        " templates, expected " + std::to_string(cache.k));
  }
}

std::string cache_to_jsonl(const CandidateCache& cache) {
  std::string out;
  for (const auto& [id, templates] : cache.entries) {
    out += json{{"id", id}, {"templates", templates}}.dump();
    out += '\n';
  }
  return out;
}

CandidateCache cache_from_jsonl(std::string_view text) {
  CandidateCache cache;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      json j = json::parse(line);
      auto templates = j.at("templates").get<std::vector<std::string>>();
      if (cache.k == 0) cache.k = templates.size();
      if (templates.size() != cache.k)
        throw Error(ErrorCode::Cache, "inconsistent template count");
      cache.entries[j.at("id").get<std::string>()] = std::move(templates);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Cache, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::Cache, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cache;
}

void save_cache(const CandidateCache& cache, const std::string& path) {
  write_file(path, cache_to_jsonl(cache));
}

CandidateCache load_cache(const std::string& path) { return cache_from_jsonl(read_file(path)); }

}  // namespace chai
