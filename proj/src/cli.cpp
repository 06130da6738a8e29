#include "chai/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "chai/experiments.hpp"
#include "chai/http.hpp"

namespace chai {

using nlohmann::json;

namespace {

const std::vector<std::string> kVariants{"prop", "cql", "brac"};
const std::vector<std::string> kRewards{"final", "penalty", "accept", "utility", "fair"};
const std::vector<std::string> kBuyers{"rule-based", "stingy", "always-accept"};

struct ModelOptions {
  std::size_t embed_dim = 128;
  std::string embed_endpoint;
  std::string lm_endpoint;
  bool fallback = false;

  void add(CLI::App& app) {
    app.add_option("--embed-dim", embed_dim, "Embedding width")->check(CLI::PositiveNumber);
    app.add_option("--embed-endpoint", embed_endpoint, "Embedding service base URL (default: hashing embedder)");
    app.add_option("--lm-endpoint", lm_endpoint, "Completion service base URL (default: template generator)");
    app.add_flag("--fallback", fallback, "Fall back to local models when a service is unreachable");
  }

  std::shared_ptr<const Featurizer> featurizer() const {
    std::shared_ptr<const EmbeddingProvider> local = std::make_shared<HashingEmbedder>(embed_dim);
    if (embed_endpoint.empty()) return std::make_shared<Featurizer>(local);
    return std::make_shared<Featurizer>(
        std::make_shared<ExternalEmbeddingClient>(embed_endpoint, embed_dim, fallback ? local : nullptr));
  }

  std::shared_ptr<const CandidateGenerator> generator() const {
    std::shared_ptr<const CandidateGenerator> local = std::make_shared<TemplateGenerator>();
    if (lm_endpoint.empty()) return local;
    return std::make_shared<LmGenerator>(lm_endpoint, fallback ? local : nullptr);
  }
};

struct TrainOptions {
  std::string corpus, out, metrics, cache;
  std::string variant = "prop", reward = "final";
  TrainerConfig cfg;
  std::size_t steps = 5000;

  void add(CLI::App& app) {
    app.add_option("--corpus", corpus, "Corpus JSON")->required()->check(CLI::ExistingFile);
    app.add_option("--variant", variant, "prop | cql | brac")->check(CLI::IsMember(kVariants));
    app.add_option("--reward", reward, "final | penalty | accept | utility | fair")->check(CLI::IsMember(kRewards));
    app.add_option("--alpha", cfg.alpha, "CQL weight")->check(CLI::NonNegativeNumber);
    app.add_option("--gamma", cfg.gamma, "Discount")->check(CLI::Range(0.0, 1.0));
    app.add_option("--tau", cfg.tau, "Target network update rate")->check(CLI::Range(1e-12, 1.0));
    app.add_option("--lr", cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app.add_option("--batch", cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
    app.add_option("--hidden", cfg.hidden, "Critic hidden width")->check(CLI::PositiveNumber);
    app.add_option("--steps", steps, "Gradient steps")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", cfg.seed, "Random seed");
    app.add_option("--cache-k", cfg.cache_k, "Templates cached per transition")->check(CLI::PositiveNumber);
    app.add_option("--cache", cache, "Candidate cache (read if present, written otherwise)");
  }

  TrainerConfig config() const {
    TrainerConfig c = cfg;
    c.variant = parse_trainer_variant(variant);
    c.reward = parse_reward_variant(reward);
    return c;
  }
};

std::vector<NamedAgent> parse_buyers(const std::string& list) {
  std::vector<NamedAgent> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ','))
    if (!name.empty()) out.push_back(make_buyer(name));
  if (out.empty()) throw Error(ErrorCode::Parse, "no buyers given");
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  return f;
}

int cmd_train(const TrainOptions& o, const ModelOptions& m, const std::string& out_path,
              const std::string& metrics_path, std::ostream& out) {
  const Corpus corpus = load_corpus(o.corpus);
  const auto generator = m.generator();
  const auto featurizer = m.featurizer();
  const TrainerConfig cfg = o.config();

  std::optional<CandidateCache> cache;
  if (!o.cache.empty() && std::filesystem::exists(o.cache)) cache = load_cache(o.cache);
  Trainer trainer = make_trainer(corpus, generator, featurizer, cfg, cache ? &*cache : nullptr);
  if (!o.cache.empty() && !cache) save_cache(trainer.cache(), o.cache);

  std::optional<std::ofstream> metrics;
  if (!metrics_path.empty()) metrics = open_out(metrics_path);
  trainer.run(o.steps, metrics ? &*metrics : nullptr);
  write_checkpoint_file(out_path, trainer.checkpoint());
  out << "trained " << to_string(cfg.variant) << " (" << to_string(cfg.reward) << " reward) for " << o.steps
      << " steps on " << trainer.transitions().size() << " transitions; checkpoint: " << out_path << "\n";
  return 0;
}

struct EvalOptions {
  std::string checkpoint, corpus, seller = "critic", buyers = "rule-based,stingy,always-accept";
  std::string reward = "final", json_path, dump;
  std::size_t episodes = 200, max_turns = kDefaultMaxTurns;
  std::uint64_t seed = 0;
  DecodeConfig decode;
};

std::shared_ptr<const Agent> make_seller(const EvalOptions& o, const ModelOptions& m) {
  if (o.seller == "list-price") return std::make_shared<ListPriceSeller>();
  if (o.seller == "random") return std::make_shared<RandomSeller>(m.generator(), o.decode.n_utterances, o.decode.n_prices);
  if (o.checkpoint.empty()) throw Error(ErrorCode::Checkpoint, "--checkpoint is required for the critic seller");
  return load_policy(o.checkpoint, m.generator(), m.featurizer(), o.decode);
}

int cmd_eval(const EvalOptions& o, const ModelOptions& m, std::ostream& out) {
  const auto seller = make_seller(o, m);
  const Corpus corpus = load_corpus(o.corpus);
  const auto buyers = parse_buyers(o.buyers);
  const auto scenarios = corpus.scenario_list();
  const EvalReport report =
      evaluate(*seller, buyers, scenarios, o.episodes, parse_reward_variant(o.reward), o.seed, o.max_turns);
  out << report.table();
  if (!o.json_path.empty()) open_out(o.json_path) << report.to_json().dump(2) << "\n";
  if (!o.dump.empty()) open_out(o.dump) << report.episodes_jsonl();
  return 0;
}

struct AblateOptions {
  std::string buyer = "rule-based", json_path, dump, rewards;
  std::size_t episodes = 200;
  std::uint64_t eval_seed = 0;
};

int cmd_ablate(const TrainOptions& t, const AblateOptions& a, const ModelOptions& m, std::ostream& out) {
  const Corpus corpus = load_corpus(t.corpus);
  AblationConfig cfg;
  cfg.trainer = t.config();
  cfg.steps = t.steps;
  cfg.episodes = a.episodes;
  cfg.eval_seed = a.eval_seed;
  if (!a.rewards.empty()) {
    cfg.variants.clear();
    std::stringstream ss(a.rewards);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty()) cfg.variants.push_back(parse_reward_variant(name));
  }
  const AblationReport report = run_ablation(corpus, make_buyer(a.buyer), cfg, m.generator(), m.featurizer());
  out << report.table();
  if (!a.json_path.empty()) open_out(a.json_path) << report.to_json().dump(2) << "\n";
  if (!a.dump.empty()) {
    auto f = open_out(a.dump);
    for (const auto& row : report.rows)
      for (const auto& e : row.episodes) {
        json j = to_json(e);
        j["reward_variant"] = to_string(row.reward);
        f << j.dump() << "\n";
      }
  }
  return 0;
}

struct ServeOptions {
  std::string checkpoint, corpus, host = "127.0.0.1", static_dir;
  std::string sessions_log = "sessions.log", surveys_log = "surveys.log";
  int port = 8080;
  std::uint64_t seed = 0;
  std::string scenario;
  bool survey = false;
  DecodeConfig decode;
};

NegotiationService make_service(const ServeOptions& o, const ModelOptions& m) {
  const auto generator = m.generator();
  const auto featurizer = m.featurizer();
  auto policy = load_policy(o.checkpoint, generator, featurizer, o.decode);
  const Corpus corpus = load_corpus(o.corpus);
  ServiceConfig cfg{o.sessions_log, o.surveys_log, 40, o.seed};
  const DecodeConfig decode = o.decode;
  return NegotiationService(cfg, corpus.scenario_list(), policy, [=](const std::string& path) {
    return std::shared_ptr<const Agent>(load_policy(path, generator, featurizer, decode));
  });
}

int cmd_serve(const ServeOptions& o, const ModelOptions& m, std::ostream& out) {
  NegotiationService service = make_service(o, m);
  httplib::Server server;
  register_routes(server, service, o.static_dir);
  out << "listening on http://" << o.host << ":" << o.port << std::endl;
  if (!server.listen(o.host, o.port)) throw Error(ErrorCode::Io, "cannot listen on " + o.host + ":" + std::to_string(o.port));
  return 0;
}

void print_turn(std::ostream& out, const json& t) {
  out << (t["role"] == "buyer" ? "Buyer: " : "Seller: ") << t["text"].get<std::string>() << "\n";
}

int cmd_chat(const ServeOptions& o, const ModelOptions& m, std::istream& in, std::ostream& out) {
  NegotiationService service = make_service(o, m);
  json create = json::object();
  if (!o.scenario.empty()) create["scenario_id"] = o.scenario;
  const ServiceResponse created = service.create_session(create);
  if (created.status != 201) throw Error(ErrorCode::InvalidScenario, created.body.value("error", "cannot start"));
  const std::string id = created.body["session_id"];
  const json& sc = created.body["scenario"];
  out << sc["title"].get<std::string>() << " (" << format_currency(sc["list_price"].get<double>()) << ")\n"
      << sc["description"].get<std::string>() << "\n"
      << "You are the buyer. Type a message, /offer AMOUNT, /accept, /reject or /quit.\n";

  std::string line;
  bool finished = false;
  while (!finished && out << "> " && std::getline(in, line)) {
    if (line.empty()) continue;
    json body;
    if (line == "/quit") break;
    if (line == "/accept" || line == "/reject") {
      body = {{"decision", line.substr(1)}};
    } else if (line.rfind("/offer", 0) == 0) {
      try {
        body = {{"offer", std::stod(line.substr(6))}};
      } catch (const std::exception&) {
        out << "usage: /offer AMOUNT\n";
        continue;
      }
    } else {
      body = {{"text", line}};
    }
    const ServiceResponse r = service.post_message(id, body);
    if (r.status != 200) {
      out << r.body.value("error", "request failed") << "\n";
      continue;
    }
    if (!r.body["agent_turn"].is_null()) print_turn(out, r.body["agent_turn"]);
    if (r.body.contains("outcome")) {
      const json& oc = r.body["outcome"];
      out << "Outcome: " << oc["kind"].get<std::string>();
      if (!oc["amount"].is_null()) out << " at " << format_currency(oc["amount"].get<double>());
      out << "\n";
      finished = true;
    }
  }
  if (finished && o.survey) {
    json ratings = json::object();
    for (const auto& q : survey_questions()) {
      int v = 0;
      while (v < 1 || v > 5) {
        out << q.statement << " (1-5): ";
        if (!std::getline(in, line)) return 0;
        try {
          v = std::stoi(line);
        } catch (const std::exception&) {
          v = 0;
        }
      }
      ratings[q.key] = v;
    }
    service.submit_survey(id, ratings);
    out << "Thanks!\n";
  }
  return 0;
}

struct GenerateOptions {
  std::string out, buyer = "rule-based";
  std::size_t dialogues = 1000, scenarios = 48, max_turns = kDefaultMaxTurns;
  std::uint64_t seed = 7, scenario_seed = 1;
  double explore = 0.5;
};

int cmd_generate(const GenerateOptions& o, const ModelOptions& m, std::ostream& out) {
  const auto scenarios = synthetic_scenarios(o.scenarios, o.scenario_seed);
  ScriptedSellerConfig sc;
  sc.explore_prob = o.explore;
  const ScriptedSeller seller(m.generator(), sc);
  const NamedAgent buyer = make_buyer(o.buyer);
  const Corpus corpus = generate_synthetic_corpus(scenarios, *buyer.agent, seller, o.dialogues, o.seed, o.max_turns);
  save_corpus(corpus, o.out);
  std::size_t deals = 0;
  for (const auto& d : corpus.dialogues) deals += d.outcome.is_deal();
  out << "wrote " << corpus.dialogues.size() << " dialogues over " << corpus.scenarios.size() << " scenarios ("
      << deals << " deals) to " << o.out << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline Q-learning negotiation agents over proposed candidate utterances", "chai"};
  app.require_subcommand(1);
  ModelOptions model;

  TrainOptions train;
  std::string train_out, train_metrics;
  auto* train_cmd = app.add_subcommand("train", "Train a critic on a corpus");
  train.add(*train_cmd);
  model.add(*train_cmd);
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--metrics", train_metrics, "JSON-lines metrics path");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a seller against scripted buyers");
  model.add(*eval_cmd);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Critic checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--corpus", ev.corpus, "Corpus providing the scenarios")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--seller", ev.seller, "critic | list-price | random")
      ->check(CLI::IsMember({"critic", "list-price", "random"}));
  eval_cmd->add_option("--buyers", ev.buyers, "Comma-separated: rule-based, stingy, always-accept");
  eval_cmd->add_option("--episodes", ev.episodes, "Episodes per buyer")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-turns", ev.max_turns, "Turn limit per episode")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed, "Evaluation seed");
  eval_cmd->add_option("--reward", ev.reward, "Reward variant for the reward column")->check(CLI::IsMember(kRewards));
  eval_cmd->add_option("--temperature", ev.decode.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--greedy", ev.decode.greedy, "Pick the highest-scoring candidate");
  eval_cmd->add_option("--json", ev.json_path, "Write the report as JSON");
  eval_cmd->add_option("--dump", ev.dump, "Write one JSON line per episode");

  TrainOptions ab_train;
  AblateOptions ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate one agent per reward variant");
  ab_train.add(*ablate_cmd);
  model.add(*ablate_cmd);
  ablate_cmd->add_option("--buyer", ab.buyer, "Evaluation buyer")->check(CLI::IsMember(kBuyers));
  ablate_cmd->add_option("--episodes", ab.episodes, "Evaluation episodes per variant")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--eval-seed", ab.eval_seed, "Evaluation seed");
  ablate_cmd->add_option("--rewards", ab.rewards, "Comma-separated subset of reward variants");
  ablate_cmd->add_option("--json", ab.json_path, "Write the table as JSON");
  ablate_cmd->add_option("--dump", ab.dump, "Write one JSON line per evaluation episode");

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Host live negotiation sessions over HTTP");
  model.add(*serve_cmd);
  serve_cmd->add_option("--checkpoint", serve.checkpoint, "Default critic checkpoint")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--corpus", serve.corpus, "Corpus providing the scenarios")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--port", serve.port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--static", serve.static_dir, "Directory of web assets served at /");
  serve_cmd->add_option("--sessions-log", serve.sessions_log, "Session log (JSON lines)");
  serve_cmd->add_option("--surveys-log", serve.surveys_log, "Survey log (JSON lines)");
  serve_cmd->add_option("--seed", serve.seed, "Seed for scenario sampling and decoding (0 = random)");
  serve_cmd->add_option("--temperature", serve.decode.temperature, "Softmax temperature")->check(CLI::PositiveNumber);

  ServeOptions chat;
  chat.sessions_log.clear();
  chat.surveys_log.clear();
  auto* chat_cmd = app.add_subcommand("chat", "Negotiate against an agent in the terminal");
  model.add(*chat_cmd);
  chat_cmd->add_option("--checkpoint", chat.checkpoint, "Critic checkpoint")->required()->check(CLI::ExistingFile);
  chat_cmd->add_option("--corpus", chat.corpus, "Corpus providing the scenarios")->required()->check(CLI::ExistingFile);
  chat_cmd->add_option("--scenario", chat.scenario, "Scenario id (default: random)");
  chat_cmd->add_option("--seed", chat.seed, "Seed (0 = random)");
  chat_cmd->add_option("--temperature", chat.decode.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
  chat_cmd->add_option("--sessions-log", chat.sessions_log, "Session log (JSON lines)");
  chat_cmd->add_option("--surveys-log", chat.surveys_log, "Survey log (JSON lines)");
  chat_cmd->add_flag("--survey", chat.survey, "Ask the four survey questions afterwards");

  GenerateOptions gen;
  auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic corpus");
  model.add(*gen_cmd);
  gen_cmd->add_option("--out", gen.out, "Corpus path")->required();
  gen_cmd->add_option("--dialogues", gen.dialogues, "Number of dialogues")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--scenarios", gen.scenarios, "Number of scenarios")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--buyer", gen.buyer, "Buyer simulator")->check(CLI::IsMember(kBuyers));
  gen_cmd->add_option("--explore", gen.explore, "Probability the scripted seller picks a random candidate")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--max-turns", gen.max_turns, "Turn limit per dialogue")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Dialogue seed");
  gen_cmd->add_option("--scenario-seed", gen.scenario_seed, "Scenario catalog seed");

  std::string survey_log;
  bool include_practice = false;
  auto* survey_cmd = app.add_subcommand("survey-summary", "Mean and std of each survey item");
  survey_cmd->add_option("--log", survey_log, "surveys.log")->required()->check(CLI::ExistingFile);
  survey_cmd->add_flag("--include-practice", include_practice, "Count practice sessions too");

  std::vector<const char*> argv{"chai"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(train, model, train_out, train_metrics, out);
    if (*eval_cmd) return cmd_eval(ev, model, out);
    if (*ablate_cmd) return cmd_ablate(ab_train, ab, model, out);
    if (*serve_cmd) return cmd_serve(serve, model, out);
    if (*chat_cmd) return cmd_chat(chat, model, in, out);
    if (*gen_cmd) return cmd_generate(gen, model, out);
    if (*survey_cmd) {
      out << format_survey_summary(summarize_surveys(read_file(survey_log), include_practice));
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace chai
