#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "chai/dataset.hpp"
#include "chai/offline_rl.hpp"
#include "chai/simenv.hpp"

#include <httplib.h>

namespace chai::test {

inline ScenarioPtr iphone() {
  auto s = std::make_shared<Scenario>();
  s->id = "iphone";
  s->title = "iPhone 5S 16 GB black silver";
  s->description = "Great condition. Comes with charger.";
  s->list_price = 135.0;
  s->category = "phone";
  s->buyer_target = 95.0;
  return s;
}

inline ScenarioPtr bike(double list = 100.0) {
  auto s = std::make_shared<Scenario>();
  s->id = "bike";
  s->title = "Road bike";
  s->description = "Lightly used, new tires.";
  s->list_price = list;
  s->buyer_target = 70.0;
  return s;
}

inline DialogueState play(ScenarioPtr s, const std::vector<Turn>& turns) {
  DialogueState st(std::move(s));
  for (const auto& t : turns) st = apply_turn(st, t);
  return st;
}

/// Buyer opened with 0.74; the seller may accept.
inline DialogueState pending_buyer_offer(ScenarioPtr s = bike()) {
  return play(std::move(s), {Turn::message(Role::Buyer, "hi, is it available?"),
                             Turn::offer(Role::Seller, 1.0),
                             Turn::offer(Role::Buyer, 0.74)});
}

inline std::shared_ptr<const Featurizer> featurizer(std::size_t d = 16) {
  return std::make_shared<Featurizer>(std::make_shared<HashingEmbedder>(d));
}

inline std::shared_ptr<const CandidateGenerator> templates() {
  return std::make_shared<TemplateGenerator>();
}

/// Small synthetic corpus from the scripted seller against the rule-based buyer.
inline Corpus small_corpus(std::size_t dialogues = 40, std::uint64_t seed = 3, double explore = 0.5) {
  const auto scenarios = synthetic_scenarios(8, seed);
  ScriptedSellerConfig cfg;
  cfg.explore_prob = explore;
  ScriptedSeller seller(templates(), cfg);
  const auto buyer = make_buyer("rule-based");
  return generate_synthetic_corpus(scenarios, *buyer.agent, seller, dialogues, seed);
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("chai-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// httplib server on an ephemeral loopback port, stopped on destruction.
class ServerThread {
 public:
  template <class Setup>
  explicit ServerThread(Setup setup) {
    setup(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ServerThread() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  ServerThread(const ServerThread&) = delete;
  ServerThread& operator=(const ServerThread&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace chai::test
