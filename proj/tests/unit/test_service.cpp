#include <doctest.h>

#include <set>
#include <sstream>

#include <json.hpp>

#include "chai/service.hpp"
#include "support/fixtures.hpp"

using namespace chai;
using nlohmann::json;

namespace {

/// Seller fixture: greets, then offers 0.8 and repeats it.
class OfferingSeller final : public Agent {
 public:
  Role role() const override { return Role::Seller; }
  Turn respond(const DialogueState& state, Rng&) const override {
    bool offered = false;
    for (const auto& t : state.history) offered = offered || (t.role == Role::Seller && t.rtype == ResponseType::Offer);
    if (!offered && state.history.size() < 2) return Turn::message(Role::Seller, "Hi! It is in great shape.");
    return Turn::offer(Role::Seller, 0.8);
  }
};

struct Fixture {
  chai::test::TempDir dir;
  std::shared_ptr<NegotiationService> service;

  explicit Fixture(std::shared_ptr<const Agent> policy = std::make_shared<OfferingSeller>(),
                   PolicyLoader loader = {}, std::size_t max_turns = 40) {
    ServiceConfig cfg{dir.file("sessions.log"), dir.file("surveys.log"), max_turns, 42};
    service = std::make_shared<NegotiationService>(
        cfg, std::vector<ScenarioPtr>{chai::test::bike(), chai::test::iphone()}, policy, loader);
  }
  std::string create(json body = json::object()) {
    const auto r = service->create_session(body);
    REQUIRE(r.status == 201);
    return r.body["session_id"];
  }
  std::vector<json> log(const std::string& name) const {
    std::vector<json> out;
    std::istringstream in(read_file(dir.file(name)));
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
  }
};

}  // namespace

TEST_CASE("create_session") {
  Fixture f;
  const auto r = f.service->create_session(json::object());
  CHECK(r.status == 201);
  CHECK(r.body["session_id"].get<std::string>().size() == 32);
  CHECK(r.body["scenario"].contains("title"));
  CHECK(r.body["scenario"].contains("list_price"));
  CHECK(r.body["scenario"].contains("description"));

  CHECK(f.create() != f.create());
  CHECK(f.service->create_session({{"scenario_id", "moon"}}).status == 404);
  CHECK(f.service->create_session({{"scenario_id", 5}}).status == 400);
  CHECK(f.service->create_session({{"practice", "yes"}}).status == 400);
  CHECK(f.service->create_session({{"checkpoint", "/nope"}}).status == 500);

  const auto chosen = f.service->create_session({{"scenario_id", "iphone"}, {"practice", true}});
  CHECK(chosen.body["scenario"]["id"] == "iphone");
  CHECK(chosen.body["practice"] == true);

  std::set<std::string> seen;
  for (int i = 0; i < 40; ++i) seen.insert(f.service->create_session({}).body["scenario"]["id"]);
  CHECK(seen.size() == 2);

  const auto created = f.log("sessions.log");
  CHECK(created.size() == f.service->session_count());
  CHECK(created.back()["event"] == "created");
}

TEST_CASE("checkpoint loader is used and cached") {
  int loads = 0;
  Fixture f(std::make_shared<OfferingSeller>(), [&](const std::string& path) -> std::shared_ptr<const Agent> {
    ++loads;
    if (path == "bad") throw Error(ErrorCode::Checkpoint, "corrupt");
    return std::make_shared<ListPriceSeller>();
  });
  CHECK(f.service->create_session({{"checkpoint", "good"}}).status == 201);
  CHECK(f.service->create_session({{"checkpoint", "good"}}).status == 201);
  CHECK(loads == 1);
  const auto bad = f.service->create_session({{"checkpoint", "bad"}});
  CHECK(bad.status == 500);
  CHECK(bad.body["error"].get<std::string>().find("corrupt") != std::string::npos);
}

TEST_CASE("post_message") {
  Fixture f;
  const auto id = f.create({{"scenario_id", "bike"}});

  SUBCASE("greeting gets a message back") {
    const auto r = f.service->post_message(id, {{"text", "hi"}});
    CHECK(r.status == 200);
    CHECK(r.body["buyer_turn"]["type"] == "message");
    CHECK(r.body["agent_turn"]["type"] == "message");
    CHECK_FALSE(r.body.contains("outcome"));
  }
  SUBCASE("accepting the agent's offer closes the deal") {
    f.service->post_message(id, {{"text", "hi"}});
    const auto o = f.service->post_message(id, {{"offer", 60}});
    CHECK(o.body["buyer_turn"]["price"] == doctest::Approx(0.6));
    CHECK(o.body["agent_turn"]["type"] == "offer");
    CHECK(o.body["agent_turn"]["amount"] == doctest::Approx(80.0));
    const auto a = f.service->post_message(id, {{"decision", "accept"}});
    CHECK(a.status == 200);
    CHECK(a.body["agent_turn"].is_null());
    CHECK(a.body["outcome"]["kind"] == "accepted");
    CHECK(a.body["outcome"]["price"] == doctest::Approx(0.8));
    CHECK(f.service->post_message(id, {{"text", "still there?"}}).status == 409);
    CHECK(f.log("sessions.log").back()["event"] == "finished");
  }
  SUBCASE("decisions need an outstanding agent offer") {
    CHECK(f.service->post_message(id, {{"decision", "accept"}}).status == 400);
    CHECK(f.service->post_message(id, {{"decision", "maybe"}}).status == 400);
  }
  SUBCASE("malformed bodies") {
    CHECK(f.service->post_message(id, json::object()).status == 400);
    CHECK(f.service->post_message(id, {{"text", "a"}, {"offer", 3}}).status == 400);
    CHECK(f.service->post_message(id, {{"text", ""}}).status == 400);
    CHECK(f.service->post_message(id, {{"offer", -3}}).status == 400);
    CHECK(f.service->post_message(id, {{"offer", "ten"}}).status == 400);
    CHECK(f.service->post_message(id, json::array()).status == 400);
  }
  SUBCASE("unknown session") {
    CHECK(f.service->post_message("nope", {{"text", "hi"}}).status == 404);
    CHECK(f.service->transcript("nope").status == 404);
    CHECK(f.service->submit_survey("nope", json::object()).status == 404);
  }
  SUBCASE("prices typed in text are masked") {
    const auto r = f.service->post_message(id, {{"text", "would you take $75?"}});
    CHECK(r.body["buyer_turn"]["price"] == doctest::Approx(0.75));
    CHECK(r.body["buyer_turn"]["text"] == "would you take $75.00?");
    CHECK(f.service->find(id)->state.history[0].text == "would you take <PRICE>?");
  }
}

TEST_CASE("turn cap and agent failures") {
  Fixture capped(std::make_shared<OfferingSeller>(), {}, 4);
  const auto id = capped.create();
  capped.service->post_message(id, {{"text", "hi"}});
  const auto r = capped.service->post_message(id, {{"text", "hmm"}});
  CHECK(r.body["outcome"]["kind"] == "timed_out");

  struct Broken final : Agent {
    Role role() const override { return Role::Seller; }
    Turn respond(const DialogueState&, Rng&) const override { throw Error(ErrorCode::EmptyCandidates, "none"); }
  };
  Fixture broken(std::make_shared<Broken>());
  const auto b = broken.create();
  const auto e = broken.service->post_message(b, {{"text", "hi"}});
  CHECK(e.status == 500);
  CHECK(e.body.contains("error"));
}

TEST_CASE("transcript") {
  Fixture f;
  const auto id = f.create({{"scenario_id", "bike"}});
  auto t = f.service->transcript(id);
  CHECK(t.status == 200);
  CHECK(t.body["turns"].empty());
  CHECK(t.body["finished"] == false);
  f.service->post_message(id, {{"text", "hi"}});
  f.service->post_message(id, {{"offer", 50}});
  t = f.service->transcript(id);
  REQUIRE(t.body["turns"].size() == 4);
  CHECK(t.body["turns"][0]["role"] == "buyer");
  CHECK(t.body["turns"][1]["role"] == "seller");
  CHECK(t.body["turns"][2]["text"] == "offer $50.00");
  CHECK(t.body["turns"][3]["text"] == "offer $80.00");
  f.service->post_message(id, {{"decision", "reject"}});
  t = f.service->transcript(id);
  CHECK(t.body["finished"] == true);
  CHECK(t.body["outcome"]["kind"] == "rejected");
}

TEST_CASE("surveys") {
  Fixture f;
  const auto id = f.create({{"scenario_id", "bike"}});
  const json ratings{{"fluency", 5}, {"coherency", 4}, {"on_topic", 4}, {"human_like", 3}};
  CHECK(f.service->submit_survey(id, ratings).status == 409);
  f.service->post_message(id, {{"text", "hi"}});
  f.service->post_message(id, {{"offer", 50}});
  f.service->post_message(id, {{"decision", "accept"}});

  auto bad = ratings;
  bad["human_like"] = 6;
  CHECK(f.service->submit_survey(id, bad).status == 400);
  bad["human_like"] = 2.5;
  CHECK(f.service->submit_survey(id, bad).status == 400);
  bad.erase("human_like");
  CHECK(f.service->submit_survey(id, bad).status == 400);

  CHECK(f.service->submit_survey(id, ratings).status == 204);
  CHECK(f.service->submit_survey(id, ratings).status == 409);
  const auto log = f.log("surveys.log");
  REQUIRE(log.size() == 1);
  CHECK(log[0]["session_id"] == id);
  CHECK(log[0]["fluency"] == 5);
  CHECK(log[0]["human_like"] == 3);
  CHECK(log[0]["outcome"]["kind"] == "accepted");

  const auto qs = f.service->questions();
  CHECK(qs.body["questions"].size() == 4);
}

TEST_CASE("survey summary") {
  std::string log;
  const int fl[] = {5, 3, 4, 4};
  for (int i = 0; i < 4; ++i)
    log += json{{"session_id", std::to_string(i)}, {"practice", false}, {"fluency", fl[i]}, {"coherency", 4},
                {"on_topic", 5}, {"human_like", 2}}.dump() + "\n";
  log += json{{"session_id", "p"}, {"practice", true}, {"fluency", 1}, {"coherency", 1}, {"on_topic", 1},
              {"human_like", 1}}.dump() + "\n";
  const auto rows = summarize_surveys(log);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].key == "fluency");
  CHECK(rows[0].count == 4);
  CHECK(rows[0].mean == doctest::Approx(4.0));
  CHECK(rows[0].std == doctest::Approx(std::sqrt(0.5)));
  CHECK(summarize_surveys(log, true)[0].count == 5);
  const auto text = format_survey_summary(rows);
  CHECK(text.find("4.00 ± 0.71") != std::string::npos);
}

TEST_CASE("random request sequences keep sessions consistent") {
  Fixture f(std::make_shared<RandomSeller>(chai::test::templates()));
  Rng rng(12);
  std::vector<std::string> ids;
  for (int i = 0; i < 400; ++i) {
    if (ids.empty() || uniform01(rng) < 0.1) ids.push_back(f.create());
    const auto& id = ids[uniform_index(rng, ids.size())];
    json body;
    switch (uniform_index(rng, 7)) {
      case 0: body = {{"text", "hello"}}; break;
      case 1: body = {{"text", "what about $" + std::to_string(40 + uniform_index(rng, 80))}}; break;
      case 2: body = {{"offer", 20.0 + 100 * uniform01(rng)}}; break;
      case 3: body = {{"decision", "accept"}}; break;
      case 4: body = {{"decision", "reject"}}; break;
      case 5: body = {{"offer", -1}}; break;
      default: body = {{"text", "x"}, {"decision", "accept"}}; break;
    }
    const auto r = f.service->post_message(id, body);
    CHECK((r.status == 200 || r.status == 400 || r.status == 409));
    const auto s = f.service->find(id);
    CHECK_NOTHROW(s->state.check_invariants());
    CHECK(s->finished() == (s->state.is_terminal() || s->state.history.size() >= 40));
  }
}
