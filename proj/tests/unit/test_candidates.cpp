#include <doctest.h>

#include <set>

#include <algorithm>
#include <json.hpp>

#include "chai/candidates.hpp"
#include "support/fixtures.hpp"

using namespace chai;
using nlohmann::json;

TEST_CASE("template generator phases") {
  TemplateGenerator gen;
  const auto s = chai::test::bike();
  const auto greet = gen.propose(*s, {}, 3, 1);
  REQUIRE(greet.size() == 3);
  const auto& lib = gen.library(DialoguePhase::Greeting);
  for (const auto& t : greet) {
    CHECK_FALSE(t.empty());
    CHECK(std::any_of(lib.begin(), lib.end(), [&](const WeightedTemplate& w) {
      std::string x = w.text;
      if (auto p = x.find("{title}"); p != std::string::npos) x.replace(p, 7, s->title);
      return x == t;
    }));
  }
  CHECK(gen.propose(*s, {}, 5, 42) == gen.propose(*s, {}, 5, 42));

  const auto st = chai::test::pending_buyer_offer();
  CHECK(infer_phase(st.history) == DialoguePhase::Closing);
  bool saw_accept = false;
  for (std::uint64_t seed = 0; seed < 1000 && !saw_accept; ++seed) {
    const auto out = gen.propose(*s, st.history, 5, seed);
    saw_accept = std::find(out.begin(), out.end(), "accept") != out.end();
  }
  CHECK(saw_accept);
  CHECK_THROWS_AS(gen.propose(*s, {}, 0, 1), Error);
}

TEST_CASE("sample_prices") {
  Rng rng(1);
  for (double p : sample_prices(1.0, 1000, rng)) {
    CHECK(p >= 0.7);
    CHECK(p <= 1.0);
  }
  for (double p : sample_prices(0.5, 1000, rng)) {
    CHECK(p >= 0.35);
    CHECK(p <= 0.5);
  }
  const auto many = sample_prices(1.0, 100000, rng);
  double mean = 0;
  for (double p : many) mean += p;
  mean /= static_cast<double>(many.size());
  CHECK(std::abs(mean - 0.85) < 0.005);
  CHECK_THROWS_AS(sample_prices(0.0, 3, rng), Error);
}

TEST_CASE("infer_type") {
  CHECK(infer_type("accept") == ResponseType::Accept);
  CHECK(infer_type("  Accept ") == ResponseType::Accept);
  CHECK(infer_type("reject") == ResponseType::Reject);
  CHECK(infer_type("offer <PRICE>") == ResponseType::Offer);
  CHECK(infer_type("I can do <PRICE>") == ResponseType::Message);
  CHECK(infer_type("hello") == ResponseType::Message);
}

TEST_CASE("enumerate_actions") {
  DialogueState fresh(chai::test::bike());
  const std::vector<double> prices{0.9, 0.8, 0.75, 0.85, 0.95};

  std::vector<std::string> priced(5, "how about <PRICE>?");
  priced[1] = "I can do <PRICE>";
  CHECK(enumerate_actions(priced, prices, fresh).size() == 25);

  const std::vector<std::string> hello{"hello"};
  const auto one = enumerate_actions(hello, prices, fresh);
  REQUIRE(one.size() == 1);
  CHECK_FALSE(one[0].price);

  const std::vector<std::string> acc{"accept"};
  try {
    enumerate_actions(acc, prices, fresh);
    FAIL("expected empty-candidate error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCandidates);
  }

  const auto st = chai::test::pending_buyer_offer();
  const std::vector<std::string> mixed{"accept", "accept", "reject", "offer <PRICE>", "hello", "hello"};
  const auto acts = enumerate_actions(mixed, prices, st);
  // 5 offers + 2 hellos + accept + reject
  CHECK(acts.size() == 9);
  for (const auto& a : acts) {
    if (a.rtype == ResponseType::Offer) CHECK(a.price);
    if (a.rtype == ResponseType::Accept || a.rtype == ResponseType::Reject) CHECK_FALSE(a.price);
    CHECK(st.is_legal(a.to_turn()));
  }
}

TEST_CASE("enumerate_actions size formula on generated sets") {
  TemplateGenerator gen;
  Rng rng(77);
  const auto corpus = chai::test::small_corpus(20, 4);
  const auto trs = extract_transitions(corpus, RewardVariant::Final);
  for (const auto& t : trs) {
    const auto tmpl = gen.propose(*t.state.scenario, t.state.history, 5, rng());
    const auto prices = sample_prices(seller_reference_price(t.state), 5, rng);
    std::size_t priced = 0, plain = 0, closes = 0;
    std::set<ResponseType> seen;
    for (const auto& x : tmpl) {
      const auto ty = infer_type(x);
      if (ty == ResponseType::Accept || ty == ResponseType::Reject) {
        if (t.state.can_close(Role::Seller) && seen.insert(ty).second) ++closes;
      } else if (ty == ResponseType::Offer || x.find("<PRICE>") != std::string::npos) {
        ++priced;
      } else {
        ++plain;
      }
    }
    const std::size_t expected = priced * prices.size() + plain + closes;
    if (expected == 0) {
      CHECK_THROWS_AS(enumerate_actions(tmpl, prices, t.state), Error);
      continue;
    }
    const auto acts = enumerate_actions(tmpl, prices, t.state);
    CHECK(acts.size() == expected);
    for (const auto& a : acts) CHECK(t.state.is_legal(a.to_turn()));
  }
}

TEST_CASE("lm generator client") {
  chai::test::ServerThread server([](httplib::Server& s) {
    s.Post("/complete", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const int n = body["n"];
      CHECK(body["prompt"].get<std::string>().starts_with("Title: "));
      std::vector<std::string> out(static_cast<std::size_t>(n), "I'm asking $135");
      res.set_content(json{{"completions", out}}.dump(), "application/json");
    });
  });
  const auto s = chai::test::iphone();
  LmGenerator lm(server.url());
  const auto got = lm.propose(*s, {}, 5, 0);
  REQUIRE(got.size() == 5);
  CHECK(got[0] == "I'm asking <PRICE>");

  auto fallback = std::make_shared<TemplateGenerator>();
  LmGenerator dead("http://127.0.0.1:1", fallback, std::chrono::milliseconds(200));
  CHECK(dead.propose(*s, {}, 3, 9) == fallback->propose(*s, {}, 3, 9));
  LmGenerator strict("http://127.0.0.1:1", nullptr, std::chrono::milliseconds(200));
  CHECK_THROWS_AS(strict.propose(*s, {}, 3, 9), Error);
}
