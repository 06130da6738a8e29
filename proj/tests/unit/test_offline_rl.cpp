#include <doctest.h>

#include <map>
#include <set>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "chai/offline_rl.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace chai;

namespace {

struct Setup {
  std::shared_ptr<const CandidateGenerator> gen = chai::test::templates();
  std::shared_ptr<const Featurizer> fz = chai::test::featurizer(16);
  Corpus corpus;
  std::vector<Transition> transitions;
  CandidateCache cache;

  explicit Setup(std::size_t dialogues = 30, std::uint64_t seed = 2, RewardVariant r = RewardVariant::Final)
      : corpus(chai::test::small_corpus(dialogues, seed)),
        transitions(extract_transitions(corpus, r)),
        cache(build_candidate_cache(transitions, *gen, 5, seed)) {}

  TargetContext ctx() const { return {&cache, gen.get(), fz.get()}; }
  std::vector<const Transition*> all() const {
    std::vector<const Transition*> out;
    for (const auto& t : transitions) out.push_back(&t);
    return out;
  }
  const Transition& first(bool terminal) const {
    for (const auto& t : transitions)
      if (t.terminal == terminal) return t;
    throw std::logic_error("no such transition");
  }
};

/// Seller turn quoting `cur` after having quoted `prev`.
Transition priced_pair(double prev, double cur) {
  Transition t{"0:0", DialogueState(chai::test::bike()), Turn::offer(Role::Seller, cur), 0.0,
               DialogueState(chai::test::bike()), false};
  t.state = chai::test::play(chai::test::bike(), {Turn::message(Role::Buyer, "hi"),
                                                  Turn::offer(Role::Seller, prev),
                                                  Turn::offer(Role::Buyer, 0.3)});
  t.next_state = apply_turn(t.state, t.action);
  return t;
}

TrainerConfig small_config(TrainerVariant v) {
  TrainerConfig c;
  c.variant = v;
  c.hidden = 32;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config validation and names") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  for (auto v : {TrainerVariant::Prop, TrainerVariant::Cql, TrainerVariant::Brac})
    CHECK(parse_trainer_variant(to_string(v)) == v);
  CHECK(successor_id("12:3") == "12:4");
  CHECK(successor_id("garbage") == "");
}

TEST_CASE("bellman backups") {
  const std::vector<double> q{1.0, 2.0, -0.5};
  CHECK(bellman_backup(0.0, 0.9, q, Backup::Max) == doctest::Approx(1.8));
  const std::vector<double> m{1.0, 2.0, 3.0};
  CHECK(bellman_backup(0.0, 0.9, m, Backup::Mean) == doctest::Approx(1.8));
  CHECK(bellman_backup(-3.0, 0.0, q, Backup::Max) == -3.0);
  CHECK_THROWS_AS(bellman_backup(0.0, 0.9, std::vector<double>{}, Backup::Max), Error);

  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(1 + uniform_index(rng, 30));
    for (auto& x : v) x = 10 * uniform01(rng) - 5;
    const double r = uniform01(rng), g = uniform01(rng);
    CHECK(bellman_backup(r, g, v, Backup::Mean) <= bellman_backup(r, g, v, Backup::Max) + 1e-12);
  }
}

TEST_CASE("prop target") {
  Setup s;
  Rng rng(3);
  auto target = CriticParams::glorot(s.fz->feature_size(), 16, rng);
  TrainerConfig cfg = small_config(TrainerVariant::Prop);

  SUBCASE("terminal transitions return their reward") {
    Transition t = s.first(true);
    t.reward = -20;
    CHECK(compute_target_prop(t, s.ctx(), target, cfg, rng) == -20.0);
  }
  SUBCASE("matches the brute-force max over the same draw") {
    int checked = 0;
    for (const auto& t : s.transitions) {
      if (t.terminal) continue;
      Rng a(derive_seed(1, checked)), b = a;
      const double got = compute_target_prop(t, s.ctx(), target, cfg, a);
      const auto cands = draw_prop_candidates(t, s.ctx(), cfg, b);
      CHECK(cands.size() >= 1);
      for (const auto& c : cands) CHECK(t.next_state.is_legal(c.to_turn()));
      const auto q = oracle::q_each(target, *s.fz, t.next_state, cands);
      CHECK(std::abs(got - (t.reward + cfg.gamma * oracle::brute_max(q))) < 1e-12);
      if (++checked == 50) break;
    }
  }
  SUBCASE("gamma zero is myopic") {
    cfg.gamma = 0.0;
    const Transition& t = s.first(false);
    CHECK(compute_target_prop(t, s.ctx(), target, cfg, rng) == t.reward);
  }
  SUBCASE("missing cache entries fall back to the generator") {
    CandidateCache empty;
    TargetContext ctx{&empty, s.gen.get(), s.fz.get()};
    CHECK(std::isfinite(compute_target_prop(s.first(false), ctx, target, cfg, rng)));
    TargetContext none{&empty, nullptr, s.fz.get()};
    CHECK_THROWS_AS(compute_target_prop(s.first(false), none, target, cfg, rng), Error);
  }
  SUBCASE("nothing legal after regeneration is a target error") {
    auto t = s.first(false);
    // Next state has no outstanding offer, so accept/reject templates are all illegal.
    t.next_state = DialogueState(chai::test::bike());
    CandidateCache only_accept;
    only_accept.k = 1;
    only_accept.entries[successor_id(t.id)] = {"accept"};
    FixedGenerator accepts({"accept", "reject"});
    TargetContext ctx{&only_accept, &accepts, s.fz.get()};
    try {
      compute_target_prop(t, ctx, target, cfg, rng);
      FAIL("expected target error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Target);
      CHECK(std::string(e.what()).find(t.id) != std::string::npos);
    }
  }
}

TEST_CASE("cql penalty on q values") {
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(25, 1.7);
  CHECK(std::abs(cql_penalty(flat, 3).value - std::log(25.0)) < 1e-12);

  Eigen::VectorXd peaked = Eigen::VectorXd::Zero(25);
  peaked[0] = 10;
  const double expect = std::log(std::exp(10.0) + 24.0) - 10.0;
  CHECK(cql_penalty(peaked, 0).value == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(1.09e-3).epsilon(1e-2));
  CHECK(cql_penalty(Eigen::VectorXd::Constant(1, 4.0), 0).value == 0.0);

  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd q(1 + static_cast<Eigen::Index>(uniform_index(rng, 30)));
    for (Eigen::Index j = 0; j < q.size(); ++j) q[j] = 200 * uniform01(rng) - 100;
    const auto k = uniform_index(rng, static_cast<std::size_t>(q.size()));
    const auto pen = cql_penalty(q, k);
    std::vector<double> qs(q.data(), q.data() + q.size());
    CHECK(pen.value == doctest::Approx(oracle::logsumexp(qs) - q[static_cast<Eigen::Index>(k)]).epsilon(1e-12));
    CHECK(pen.value >= 0.0);
    CHECK(pen.dq.sum() == doctest::Approx(0.0).epsilon(1e-12));
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      Eigen::VectorXd a = q, b = q;
      a[j] += 1e-6;
      b[j] -= 1e-6;
      const double fd = (cql_penalty(a, k).value - cql_penalty(b, k).value) / 2e-6;
      CHECK(std::abs(fd - pen.dq[j]) < 1e-6);
    }
  }
}

TEST_CASE("cql penalty over candidate actions") {
  Setup s;
  Rng rng(8);
  auto params = CriticParams::glorot(s.fz->feature_size(), 12, rng);
  params.b1().setConstant(0.05);
  const Transition& t = s.first(false);
  const auto data = to_candidate(t.action);

  auto cands = enumerate_actions(std::vector<std::string>{"offer <PRICE>", "how about <PRICE>?", "hello"},
                                 sample_prices(1.0, 3, rng), t.state);
  auto with = cands;
  const std::size_t idx = include_action(with, data);
  CHECK(with[idx] == data);
  CHECK(include_action(with, data) == idx);

  const auto term = cql_penalty(t.state, data, cands, params, *s.fz);
  const auto q = oracle::q_each(params, *s.fz, t.state, with);
  CHECK(term.value == doctest::Approx(oracle::logsumexp(q) - q[idx]).epsilon(1e-12));
  CHECK(term.value >= 0.0);

  auto value = [&](const CriticParams& p) {
    const auto qq = oracle::q_each(p, *s.fz, t.state, with);
    return oracle::logsumexp(qq) - qq[idx];
  };
  for (std::size_t i = 0; i < params.size(); i += 37) {
    CriticParams a = params, b = params;
    a.flat()[static_cast<Eigen::Index>(i)] += 1e-5;
    b.flat()[static_cast<Eigen::Index>(i)] -= 1e-5;
    const double fd = (value(a) - value(b)) / 2e-5;
    CHECK(std::abs(fd - term.grads.flat()[static_cast<Eigen::Index>(i)]) < 1e-6 + 1e-4 * std::abs(fd));
  }

  const auto only = cql_penalty(t.state, data, {}, params, *s.fz);
  CHECK(only.value == 0.0);
}

TEST_CASE("gaussian kl") {
  CHECK(gaussian_kl({0.3, 0.7}, {0.3, 0.7}) == 0.0);
  CHECK(gaussian_kl({0, 1}, {1, 1}) == doctest::Approx(0.5));
  CHECK(gaussian_kl({0, 2}, {0, 1}) == doctest::Approx(0.80685).epsilon(1e-5));
  CHECK_THROWS_AS(gaussian_kl({0, 0}, {0, 1}), Error);
  CHECK_THROWS_AS(gaussian_kl({0, 1}, {0, -1}), Error);
}

TEST_CASE("prior fit") {
  SUBCASE("exact linear data") {
    std::vector<Transition> ts;
    for (double p : {0.6, 0.7, 0.8, 0.9, 1.0}) ts.push_back(priced_pair(p, 0.9 * p));
    const auto pr = fit_prior_proposal(ts);
    CHECK(pr.mean_slope == doctest::Approx(0.9));
    CHECK(std::abs(pr.mean_intercept) < 1e-12);
    for (double p : {0.0, 0.5, 1.0, 2.0}) CHECK(pr.at(p).std == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("constant pairs interpolate") {
    std::vector<Transition> ts(4, priced_pair(0.8, 0.8));
    const auto pr = fit_prior_proposal(ts);
    CHECK(pr.at(0.8).mean == doctest::Approx(0.8));
    CHECK(pr.at(0.8).std >= 1e-3);
  }
  SUBCASE("recovers a linear-gaussian model") {
    Rng rng(17);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<Transition> ts;
    for (int i = 0; i < 10000; ++i) {
      const double prev = 0.5 + 0.5 * uniform01(rng);
      ts.push_back(priced_pair(prev, std::max(0.0, 0.85 * prev + noise(rng))));
    }
    const auto pr = fit_prior_proposal(ts);
    CHECK(std::abs(pr.mean_slope - 0.85) < 0.01);
    CHECK(std::abs(pr.at(0.75).std - 0.05) < 0.01);
  }
  SUBCASE("too few pairs") {
    std::vector<Transition> ts{priced_pair(0.9, 0.8)};
    try {
      fit_prior_proposal(ts);
      FAIL("expected fit error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Fit);
    }
  }
  SUBCASE("std stays above the floor on [0, 2]") {
    Setup s(60, 7);
    const auto pr = fit_prior_proposal(s.transitions);
    for (int i = 0; i <= 200; ++i) CHECK(pr.at(i / 100.0).std >= 1e-3);
  }
}

TEST_CASE("proposal action sampling respects legality") {
  Rng rng(2);
  const std::vector<std::string> tmpl{"how about <PRICE>?", "hello there", "accept"};
  DialogueState fresh(chai::test::bike());
  const auto a = sample_proposal_actions(fresh, tmpl, {0.9, 0.05}, 400, rng);
  std::set<ResponseType> seen;
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    seen.insert(a.actions[i].rtype);
    CHECK(fresh.is_legal(a.actions[i].to_turn()));
    if (a.actions[i].price) {
      CHECK(*a.actions[i].price >= 0.0);
      CHECK(*a.actions[i].price <= kMaxProposalPrice);
    } else {
      CHECK_FALSE(a.price_active[i]);
    }
  }
  CHECK(seen == std::set<ResponseType>{ResponseType::Offer, ResponseType::Message});

  const auto st = chai::test::pending_buyer_offer();
  const auto b = sample_proposal_actions(st, tmpl, {0.9, 0.05}, 2000, rng);
  std::map<ResponseType, int> counts;
  for (const auto& x : b.actions) ++counts[x.rtype];
  CHECK(counts.size() == 4);
  for (auto [type, n] : counts) CHECK(std::abs(n - 500) < 100);
}

TEST_CASE("brac target matches the brute-force mean") {
  Setup s;
  Rng rng(10);
  auto target = CriticParams::glorot(s.fz->feature_size(), 16, rng);
  TrainerConfig cfg = small_config(TrainerVariant::Brac);
  const auto prior = fit_prior_proposal(s.transitions);
  const auto phi = PriceProposalNet::random(s.fz->half_size() + 1, 8, rng, 0.3);
  int checked = 0;
  for (const auto& t : s.transitions) {
    if (t.terminal) {
      CHECK(compute_target_brac(t, phi, prior, s.ctx(), target, cfg, rng) == t.reward);
      continue;
    }
    Rng a(derive_seed(2, checked)), b = a;
    const double got = compute_target_brac(t, phi, prior, s.ctx(), target, cfg, a);
    const auto dist = phi.forward(proposal_input(t.next_state, *s.fz), prior,
                                  seller_reference_price(t.next_state)).dist;
    const auto tmpl = resample_templates(s.ctx(), successor_id(t.id), t.next_state, cfg.n_target_utterances, b);
    const auto sa = sample_proposal_actions(t.next_state, tmpl, dist, 25, b);
    CHECK(sa.actions.size() == 25);
    const auto q = oracle::q_each(target, *s.fz, t.next_state, sa.actions);
    CHECK(std::abs(got - (t.reward + cfg.gamma * oracle::brute_mean(q))) < 1e-12);
    if (++checked == 30) break;
  }
}

TEST_CASE("price proposal gradient") {
  Setup s;
  Rng rng(14);
  TrainerConfig cfg = small_config(TrainerVariant::Brac);
  const auto prior = fit_prior_proposal(s.transitions);
  const auto batch = s.all();
  std::span<const Transition* const> few(batch.data(), 6);

  SUBCASE("starts stationary at the prior under a zero critic") {
    CriticParams zero(s.fz->feature_size(), 16);
    const auto phi = PriceProposalNet::random(s.fz->half_size() + 1, 8, rng, 0.0);
    const auto g = price_proposal_gradient(phi, few, prior, zero, s.ctx(), cfg, rng);
    CHECK(g.grad.cwiseAbs().maxCoeff() < 1e-6);
    CHECK(g.kl < 1e-12);
  }
  SUBCASE("matches central differences of the sampled objective") {
    auto critic = CriticParams::glorot(s.fz->feature_size(), 16, rng);
    const auto phi = PriceProposalNet::random(s.fz->half_size() + 1, 8, rng, 0.2);
    const Rng base(99);
    Rng r0 = base;
    const auto g = price_proposal_gradient(phi, few, prior, critic, s.ctx(), cfg, r0);
    int compared = 0;
    for (Eigen::Index i = 0; i < phi.flat().size(); i += 7) {
      auto a = phi, b = phi;
      a.flat()[i] += 1e-6;
      b.flat()[i] -= 1e-6;
      Rng ra = base, rb = base;
      const double fd = (price_proposal_gradient(a, few, prior, critic, s.ctx(), cfg, ra).objective -
                         price_proposal_gradient(b, few, prior, critic, s.ctx(), cfg, rb).objective) /
                        2e-6;
      CHECK(std::abs(fd - g.grad[i]) < 1e-5 + 1e-3 * std::abs(fd));
      ++compared;
    }
    CHECK(compared > 10);
  }
  SUBCASE("zero critic pulls the proposal back to the prior") {
    CriticParams zero(s.fz->feature_size(), 16);
    auto phi = PriceProposalNet::random(s.fz->half_size() + 1, 8, rng, 1.0);
    AdamState opt(static_cast<std::size_t>(phi.flat().size()), AdamConfig{1e-3});
    const double start = price_proposal_gradient(phi, few, prior, zero, s.ctx(), cfg, rng).kl;
    double kl = start;
    for (int i = 0; i < 5000; ++i) kl = train_price_proposal(phi, opt, few, prior, zero, s.ctx(), cfg, rng).kl;
    CHECK(start > 1e-2);
    CHECK(kl < 1e-3);
  }
  SUBCASE("a critic increasing in price raises the proposal mean") {
    CriticParams up(s.fz->feature_size(), 1);
    up.W1()(0, static_cast<Eigen::Index>(s.fz->action_price_index())) = 1.0;
    up.b1()[0] = 5.0;
    up.W2()(0, 0) = 1.0;
    up.w3()[0] = 1.0;
    auto phi = PriceProposalNet::random(s.fz->half_size() + 1, 8, rng, 0.0);
    AdamState opt(static_cast<std::size_t>(phi.flat().size()), AdamConfig{1e-3});
    std::span<const Transition* const> train(batch.data(), batch.size() / 2);
    for (int i = 0; i < 300; ++i) {
      std::vector<const Transition*> mb(8);
      for (auto& p : mb) p = train[uniform_index(rng, train.size())];
      train_price_proposal(phi, opt, mb, prior, up, s.ctx(), cfg, rng);
    }
    int higher = 0, total = 0;
    for (std::size_t i = batch.size() / 2; i < batch.size(); ++i) {
      const auto& st = batch[i]->state;
      const double prev = seller_reference_price(st);
      higher += phi.forward(proposal_input(st, *s.fz), prior, prev).dist.mean > prior.at(prev).mean;
      ++total;
    }
    CHECK(higher == total);
  }
}

TEST_CASE("train_step") {
  Setup s;
  const auto batch = s.all();
  std::span<const Transition* const> b(batch.data(), 8);

  SUBCASE("cql with alpha zero equals prop") {
    auto cfg = small_config(TrainerVariant::Cql);
    cfg.alpha = 0.0;
    Rng init(1);
    TrainerNets a;
    a.critic = CriticParams::glorot(s.fz->feature_size(), 32, init);
    a.target = a.critic;
    a.optimizer = AdamState(a.critic.size());
    TrainerNets p = a;
    Rng ra(7), rp(7);
    train_step(a, b, s.ctx(), cfg, ra);
    cfg.variant = TrainerVariant::Prop;
    train_step(p, b, s.ctx(), cfg, rp);
    CHECK(a.critic.flat() == p.critic.flat());
    CHECK(a.target.flat() == p.target.flat());
  }
  SUBCASE("a fitted terminal transition only moves the target") {
    auto cfg = small_config(TrainerVariant::Prop);
    Transition t = s.first(true);
    CriticParams critic(s.fz->feature_size(), 4);
    critic.b3() = t.reward;
    TrainerNets n{critic, CriticParams(s.fz->feature_size(), 4), AdamState(critic.size()), {}, {}, {}};
    const Transition* one[] = {&t};
    Rng rng(1);
    const auto m = train_step(n, one, s.ctx(), cfg, rng);
    CHECK(m.loss == 0.0);
    CHECK(n.critic.flat() == critic.flat());
    CHECK(n.target.b3() == doctest::Approx(cfg.tau * t.reward));
  }
  SUBCASE("non-finite rewards abort with the transition id") {
    auto cfg = small_config(TrainerVariant::Prop);
    Transition t = s.first(true);
    t.id = "poisoned:0";
    t.reward = NAN;
    Rng init(2);
    TrainerNets n;
    n.critic = CriticParams::glorot(s.fz->feature_size(), 8, init);
    n.target = n.critic;
    n.optimizer = AdamState(n.critic.size());
    const Transition* one[] = {&t};
    try {
      train_step(n, one, s.ctx(), cfg, init);
      FAIL("expected non-finite error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFinite);
      CHECK(std::string(e.what()).find("poisoned:0") != std::string::npos);
    }
  }
  SUBCASE("brac needs a prior") {
    auto cfg = small_config(TrainerVariant::Brac);
    TrainerNets n;
    Rng rng(1);
    CHECK_THROWS_AS(train_step(n, b, s.ctx(), cfg, rng), Error);
  }
}

TEST_CASE("trainers are deterministic and stay finite") {
  Setup s(40, 3);
  for (auto v : {TrainerVariant::Prop, TrainerVariant::Cql, TrainerVariant::Brac}) {
    CAPTURE(to_string(v));
    auto cfg = small_config(v);
    auto t1 = make_trainer(s.corpus, s.gen, s.fz, cfg);
    auto t2 = make_trainer(s.corpus, s.gen, s.fz, cfg);
    std::ostringstream log;
    t1.run(40, &log);
    t2.run(40);
    CHECK(save_checkpoint(t1.checkpoint()) == save_checkpoint(t2.checkpoint()));
    CHECK(t1.steps_done() == 40);

    std::istringstream lines(log.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["step"] == ++n);
      CHECK(j.contains("loss"));
      CHECK(j.contains("cql"));
      CHECK(j.contains("q_mean"));
    }
    CHECK(n == 40);
    const auto meta = t1.checkpoint().meta;
    CHECK(meta["variant"] == std::string(to_string(v)));
    CHECK(meta["provider"] == s.fz->provider().id());
    CHECK(meta.contains("price_prior") == (v == TrainerVariant::Brac));
  }
}

TEST_CASE("q_mean stays finite over a longer run") {
  Setup s(80, 4);
  auto cfg = small_config(TrainerVariant::Prop);
  cfg.batch_size = 32;
  auto t = make_trainer(s.corpus, s.gen, s.fz, cfg);
  StepMetrics m;
  for (int i = 0; i < 1000; ++i) m = t.step();
  CHECK(std::isfinite(m.q_mean));
  CHECK(std::isfinite(m.loss));
  CHECK(t.nets().critic.all_finite());
}
