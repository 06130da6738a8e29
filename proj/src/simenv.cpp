#include "chai/simenv.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace chai {

using nlohmann::json;

namespace {

constexpr std::array kBuyerChat{
    "Is this still available?",
    "Can you tell me a bit more about its condition?",
    "Why are you selling it?",
    "Would you be able to go any lower?",
    "Hmm, that is more than I was hoping to spend.",
};

Turn buyer_chat(Rng& rng) {
  return Turn::message(Role::Buyer, kBuyerChat[uniform_index(rng, kBuyerChat.size())]);
}

void require_live(const DialogueState& state) {
  if (state.is_terminal()) throw Error(ErrorCode::Environment, "buyer asked to act in a finished dialogue");
}

// Seller price in the latest turn, if that turn is the seller's and carries one.
std::optional<double> fresh_seller_price(const DialogueState& state) {
  if (state.history.empty()) return std::nullopt;
  const Turn& last = state.history.back();
  if (last.role != Role::Seller || !last.price) return std::nullopt;
  return last.price;
}

// Accept when the seller's latest move is an outstanding offer at s; otherwise
// meet the quoted price with an offer so the seller can close.
Turn close_at(const DialogueState& state, double s) {
  if (state.can_close(Role::Buyer) && state.history.back().rtype == ResponseType::Offer)
    return Turn::accept(Role::Buyer);
  return Turn::offer(Role::Buyer, s);
}

}  // namespace

ConcedingBuyer::ConcedingBuyer(ConcedingBuyerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.concession > 0.0 && cfg_.concession <= 1.0))
    throw Error(ErrorCode::Domain, "concession must be in (0, 1]");
  if (!(cfg_.opening > 0.0)) throw Error(ErrorCode::Domain, "opening offer must be > 0");
  if (cfg_.patience == 0 || cfg_.gap_rounds == 0) throw Error(ErrorCode::Domain, "patience and gap rounds must be >= 1");
}

ConcedingBuyer ConcedingBuyer::rule_based() { return ConcedingBuyer({.concession = 0.5, .walk_hazard = 1.0}); }
ConcedingBuyer ConcedingBuyer::stingy() { return ConcedingBuyer({.concession = 0.25, .walk_hazard = 1.0}); }

Turn ConcedingBuyer::respond(const DialogueState& state, Rng& rng) const {
  require_live(state);
  const auto& h = state.history;
  if (h.empty()) return buyer_chat(rng);

  std::optional<double> b, s;
  std::vector<double> gaps;
  std::size_t buyer_turns = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i].role == Role::Buyer) {
      if (i > 0 && h[i - 1].role == Role::Seller && h[i - 1].price && b) gaps.push_back(std::abs(*h[i - 1].price - *b));
      ++buyer_turns;
      if (h[i].price) b = h[i].price;
    } else if (h[i].price) {
      s = h[i].price;
    }
  }

  if (buyer_turns >= cfg_.patience) {
    if (state.can_close(Role::Buyer)) return Turn::reject(Role::Buyer);
    return Turn::message(Role::Buyer, "I think I will pass on this one.");
  }

  const auto fresh = fresh_seller_price(state);
  const auto target = state.scenario->target_fraction();
  if (!b) {
    if (fresh && target && *fresh <= *target) return close_at(state, *fresh);
    return Turn::offer(Role::Buyer, s ? std::min(cfg_.opening, *s) : cfg_.opening);
  }
  if (!fresh) return buyer_chat(rng);

  const double sp = *fresh;
  if (sp <= *b + cfg_.accept_margin * std::abs(sp - *b) || (target && sp <= *target)) return close_at(state, sp);
  if (target && *target < 1.0 && cfg_.walk_hazard > 0.0 && state.can_close(Role::Buyer)) {
    const double over = std::min(1.0, (sp - *target) / (1.0 - *target));
    if (uniform01(rng) < cfg_.walk_hazard * over) return Turn::reject(Role::Buyer);
  }
  gaps.push_back(std::abs(sp - *b));
  if (gaps.size() >= cfg_.gap_rounds) {
    bool close = true;
    for (std::size_t i = gaps.size() - cfg_.gap_rounds; i < gaps.size(); ++i) close = close && gaps[i] < cfg_.gap_tolerance;
    if (close) return close_at(state, sp);
  }
  return Turn::offer(Role::Buyer, *b + cfg_.concession * (sp - *b));
}

Turn AlwaysAcceptBuyer::respond(const DialogueState& state, Rng&) const {
  require_live(state);
  if (state.history.empty()) return Turn::message(Role::Buyer, "Hi, is this still available?");
  if (const auto fresh = fresh_seller_price(state)) return close_at(state, *fresh);
  if (state.can_close(Role::Buyer)) return Turn::accept(Role::Buyer);
  return Turn::message(Role::Buyer, "What price are you looking for?");
}

ScriptedAgent::ScriptedAgent(Role role, std::vector<Turn> turns) : role_(role), turns_(std::move(turns)) {
  for (auto& t : turns_) t.role = role_;
}

Turn ScriptedAgent::respond(const DialogueState& state, Rng&) const {
  if (state.is_terminal()) throw Error(ErrorCode::Environment, "scripted agent asked to act in a finished dialogue");
  std::size_t n = 0;
  for (const auto& t : state.history) n += t.role == role_;
  if (n < turns_.size()) return turns_[n];
  return Turn::message(role_, "ok");
}

NamedAgent make_buyer(std::string_view name) {
  if (name == "rule-based") return {"rule-based", std::make_shared<ConcedingBuyer>(ConcedingBuyer::rule_based())};
  if (name == "stingy") return {"stingy", std::make_shared<ConcedingBuyer>(ConcedingBuyer::stingy())};
  if (name == "always-accept") return {"always-accept", std::make_shared<AlwaysAcceptBuyer>()};
  throw Error(ErrorCode::Parse, "unknown buyer '" + std::string(name) +
                                    "' (expected rule-based, stingy or always-accept)");
}

// ---------------------------------------------------------------------------

EpisodeResult run_episode(const Agent& seller, const Agent& buyer, const ScenarioPtr& scenario,
                          RewardVariant variant, Rng& rng, std::size_t max_turns,
                          const RewardParams& params) {
  if (!scenario) throw Error(ErrorCode::InvalidScenario, "episode needs a scenario");
  DialogueState state(scenario);
  EpisodeResult out;
  while (!state.is_terminal() && state.history.size() < max_turns) {
    const bool buyer_turn = state.history.size() % 2 == 0;
    const Agent& who = buyer_turn ? buyer : seller;
    const char* name = buyer_turn ? "buyer" : "seller";
    try {
      Turn t = who.respond(state, rng);
      if (t.role != (buyer_turn ? Role::Buyer : Role::Seller))
        throw Error(ErrorCode::IllegalTurn, "turn carries the wrong role");
      state = apply_turn(state, t);
    } catch (const std::exception& e) {
      out.diagnostic = std::string(name) + " failed at turn " + std::to_string(state.history.size()) + ": " + e.what();
      break;
    }
  }
  out.transcript = state.history;
  out.turns = state.history.size();
  out.outcome = state.terminal.value_or(EpisodeOutcome::timed_out());
  out.reward = compute_reward(out.outcome, variant, scenario->fair_midpoint(), params);
  return out;
}

MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  out.count = xs.size();
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return out;
}

EvalRow summarize(const std::string& buyer, std::span<const EpisodeRecord> episodes) {
  EvalRow row;
  row.buyer = buyer;
  row.episodes = episodes.size();
  std::vector<double> revenue, offered, accepted;
  double reward = 0.0;
  for (const auto& e : episodes) {
    const bool deal = e.outcome.is_deal();
    revenue.push_back(deal ? e.outcome.price() : 0.0);
    if (deal) accepted.push_back(e.outcome.price());
    offered.insert(offered.end(), e.offered.begin(), e.offered.end());
    reward += e.reward;
  }
  row.accept_rate = episodes.empty() ? 0.0 : 100.0 * static_cast<double>(accepted.size()) / static_cast<double>(episodes.size());
  row.revenue = mean_std(revenue);
  row.offered = mean_std(offered);
  row.accepted = mean_std(accepted);
  row.reward_mean = episodes.empty() ? 0.0 : reward / static_cast<double>(episodes.size());
  return row;
}

json to_json(const EpisodeRecord& r) {
  json j{{"buyer", r.buyer},
         {"index", r.index},
         {"scenario_id", r.scenario_id},
         {"outcome", to_string(r.outcome.kind())},
         {"price", r.outcome.is_deal() ? json(r.outcome.price()) : json(nullptr)},
         {"reward", r.reward},
         {"turns", r.turns},
         {"offered", r.offered}};
  if (r.diagnostic) j["diagnostic"] = *r.diagnostic;
  return j;
}

json EvalReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"buyer", r.buyer},
                      {"episodes", r.episodes},
                      {"accept_rate", r.accept_rate},
                      {"revenue_mean", r.revenue.mean},
                      {"revenue_std", r.revenue.std},
                      {"offered_mean", r.offered.mean},
                      {"offered_std", r.offered.std},
                      {"accepted_mean", r.accepted.mean},
                      {"accepted_std", r.accepted.std},
                      {"reward_mean", r.reward_mean}});
  return {{"rows", rows_j}};
}

std::string EvalReport::table() const {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.buyer.size());
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %6s  %s\n", static_cast<int>(w), "Buyer", "Acc%", "Revenue");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %6.1f  %.2f ± %.2f\n", static_cast<int>(w), r.buyer.c_str(),
                  r.accept_rate, r.revenue.mean, r.revenue.std);
    os << buf;
  }
  return os.str();
}

std::string EvalReport::episodes_jsonl() const {
  std::string out;
  for (const auto& e : episodes) out += chai::to_json(e).dump() + "\n";
  return out;
}

EvalReport evaluate(const Agent& seller, std::span<const NamedAgent> buyers,
                    std::span<const ScenarioPtr> scenarios, std::size_t episodes_per_pair,
                    RewardVariant variant, std::uint64_t seed, std::size_t max_turns,
                    const RewardParams& params) {
  if (scenarios.empty()) throw Error(ErrorCode::InvalidScenario, "evaluation needs at least one scenario");
  EvalReport report;
  for (const auto& buyer : buyers) {
    const std::size_t first = report.episodes.size();
    for (std::size_t e = 0; e < episodes_per_pair; ++e) {
      Rng rng(derive_seed(seed, e));
      const ScenarioPtr& scenario = scenarios[uniform_index(rng, scenarios.size())];
      const EpisodeResult res = run_episode(seller, *buyer.agent, scenario, variant, rng, max_turns, params);
      EpisodeRecord rec{buyer.name, e, scenario->id, res.outcome, res.reward, res.turns, {}, res.diagnostic};
      for (const auto& t : res.transcript)
        if (t.role == Role::Seller && t.price) rec.offered.push_back(*t.price);
      report.episodes.push_back(std::move(rec));
    }
    report.rows.push_back(summarize(
        buyer.name, std::span<const EpisodeRecord>(report.episodes).subspan(first, episodes_per_pair)));
  }
  return report;
}

// ---------------------------------------------------------------------------

ScriptedSeller::ScriptedSeller(std::shared_ptr<const CandidateGenerator> generator, ScriptedSellerConfig cfg)
    : generator_(std::move(generator)), cfg_(cfg) {
  if (!(cfg_.counter_low > 0.0 && cfg_.counter_low <= cfg_.counter_high && cfg_.counter_high <= 1.0))
    throw Error(ErrorCode::Domain, "counter range must satisfy 0 < low <= high <= 1");
}

std::string ScriptedSeller::pick_template(const DialogueState& state, bool priced, Rng& rng) const {
  if (generator_) {
    const auto proposals = generator_->propose(*state.scenario, state.history, 8, rng());
    for (const auto& t : proposals)
      if (infer_type(t) == ResponseType::Message && (t.find(kPriceToken) != std::string::npos) == priced) return t;
  }
  return priced ? "I could do <PRICE>." : "It is in good shape and works well.";
}

Turn ScriptedSeller::respond(const DialogueState& state, Rng& rng) const {
  if (state.is_terminal()) throw Error(ErrorCode::Environment, "seller asked to act in a finished dialogue");
  std::optional<double> own;
  bool spoke = false;
  for (const auto& t : state.history)
    if (t.role == Role::Seller) {
      spoke = true;
      if (t.price) own = t.price;
    }
  if (generator_ && cfg_.explore_prob > 0.0 && uniform01(rng) < cfg_.explore_prob) {
    const auto c = propose_candidates(*generator_, state, cfg_.explore_utterances, cfg_.explore_prices, rng);
    return c[uniform_index(rng, c.size())].to_turn(Role::Seller);
  }
  const double ask = own.value_or(1.0);
  std::optional<double> bid;
  if (state.can_close(Role::Seller)) bid = state.last_offer->price;

  if (bid) {
    if (*bid >= cfg_.accept_ratio * ask || uniform01(rng) < cfg_.early_accept_prob) return Turn::accept(Role::Seller);
    if (*bid < cfg_.lowball_ratio * ask && uniform01(rng) < cfg_.reject_prob) return Turn::reject(Role::Seller);
  }
  const bool chat = own ? uniform01(rng) < cfg_.chat_prob : !spoke && !bid && uniform01(rng) < cfg_.open_with_chat_prob;
  if (chat) return Turn::message(Role::Seller, pick_template(state, false, rng));

  double price = 1.0;
  if (own) {
    price = ask * std::uniform_real_distribution<double>(cfg_.counter_low, cfg_.counter_high)(rng);
    if (bid && price <= *bid) return Turn::accept(Role::Seller);
  }
  if (uniform01(rng) < cfg_.priced_message_prob)
    return Turn::message(Role::Seller, pick_template(state, true, rng), price);
  return Turn::offer(Role::Seller, price);
}

double quantize_price(double fraction, double list_price) {
  const double cents = std::round(fraction * list_price * 100.0);
  return (cents / 100.0) / list_price;
}

namespace {

struct Product {
  const char* title;
  const char* description;
  const char* category;
  double price;
};

constexpr std::array<Product, 24> kCatalog{{
    {"Road bike", "Lightweight aluminum frame, new tires, shifts cleanly. Stored indoors.", "bike", 420},
    {"Kids mountain bike", "Outgrown after one summer. A few scratches on the fork.", "bike", 140},
    {"Vintage cruiser bicycle", "Classic steel cruiser with a basket. Rides smooth.", "bike", 260},
    {"Mid-century dresser", "Solid walnut, six drawers, original pulls. Minor wear on top.", "furniture", 380},
    {"Sectional sofa", "Grey fabric sectional, pet free and smoke free home. Must pick up.", "furniture", 650},
    {"Oak dining table", "Seats six, comes with two leaves. Chairs sold separately.", "furniture", 300},
    {"Office chair", "Ergonomic mesh chair with lumbar support. Barely used.", "furniture", 160},
    {"Queen bed frame", "Platform frame, no box spring needed. Easy to assemble.", "furniture", 210},
    {"Laptop", "Fast processor, long battery life, includes charger. Screen is flawless.", "electronics", 720},
    {"Noise cancelling headphones", "Great sound, comes with the case and cable.", "electronics", 180},
    {"Mirrorless camera", "Body plus kit lens, low shutter count, two batteries.", "electronics", 560},
    {"Gaming console", "Works perfectly, includes one controller and HDMI cable.", "electronics", 290},
    {"Smart TV", "Crisp picture, wall mount included. Remote works.", "electronics", 340},
    {"Bluetooth speaker", "Loud and waterproof. Battery lasts all day.", "electronics", 90},
    {"Tablet", "Lightly used with a protective cover. No cracks.", "electronics", 250},
    {"Two bedroom apartment", "Bright unit near transit, laundry in building, parking available.", "housing", 1850},
    {"Studio sublet", "Furnished studio for the summer, utilities included.", "housing", 1200},
    {"Room in shared house", "Quiet room with a big closet, shared kitchen and backyard.", "housing", 900},
    {"Used sedan", "Reliable commuter car, clean title, recent oil change.", "car", 6200},
    {"Compact hatchback", "Good on gas, new brakes, minor dent on the rear bumper.", "car", 4800},
    {"Pickup truck", "Runs strong, tow hitch, some rust on the bed.", "car", 9500},
    {"Electric guitar", "Plays well, new strings, includes a gig bag.", "electronics", 330},
    {"Standing desk", "Motorized height adjustment, memory presets.", "furniture", 280},
    {"Espresso machine", "Makes great shots, steam wand works, descaled recently.", "electronics", 230},
}};

}  // namespace

std::vector<ScenarioPtr> synthetic_scenarios(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScenarioPtr> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Product& p = kCatalog[i % kCatalog.size()];
    auto s = std::make_shared<Scenario>();
    s->id = "syn-" + std::to_string(i);
    s->title = p.title;
    s->description = p.description;
    s->category = p.category;
    s->list_price = std::round(p.price * std::uniform_real_distribution<double>(0.8, 1.2)(rng));
    s->buyer_target = std::round(s->list_price * std::uniform_real_distribution<double>(0.55, 0.85)(rng) * 100.0) / 100.0;
    s->validate();
    out.push_back(std::move(s));
  }
  return out;
}

Corpus generate_synthetic_corpus(std::span<const ScenarioPtr> scenarios, const Agent& buyer,
                                 const Agent& seller, std::size_t n_dialogues, std::uint64_t seed,
                                 std::size_t max_turns) {
  if (n_dialogues == 0) throw Error(ErrorCode::Domain, "need at least one dialogue");
  if (scenarios.empty()) throw Error(ErrorCode::InvalidScenario, "need at least one scenario");
  Corpus corpus;
  for (const auto& s : scenarios) corpus.scenarios.emplace(s->id, s);
  for (std::size_t d = 0; d < n_dialogues; ++d) {
    Rng rng(derive_seed(seed, d));
    const ScenarioPtr& scenario = scenarios[uniform_index(rng, scenarios.size())];
    DialogueState state(scenario);
    while (!state.is_terminal() && state.history.size() < max_turns) {
      const Agent& who = state.history.size() % 2 == 0 ? buyer : seller;
      Turn t = who.respond(state, rng);
      if (t.price) t.price = quantize_price(*t.price, scenario->list_price);
      state = apply_turn(state, t);
    }
    Dialogue dlg{scenario->id, state.history,
                 state.terminal && state.terminal->is_deal() ? *state.terminal : EpisodeOutcome::rejected()};
    corpus.dialogues.push_back(std::move(dlg));
  }
  return corpus;
}

}  // namespace chai
