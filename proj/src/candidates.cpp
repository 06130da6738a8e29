#include "chai/candidates.hpp"

#include <algorithm>
#include <cctype>

// Eigen must come before httplib: <resolv.h> defines a `_res` macro.
#include "chai/features.hpp"

#include <httplib.h>
#include <json.hpp>

namespace chai {

using nlohmann::json;

DialoguePhase infer_phase(std::span<const Turn> history) {
  if (history.empty()) return DialoguePhase::Greeting;
  std::optional<Role> offer_by;
  bool priced = false;
  bool seller_spoke = false;
  for (const Turn& t : history) {
    if (t.rtype == ResponseType::Offer) offer_by = t.role;
    if (t.price) priced = true;
    if (t.role == Role::Seller) seller_spoke = true;
  }
  if (offer_by == Role::Buyer) return DialoguePhase::Closing;
  if (priced) return DialoguePhase::Haggling;
  if (!seller_spoke) return DialoguePhase::Greeting;
  return DialoguePhase::QandA;
}

TemplateGenerator::TemplateGenerator() {
  greeting_ = {
      {"Hi! Yes, the {title} is still available.", 2.0},
      {"Hello, thanks for your interest in the {title}.", 2.0},
      {"Hi there, it is in great condition.", 1.5},
      {"Hey! Happy to answer any questions you have.", 1.0},
      {"Hi, I'm asking <PRICE> for it.", 1.5},
      {"Hello! The listed price is <PRICE>, and it is well worth it.", 1.0},
  };
  qanda_ = {
      {"It works perfectly, no issues at all.", 1.5},
      {"I have had it for about a year and took good care of it.", 1.5},
      {"Yes, everything in the description is included.", 1.0},
      {"You can pick it up this weekend if that works.", 1.0},
      {"It is in great condition, barely used.", 1.5},
      {"I can do <PRICE> if you pick it up today.", 1.0},
      {"I'm asking <PRICE>, it is in mint condition.", 1.0},
      {"offer <PRICE>", 0.5},
  };
  haggling_ = {
      {"offer <PRICE>", 2.0},
      {"I can do <PRICE>.", 1.5},
      {"How about <PRICE>?", 1.5},
      {"The lowest I can go is <PRICE>.", 1.0},
      {"I could meet you at <PRICE>.", 1.0},
      {"That is too low for me, it is worth more than that.", 1.0},
      {"It is in great condition, I think the price is fair.", 1.0},
      {"accept", 0.5},
      {"reject", 0.5},
  };
  closing_ = {
      {"accept", 1.5},
      {"reject", 0.75},
      {"offer <PRICE>", 2.0},
      {"I can do <PRICE>, that is my final price.", 1.0},
      {"Meet me halfway at <PRICE>?", 1.0},
      {"How about <PRICE> instead?", 1.0},
      {"Sorry, that is too low for the {title}.", 1.0},
      {"Deal, if you can pick it up soon.", 0.5},
  };
}

const std::vector<WeightedTemplate>& TemplateGenerator::library(DialoguePhase phase) const {
  switch (phase) {
    case DialoguePhase::Greeting: return greeting_;
    case DialoguePhase::QandA: return qanda_;
    case DialoguePhase::Haggling: return haggling_;
    case DialoguePhase::Closing: return closing_;
  }
  return greeting_;
}

std::vector<std::string> TemplateGenerator::propose(const Scenario& scenario,
                                                    std::span<const Turn> history, std::size_t k,
                                                    std::uint64_t seed) const {
  if (k == 0) throw Error(ErrorCode::Generator, "k must be at least 1");
  const auto& lib = library(infer_phase(history));
  std::vector<double> weights;
  weights.reserve(lib.size());
  for (const auto& t : lib) weights.push_back(t.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::string text = lib[pick(rng)].text;
    const std::string marker = "{title}";
    if (auto pos = text.find(marker); pos != std::string::npos)
      text.replace(pos, marker.size(), scenario.title);
    out.push_back(std::move(text));
  }
  return out;
}

// ---------------------------------------------------------------------------

LmGenerator::LmGenerator(std::string endpoint, std::shared_ptr<const CandidateGenerator> fallback,
                         std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), fallback_(std::move(fallback)), timeout_(timeout) {}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> LmGenerator::propose(const Scenario& scenario,
                                              std::span<const Turn> history, std::size_t k,
                                              std::uint64_t seed) const {
  auto fail = [&](const std::string& why) -> std::vector<std::string> {
    if (fallback_) return fallback_->propose(scenario, history, k, seed);
    throw Error(ErrorCode::Generator, why);
  };
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  json body = {{"prompt", format_transcript(scenario, history)}, {"n", k}};
  auto res = client.Post("/complete", body.dump(), "application/json");
  if (!res) return fail("language-model service at " + endpoint_ + " unreachable");
  if (res->status != 200)
    return fail("language-model service returned status " + std::to_string(res->status));
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception& e) {
    return fail(std::string("language-model reply is not JSON: ") + e.what());
  }
  if (!reply.contains("completions") || !reply["completions"].is_array())
    return fail("language-model reply lacks a completions array");
  const json& comps = reply["completions"];
  if (comps.size() != k)
    return fail("language-model returned " + std::to_string(comps.size()) + " completions, wanted " +
                std::to_string(k));
  std::optional<double> reference;
  for (auto it = history.rbegin(); it != history.rend(); ++it)
    if (it->price) {
      reference = *it->price;
      break;
    }
  std::vector<std::string> out;
  out.reserve(k);
  for (const auto& c : comps) {
    if (!c.is_string()) return fail("non-string completion");
    std::string text = trim(mask_prices(c.get<std::string>(), scenario.list_price, reference).text);
    if (text.empty()) return fail("empty completion");
    out.push_back(std::move(text));
  }
  return out;
}

// ---------------------------------------------------------------------------

FixedGenerator::FixedGenerator(std::vector<std::string> templates)
    : templates_(std::move(templates)) {
  if (templates_.empty()) throw Error(ErrorCode::Generator, "fixed generator needs templates");
}

std::vector<std::string> FixedGenerator::propose(const Scenario&, std::span<const Turn>,
                                                 std::size_t k, std::uint64_t) const {
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(templates_[i % templates_.size()]);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> sample_prices(double prev_offer, std::size_t k, Rng& rng) {
  if (!(prev_offer > 0.0)) throw Error(ErrorCode::Domain, "previous offer must be positive");
  std::uniform_real_distribution<double> dist(kPriceLow * prev_offer, kPriceHigh * prev_offer);
  std::vector<double> out(k);
  for (double& p : out) p = dist(rng);
  return out;
}

ResponseType infer_type(std::string_view text) {
  std::string lowered = trim(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto starts_word = [&](std::string_view word) {
    if (lowered.compare(0, word.size(), word) != 0) return false;
    return lowered.size() == word.size() ||
           !std::isalpha(static_cast<unsigned char>(lowered[word.size()]));
  };
  if (starts_word("offer")) return ResponseType::Offer;
  if (starts_word("accept")) return ResponseType::Accept;
  if (starts_word("reject")) return ResponseType::Reject;
  return ResponseType::Message;
}

std::vector<CandidateAction> enumerate_actions(std::span<const std::string> templates,
                                               std::span<const double> prices,
                                               const DialogueState& state, Role role) {
  if (templates.empty() || prices.empty())
    throw Error(ErrorCode::EmptyCandidates, "templates and prices must be non-empty");
  std::vector<CandidateAction> out;
  bool have_accept = false, have_reject = false;
  const bool can_close = state.can_close(role);
  for (const std::string& t : templates) {
    const ResponseType type = infer_type(t);
    const bool placeholder = t.find(kPriceToken) != std::string::npos;
    switch (type) {
      case ResponseType::Accept:
      case ResponseType::Reject: {
        bool& seen = type == ResponseType::Accept ? have_accept : have_reject;
        if (!seen && can_close) out.push_back({std::string(to_string(type)), type, std::nullopt});
        seen = true;
        break;
      }
      case ResponseType::Offer:
        for (double p : prices) out.push_back({t, type, p});
        break;
      case ResponseType::Message:
        if (placeholder)
          for (double p : prices) out.push_back({t, type, p});
        else
          out.push_back({t, type, std::nullopt});
        break;
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyCandidates, "no legal candidate actions");
  return out;
}

std::vector<Turn> to_turns(std::span<const CandidateAction> actions, Role role) {
  std::vector<Turn> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(a.to_turn(role));
  return out;
}

}  // namespace chai
