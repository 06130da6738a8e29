#include "chai/dialogue.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace chai {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidScenario: return "invalid-scenario";
    case ErrorCode::IllegalTurn: return "illegal-turn";
    case ErrorCode::EpisodeOver: return "episode-over";
    case ErrorCode::MissingTarget: return "missing-target";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Cache: return "cache";
    case ErrorCode::Provider: return "provider";
    case ErrorCode::Contract: return "contract";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::PoisonedBatch: return "poisoned-batch";
    case ErrorCode::Checkpoint: return "checkpoint";
    case ErrorCode::Target: return "target";
    case ErrorCode::Fit: return "fit";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::Selection: return "selection";
    case ErrorCode::EmptyCandidates: return "empty-candidates";
    case ErrorCode::Environment: return "environment";
    case ErrorCode::Generator: return "generator";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

std::string_view to_string(Role role) { return role == Role::Buyer ? "buyer" : "seller"; }

std::string_view to_string(ResponseType type) {
  switch (type) {
    case ResponseType::Message: return "message";
    case ResponseType::Offer: return "offer";
    case ResponseType::Accept: return "accept";
    case ResponseType::Reject: return "reject";
  }
  return "message";
}

Role parse_role(std::string_view s) {
  if (s == "buyer") return Role::Buyer;
  if (s == "seller") return Role::Seller;
  throw Error(ErrorCode::Validation, "unknown role '" + std::string(s) + "'");
}

ResponseType parse_response_type(std::string_view s) {
  if (s == "message") return ResponseType::Message;
  if (s == "offer") return ResponseType::Offer;
  if (s == "accept") return ResponseType::Accept;
  if (s == "reject") return ResponseType::Reject;
  throw Error(ErrorCode::Validation, "unknown response type '" + std::string(s) + "'");
}

std::string_view to_string(EpisodeOutcome::Kind kind) {
  switch (kind) {
    case EpisodeOutcome::Kind::Accepted: return "accepted";
    case EpisodeOutcome::Kind::Rejected: return "rejected";
    case EpisodeOutcome::Kind::TimedOut: return "timed_out";
  }
  return "rejected";
}

EpisodeOutcome EpisodeOutcome::accepted(double price) {
  if (!(price > 0.0) || !std::isfinite(price))
    throw Error(ErrorCode::Domain, "accepted price must be positive and finite");
  return EpisodeOutcome(Kind::Accepted, price);
}

// ---------------------------------------------------------------------------

void Scenario::validate() const {
  if (!(list_price > 0.0) || !std::isfinite(list_price))
    throw Error(ErrorCode::InvalidScenario, "scenario '" + id + "': list_price must be > 0");
  if (buyer_target && !(*buyer_target > 0.0 && *buyer_target <= list_price))
    throw Error(ErrorCode::InvalidScenario,
                "scenario '" + id + "': buyer_target must lie in (0, list_price]");
}

std::optional<double> Scenario::target_fraction() const {
  if (!buyer_target) return std::nullopt;
  return normalize_price(*buyer_target, list_price);
}

std::optional<double> Scenario::fair_midpoint() const {
  auto t = target_fraction();
  if (!t) return std::nullopt;
  return (*t + 1.0) / 2.0;
}

bool Turn::has_placeholder() const { return text.find(kPriceToken) != std::string::npos; }

void Turn::validate() const {
  if (price && (!std::isfinite(*price) || *price < 0.0))
    throw Error(ErrorCode::IllegalTurn, "turn price must be finite and >= 0");
  switch (rtype) {
    case ResponseType::Offer:
      if (!price) throw Error(ErrorCode::IllegalTurn, "offer turn without a price");
      break;
    case ResponseType::Message:
      if (has_placeholder() != price.has_value())
        throw Error(ErrorCode::IllegalTurn,
                    "message price must be present exactly when the text has a placeholder");
      break;
    case ResponseType::Accept:
    case ResponseType::Reject:
      if (price || has_placeholder())
        throw Error(ErrorCode::IllegalTurn, "accept/reject turns carry no price");
      break;
  }
}

Turn Turn::message(Role role, std::string text, std::optional<double> price) {
  return Turn{role, ResponseType::Message, std::move(text), price};
}
Turn Turn::offer(Role role, double price, std::string text) {
  return Turn{role, ResponseType::Offer, std::move(text), price};
}
Turn Turn::accept(Role role) { return Turn{role, ResponseType::Accept, "accept", std::nullopt}; }
Turn Turn::reject(Role role) { return Turn{role, ResponseType::Reject, "reject", std::nullopt}; }

// ---------------------------------------------------------------------------

bool DialogueState::can_close(Role role) const {
  return !terminal && last_offer && last_offer->role != role;
}

bool DialogueState::is_legal(const Turn& turn) const {
  if (terminal) return false;
  try {
    turn.validate();
  } catch (const Error&) {
    return false;
  }
  if (turn.rtype == ResponseType::Accept || turn.rtype == ResponseType::Reject)
    return can_close(turn.role);
  return true;
}

void DialogueState::check_invariants() const {
  std::optional<PendingOffer> offer;
  std::optional<EpisodeOutcome> outcome;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const Turn& t = history[i];
    if (outcome) throw Error(ErrorCode::Validation, "turn recorded after episode end");
    t.validate();
    if (t.rtype == ResponseType::Offer) offer = PendingOffer{t.role, *t.price};
    if (t.rtype == ResponseType::Accept || t.rtype == ResponseType::Reject) {
      if (!offer || offer->role == t.role)
        throw Error(ErrorCode::Validation, "close without an outstanding offer");
      outcome = t.rtype == ResponseType::Accept ? EpisodeOutcome::accepted(offer->price)
                                                : EpisodeOutcome::rejected();
    }
  }
  if (offer != last_offer) throw Error(ErrorCode::Validation, "last_offer out of sync");
  if (outcome != terminal) throw Error(ErrorCode::Validation, "terminal flag out of sync");
}

DialogueState apply_turn(const DialogueState& state, const Turn& turn) {
  if (state.terminal) throw Error(ErrorCode::EpisodeOver, "turn after the episode ended");
  turn.validate();
  DialogueState next = state;
  switch (turn.rtype) {
    case ResponseType::Offer:
      next.last_offer = PendingOffer{turn.role, *turn.price};
      break;
    case ResponseType::Accept:
    case ResponseType::Reject:
      if (!state.can_close(turn.role))
        throw Error(ErrorCode::IllegalTurn,
                    std::string(to_string(turn.rtype)) + " with no outstanding offer from the " +
                        std::string(to_string(other(turn.role))));
      next.terminal = turn.rtype == ResponseType::Accept
                          ? EpisodeOutcome::accepted(state.last_offer->price)
                          : EpisodeOutcome::rejected();
      break;
    case ResponseType::Message:
      break;
  }
  next.history.push_back(turn);
  return next;
}

double seller_reference_price(const DialogueState& state) {
  for (auto it = state.history.rbegin(); it != state.history.rend(); ++it)
    if (it->role == Role::Seller && it->price) return *it->price;
  return 1.0;
}

// ---------------------------------------------------------------------------

double normalize_price(double price, double list_price) {
  if (!(list_price > 0.0)) throw Error(ErrorCode::InvalidScenario, "list_price must be > 0");
  if (price < 0.0 || !std::isfinite(price)) throw Error(ErrorCode::Domain, "price must be >= 0");
  return price / list_price;
}

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Parses digits with optional thousands commas and an optional decimal part starting at
// `pos`. Returns the end position, or `pos` when no number starts there.
std::size_t scan_number(std::string_view s, std::size_t pos, double& value) {
  std::size_t i = pos;
  std::string digits;
  while (i < s.size() && is_digit(s[i])) digits += s[i++];
  if (digits.empty()) return pos;
  // 1,200 style grouping: a comma followed by exactly three digits.
  while (i + 3 < s.size() && s[i] == ',' && is_digit(s[i + 1]) && is_digit(s[i + 2]) &&
         is_digit(s[i + 3]) && (i + 4 >= s.size() || !is_digit(s[i + 4]))) {
    digits.append(s.substr(i + 1, 3));
    i += 4;
  }
  if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
    digits += '.';
    ++i;
    while (i < s.size() && is_digit(s[i])) digits += s[i++];
  }
  value = std::stod(digits);
  return i;
}

bool near(double value, double anchor) {
  return anchor > 0.0 && std::abs(value - anchor) <= 0.1 * anchor;
}

}  // namespace

MaskedText mask_prices(std::string_view raw, double list_price, std::optional<double> reference) {
  if (!(list_price > 0.0)) throw Error(ErrorCode::InvalidScenario, "list_price must be > 0");
  MaskedText out;
  out.text.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (c == '$') {
      std::size_t j = i + 1;
      if (j < raw.size() && raw[j] == ' ') ++j;
      double value = 0.0;
      std::size_t end = scan_number(raw, j, value);
      if (end != j) {
        out.text += kPriceToken;
        out.prices.push_back(value / list_price);
        i = end;
        continue;
      }
    } else if (is_digit(c) && (i == 0 || (!is_alnum(raw[i - 1]) && raw[i - 1] != '.'))) {
      double value = 0.0;
      std::size_t end = scan_number(raw, i, value);
      bool bounded = end >= raw.size() || (!is_alnum(raw[end]) && raw[end] != '%');
      if (bounded &&
          (near(value, list_price) || (reference && near(value, *reference * list_price)))) {
        out.text += kPriceToken;
        out.prices.push_back(value / list_price);
        i = end;
        continue;
      }
      out.text.append(raw.substr(i, end - i));
      i = end;
      continue;
    }
    out.text += c;
    ++i;
  }
  return out;
}

std::string format_currency(double amount) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "$%.2f", std::round(amount * 100.0) / 100.0);
  return buf;
}

std::string substitute_price(std::string_view text, double price, double list_price) {
  const std::string rendered = format_currency(price * list_price);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = text.find(kPriceToken, pos);
    if (hit == std::string_view::npos) break;
    out.append(text.substr(pos, hit - pos));
    out += rendered;
    pos = hit + kPriceToken.size();
  }
  out.append(text.substr(pos));
  return out;
}

std::string render_turn(const Turn& turn, double list_price) {
  if (!turn.price) return turn.text;
  if (turn.has_placeholder()) return substitute_price(turn.text, *turn.price, list_price);
  return turn.text + " " + format_currency(*turn.price * list_price);
}

// ---------------------------------------------------------------------------

std::string_view to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::Final: return "final";
    case RewardVariant::Penalty: return "penalty";
    case RewardVariant::AcceptOnly: return "accept";
    case RewardVariant::Utility: return "utility";
    case RewardVariant::Fair: return "fair";
  }
  return "final";
}

RewardVariant parse_reward_variant(std::string_view s) {
  if (s == "final") return RewardVariant::Final;
  if (s == "penalty") return RewardVariant::Penalty;
  if (s == "accept" || s == "accept-only") return RewardVariant::AcceptOnly;
  if (s == "utility") return RewardVariant::Utility;
  if (s == "fair") return RewardVariant::Fair;
  throw Error(ErrorCode::Validation, "unknown reward variant '" + std::string(s) + "'");
}

double compute_reward(const EpisodeOutcome& outcome, RewardVariant variant,
                      std::optional<double> midpoint, const RewardParams& params) {
  if (variant == RewardVariant::Fair && !midpoint)
    throw Error(ErrorCode::MissingTarget, "fair reward needs the buyer/seller midpoint");
  const bool deal = outcome.is_deal();
  const double p = outcome.price();
  switch (variant) {
    case RewardVariant::Final:
      return deal ? params.sale_scale * p : params.reject_penalty;
    case RewardVariant::Penalty:
      return deal ? params.sale_scale * p : params.heavy_reject_penalty;
    case RewardVariant::AcceptOnly:
      return deal ? params.accept_bonus : params.reject_penalty;
    case RewardVariant::Utility:
      return deal ? params.sale_scale * p : 0.0;
    case RewardVariant::Fair:
      return deal ? params.sale_scale - params.fair_slope * std::abs(p - *midpoint)
                  : params.reject_penalty;
  }
  return 0.0;
}

}  // namespace chai
