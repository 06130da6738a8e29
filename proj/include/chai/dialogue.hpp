#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chai/error.hpp"

namespace chai {

inline constexpr std::string_view kPriceToken = "<PRICE>";

enum class Role { Buyer, Seller };
enum class ResponseType { Message, Offer, Accept, Reject };

inline constexpr int kNumResponseTypes = 4;

std::string_view to_string(Role role);
std::string_view to_string(ResponseType type);
Role parse_role(std::string_view s);
ResponseType parse_response_type(std::string_view s);
inline Role other(Role r) { return r == Role::Buyer ? Role::Seller : Role::Buyer; }

/// One advertisement. Prices outside this struct are fractions of list_price.
struct Scenario {
  std::string id;
  std::string title;
  std::string description;
  double list_price = 0.0;
  std::optional<std::string> category;
  std::optional<double> buyer_target;  // currency

  void validate() const;
  std::optional<double> target_fraction() const;
  /// Midpoint between the buyer's target and the list price, as a fraction.
  std::optional<double> fair_midpoint() const;
};

using ScenarioPtr = std::shared_ptr<const Scenario>;

/// A turn holds a masked template; `price` is a fraction of the list price.
struct Turn {
  Role role = Role::Buyer;
  ResponseType rtype = ResponseType::Message;
  std::string text;
  std::optional<double> price;

  void validate() const;
  bool has_placeholder() const;

  static Turn message(Role role, std::string text, std::optional<double> price = {});
  static Turn offer(Role role, double price, std::string text = "offer <PRICE>");
  static Turn accept(Role role);
  static Turn reject(Role role);

  friend bool operator==(const Turn&, const Turn&) = default;
};

class EpisodeOutcome {
 public:
  enum class Kind { Accepted, Rejected, TimedOut };

  static EpisodeOutcome accepted(double price);
  static EpisodeOutcome rejected() { return EpisodeOutcome(Kind::Rejected, 0.0); }
  static EpisodeOutcome timed_out() { return EpisodeOutcome(Kind::TimedOut, 0.0); }

  Kind kind() const { return kind_; }
  bool is_deal() const { return kind_ == Kind::Accepted; }
  /// Sale price fraction; only meaningful for Accepted.
  double price() const { return price_; }

  friend bool operator==(const EpisodeOutcome&, const EpisodeOutcome&) = default;

 private:
  EpisodeOutcome(Kind kind, double price) : kind_(kind), price_(price) {}
  Kind kind_;
  double price_;
};

std::string_view to_string(EpisodeOutcome::Kind kind);

struct PendingOffer {
  Role role;
  double price;
  friend bool operator==(const PendingOffer&, const PendingOffer&) = default;
};

struct DialogueState {
  ScenarioPtr scenario;
  std::vector<Turn> history;
  std::optional<PendingOffer> last_offer;
  std::optional<EpisodeOutcome> terminal;

  explicit DialogueState(ScenarioPtr s) : scenario(std::move(s)) {}

  bool is_terminal() const { return terminal.has_value(); }
  /// Accept/Reject are legal for `role` only against the other side's outstanding offer.
  bool can_close(Role role) const;
  bool is_legal(const Turn& turn) const;
  /// Throws Validation if the cached fields disagree with the history.
  void check_invariants() const;
};

DialogueState apply_turn(const DialogueState& state, const Turn& turn);

/// Most recent price the seller quoted (offer or priced message); 1.0 when none yet.
double seller_reference_price(const DialogueState& state);

double normalize_price(double price, double list_price);

struct MaskedText {
  std::string text;
  std::vector<double> prices;
};

/// Replaces currency amounts with <PRICE>. `$`-prefixed amounts always match; bare
/// numbers match when within 10% of the list price or of `reference` (a fraction).
MaskedText mask_prices(std::string_view raw, double list_price,
                       std::optional<double> reference = {});

std::string format_currency(double amount);
std::string substitute_price(std::string_view text, double price, double list_price);
/// Text shown to a person: the template with its price substituted.
std::string render_turn(const Turn& turn, double list_price);

enum class RewardVariant { Final, Penalty, AcceptOnly, Utility, Fair };

std::string_view to_string(RewardVariant v);
RewardVariant parse_reward_variant(std::string_view s);

struct RewardParams {
  double sale_scale = 10.0;
  double reject_penalty = -20.0;
  double heavy_reject_penalty = -40.0;
  double accept_bonus = 20.0;
  double fair_slope = 20.0;
};

double compute_reward(const EpisodeOutcome& outcome, RewardVariant variant,
                      std::optional<double> midpoint = {}, const RewardParams& params = {});

}  // namespace chai
