#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chai/dialogue.hpp"
#include "chai/rng.hpp"

namespace chai {

/// The utterance half of the proposal distribution: k masked templates per call.
class CandidateGenerator {
 public:
  virtual ~CandidateGenerator() = default;
  virtual std::vector<std::string> propose(const Scenario& scenario, std::span<const Turn> history,
                                           std::size_t k, std::uint64_t seed) const = 0;
};

enum class DialoguePhase { Greeting, QandA, Haggling, Closing };

/// Phase seen by the seller given the history so far.
DialoguePhase infer_phase(std::span<const Turn> history);

struct WeightedTemplate {
  std::string text;
  double weight = 1.0;
};

/// Phase-conditioned template library. `{title}` in a template is replaced by the
/// scenario title.
class TemplateGenerator final : public CandidateGenerator {
 public:
  TemplateGenerator();
  std::vector<std::string> propose(const Scenario& scenario, std::span<const Turn> history,
                                   std::size_t k, std::uint64_t seed) const override;

  const std::vector<WeightedTemplate>& library(DialoguePhase phase) const;

 private:
  std::vector<WeightedTemplate> greeting_, qanda_, haggling_, closing_;
};

/// Client for `POST /complete` ({"prompt", "n"} -> {"completions": [...]}).
class LmGenerator final : public CandidateGenerator {
 public:
  LmGenerator(std::string endpoint, std::shared_ptr<const CandidateGenerator> fallback = nullptr,
              std::chrono::milliseconds timeout = std::chrono::seconds(30));
  std::vector<std::string> propose(const Scenario& scenario, std::span<const Turn> history,
                                   std::size_t k, std::uint64_t seed) const override;

 private:
  std::string endpoint_;
  std::shared_ptr<const CandidateGenerator> fallback_;
  std::chrono::milliseconds timeout_;
};

/// Always proposes the same templates (cycled to length k). Useful for fixtures.
class FixedGenerator final : public CandidateGenerator {
 public:
  explicit FixedGenerator(std::vector<std::string> templates);
  std::vector<std::string> propose(const Scenario&, std::span<const Turn>, std::size_t k,
                                   std::uint64_t) const override;

 private:
  std::vector<std::string> templates_;
};

struct CandidateAction {
  std::string text;
  ResponseType rtype = ResponseType::Message;
  std::optional<double> price;

  Turn to_turn(Role role = Role::Seller) const { return Turn{role, rtype, text, price}; }
  friend bool operator==(const CandidateAction&, const CandidateAction&) = default;
};

inline constexpr double kPriceLow = 0.7;
inline constexpr double kPriceHigh = 1.0;

/// k uniform draws from [0.7 * prev_offer, prev_offer].
std::vector<double> sample_prices(double prev_offer, std::size_t k, Rng& rng);

ResponseType infer_type(std::string_view text);

/// Cross product of priced templates with prices; unpriced messages once each;
/// accept/reject deduplicated and kept only when legal for `role`.
std::vector<CandidateAction> enumerate_actions(std::span<const std::string> templates,
                                               std::span<const double> prices,
                                               const DialogueState& state,
                                               Role role = Role::Seller);

std::vector<Turn> to_turns(std::span<const CandidateAction> actions, Role role = Role::Seller);

}  // namespace chai
