#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "chai/candidates.hpp"
#include "chai/critic.hpp"
#include "chai/features.hpp"

namespace chai {

/// Anything that can take the next turn in a negotiation.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual Role role() const = 0;
  virtual Turn respond(const DialogueState& state, Rng& rng) const = 0;
};

std::vector<double> softmax_probabilities(std::span<const double> q, double temperature);
/// Samples index j with probability softmax(q / temperature)_j.
std::size_t softmax_select(std::span<const double> q, double temperature, Rng& rng);
/// Lowest index among the maxima.
std::size_t argmax_select(std::span<const double> q);

struct DecodeConfig {
  double temperature = 1.0;
  std::size_t n_utterances = 5;
  std::size_t n_prices = 5;
  bool greedy = false;

  void validate() const;
};

struct Decision {
  std::vector<CandidateAction> candidates;
  Eigen::VectorXd q;
  std::size_t chosen = 0;
  Turn turn;
};

/// Seller that proposes candidates, scores them with a critic snapshot and picks one.
class DecodePolicy final : public Agent {
 public:
  DecodePolicy(std::shared_ptr<const CriticParams> critic,
               std::shared_ptr<const CandidateGenerator> generator,
               std::shared_ptr<const Featurizer> featurizer, DecodeConfig cfg = {});

  Role role() const override { return Role::Seller; }
  Turn respond(const DialogueState& state, Rng& rng) const override;
  Decision decide(const DialogueState& state, Rng& rng) const;

  const DecodeConfig& config() const { return cfg_; }
  const CriticParams& critic() const { return *critic_; }

 private:
  std::shared_ptr<const CriticParams> critic_;
  std::shared_ptr<const CandidateGenerator> generator_;
  std::shared_ptr<const Featurizer> featurizer_;
  DecodeConfig cfg_;
};

/// Candidate set the decoder would score at `state`; regenerates once when no
/// candidate is legal.
std::vector<CandidateAction> propose_candidates(const CandidateGenerator& generator,
                                                const DialogueState& state, std::size_t n_utterances,
                                                std::size_t n_prices, Rng& rng);

Turn decode(const DialogueState& state, const DecodePolicy& policy, Rng& rng);
Turn greedy_decode(const DialogueState& state, const CriticParams& critic,
                   const CandidateGenerator& generator, const Featurizer& featurizer, Rng& rng,
                   std::size_t n_utterances = 5, std::size_t n_prices = 5);

/// Builds a decoding policy from a checkpoint file, checking it matches `featurizer`.
std::shared_ptr<DecodePolicy> load_policy(const std::string& checkpoint_path,
                                          std::shared_ptr<const CandidateGenerator> generator,
                                          std::shared_ptr<const Featurizer> featurizer,
                                          DecodeConfig cfg = {});

/// Seller that opens at the list price and repeats it; accepts only at list price.
class ListPriceSeller final : public Agent {
 public:
  Role role() const override { return Role::Seller; }
  Turn respond(const DialogueState& state, Rng& rng) const override;
};

/// Seller picking uniformly among the decoder's candidate set.
class RandomSeller final : public Agent {
 public:
  explicit RandomSeller(std::shared_ptr<const CandidateGenerator> generator,
                        std::size_t n_utterances = 5, std::size_t n_prices = 5);
  Role role() const override { return Role::Seller; }
  Turn respond(const DialogueState& state, Rng& rng) const override;

 private:
  std::shared_ptr<const CandidateGenerator> generator_;
  std::size_t n_u_, n_p_;
};

}  // namespace chai
