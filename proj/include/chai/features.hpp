#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "chai/dialogue.hpp"

namespace chai {

/// Maps text to a fixed-length vector. Implementations must be deterministic and
/// safe to call concurrently.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  /// Stable identifier recorded in checkpoints, e.g. "hashing-128".
  virtual std::string id() const = 0;
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

/// Signed feature hashing over lowercase alphanumeric tokens, averaged by token count.
class HashingEmbedder final : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dim = 128);
  std::size_t dim() const override { return dim_; }
  std::string id() const override;
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

/// Client for `POST /embed` ({"texts": [...]} -> {"vectors": [[...]]}).
class ExternalEmbeddingClient final : public EmbeddingProvider {
 public:
  ExternalEmbeddingClient(std::string endpoint, std::size_t dim,
                          std::shared_ptr<const EmbeddingProvider> fallback = nullptr,
                          std::chrono::milliseconds timeout = std::chrono::seconds(10));
  std::size_t dim() const override { return dim_; }
  std::string id() const override;
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  std::string endpoint_;
  std::size_t dim_;
  std::shared_ptr<const EmbeddingProvider> fallback_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
};

std::string transcript_line(const Turn& turn);
std::string format_transcript(const Scenario& scenario, std::span<const Turn> history);
/// Transcript of `history` followed by `next`, without copying the history.
std::string format_transcript(const Scenario& scenario, std::span<const Turn> history,
                              const Turn& next);

/// Feature layout: [s_embed(d), s_price, s_type(4), a_embed(d), a_price, a_type(4)].
/// Missing prices use 0.0; a state with empty history has an all-zero type one-hot.
class Featurizer {
 public:
  explicit Featurizer(std::shared_ptr<const EmbeddingProvider> provider);

  const EmbeddingProvider& provider() const { return *provider_; }
  std::size_t embed_dim() const { return d_; }
  std::size_t half_size() const { return d_ + 1 + kNumResponseTypes; }
  std::size_t feature_size() const { return 2 * half_size(); }
  std::size_t action_price_index() const { return half_size() + d_; }

  Eigen::VectorXd state_part(const DialogueState& state) const;
  Eigen::VectorXd action_part(const DialogueState& state, const Turn& action) const;
  Eigen::VectorXd featurize(const DialogueState& state, const Turn& action) const;

  /// One column per action. The state half and each distinct action line are
  /// embedded once.
  Eigen::MatrixXd featurize_batch(const DialogueState& state, std::span<const Turn> actions) const;

 private:
  void write_price_type(Eigen::Ref<Eigen::VectorXd> slot, std::optional<double> price,
                        std::optional<ResponseType> type) const;

  std::shared_ptr<const EmbeddingProvider> provider_;
  std::size_t d_;
};

}  // namespace chai
