#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <json.hpp>

#include "chai/rng.hpp"

namespace chai {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kCriticHidden = 256;

/// Q(x) = w3' relu(W2 relu(W1 x + b1) + b2) + b3, stored as one flat vector
/// (W1, b1, W2, b2, w3, b3; matrices row-major) so optimizers and checkpoints
/// work on a single array.
class CriticParams {
 public:
  CriticParams() = default;
  /// All-zero parameters.
  CriticParams(std::size_t inputs, std::size_t hidden = kCriticHidden);
  /// Glorot-uniform weights, zero biases.
  static CriticParams glorot(std::size_t inputs, std::size_t hidden, Rng& rng);

  static std::size_t param_count(std::size_t inputs, std::size_t hidden) {
    return hidden * inputs + hidden + hidden * hidden + hidden + hidden + 1;
  }

  std::size_t inputs() const { return n_; }
  std::size_t hidden() const { return h_; }
  std::size_t size() const { return static_cast<std::size_t>(theta_.size()); }

  Eigen::VectorXd& flat() { return theta_; }
  const Eigen::VectorXd& flat() const { return theta_; }

  Eigen::Map<RowMatrix> W1() { return {theta_.data(), rows(), n()}; }
  Eigen::Map<const RowMatrix> W1() const { return {theta_.data(), rows(), n()}; }
  Eigen::Map<Eigen::VectorXd> b1() { return {theta_.data() + off_b1(), rows()}; }
  Eigen::Map<const Eigen::VectorXd> b1() const { return {theta_.data() + off_b1(), rows()}; }
  Eigen::Map<RowMatrix> W2() { return {theta_.data() + off_W2(), rows(), rows()}; }
  Eigen::Map<const RowMatrix> W2() const { return {theta_.data() + off_W2(), rows(), rows()}; }
  Eigen::Map<Eigen::VectorXd> b2() { return {theta_.data() + off_b2(), rows()}; }
  Eigen::Map<const Eigen::VectorXd> b2() const { return {theta_.data() + off_b2(), rows()}; }
  Eigen::Map<Eigen::VectorXd> w3() { return {theta_.data() + off_w3(), rows()}; }
  Eigen::Map<const Eigen::VectorXd> w3() const { return {theta_.data() + off_w3(), rows()}; }
  double& b3() { return theta_[theta_.size() - 1]; }
  double b3() const { return theta_[theta_.size() - 1]; }

  bool all_finite() const { return theta_.allFinite(); }

 private:
  Eigen::Index rows() const { return static_cast<Eigen::Index>(h_); }
  Eigen::Index n() const { return static_cast<Eigen::Index>(n_); }
  Eigen::Index off_b1() const { return rows() * n(); }
  Eigen::Index off_W2() const { return off_b1() + rows(); }
  Eigen::Index off_b2() const { return off_W2() + rows() * rows(); }
  Eigen::Index off_w3() const { return off_b2() + rows(); }

  std::size_t n_ = 0;
  std::size_t h_ = 0;
  Eigen::VectorXd theta_;
};

/// Activations kept from a batched forward pass for the backward pass.
struct ForwardCache {
  Eigen::MatrixXd z1, a1, z2, a2;
  Eigen::VectorXd q;
};

double q_forward(const CriticParams& params, std::span<const double> features);
double q_forward(const CriticParams& params, const Eigen::VectorXd& features);
/// One Q value per column of `features`.
Eigen::VectorXd q_forward_batch(const CriticParams& params, const Eigen::MatrixXd& features,
                                ForwardCache* cache = nullptr);

/// Adds sum_j upstream[j] * dQ(x_j)/dtheta into `grads`.
void accumulate_gradients(const CriticParams& params, const Eigen::MatrixXd& features,
                          const ForwardCache& cache, const Eigen::VectorXd& upstream,
                          CriticParams& grads);

/// dQ(x_j)/dx_j[index] for every column j.
Eigen::VectorXd q_input_partial(const CriticParams& params, const ForwardCache& cache,
                                std::size_t index);

struct LossAndGradients {
  CriticParams grads;
  double loss = 0.0;
};

/// Mean squared error of Q against `targets` with its exact gradient.
/// `ids`, when given, names the items for poisoned-batch diagnostics.
LossAndGradients q_backward(const CriticParams& params, const Eigen::MatrixXd& features,
                            std::span<const double> targets,
                            std::span<const std::string> ids = {});

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t size, AdamConfig cfg = {})
      : m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
        v(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
        config(cfg) {}

  Eigen::VectorXd m, v;
  std::uint64_t step = 0;
  AdamConfig config;
};

void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads, AdamState& state);
inline void adam_step(CriticParams& params, const CriticParams& grads, AdamState& state) {
  adam_step(params.flat(), grads.flat(), state);
}

/// target <- (1 - tau) * target + tau * online, entrywise.
void soft_update(CriticParams& target, const CriticParams& online, double tau);

struct Checkpoint {
  CriticParams online;
  CriticParams target;
  AdamState optimizer;
  /// Free-form metadata; always carries "provider", "variant", "reward", "seed".
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string save_checkpoint(const Checkpoint& ckpt);
/// Rejects bad magic/version, truncation, and (when given) an input width or
/// provider id that differs from the caller's featurizer.
Checkpoint load_checkpoint(std::string_view bytes, std::optional<std::size_t> expected_inputs = {},
                           std::optional<std::string> expected_provider = {});

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::string& path,
                                std::optional<std::size_t> expected_inputs = {},
                                std::optional<std::string> expected_provider = {});

}  // namespace chai
