#include "chai/critic.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chai/error.hpp"

namespace chai {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

CriticParams::CriticParams(std::size_t inputs, std::size_t hidden)
    : n_(inputs),
      h_(hidden),
      theta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(inputs, hidden)))) {
  if (inputs == 0 || hidden == 0) throw Error(ErrorCode::Shape, "critic dimensions must be positive");
}

CriticParams CriticParams::glorot(std::size_t inputs, std::size_t hidden, Rng& rng) {
  CriticParams p(inputs, hidden);
  auto fill = [&rng](auto&& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  const auto n = static_cast<double>(inputs), h = static_cast<double>(hidden);
  fill(p.W1(), n, h);
  fill(p.W2(), h, h);
  fill(p.w3(), h, 1.0);
  return p;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd q_forward_batch(const CriticParams& params, const Eigen::MatrixXd& features,
                                ForwardCache* cache) {
  if (static_cast<std::size_t>(features.rows()) != params.inputs())
    throw Error(ErrorCode::Shape, "feature length " + std::to_string(features.rows()) +
                                      " does not match critic input " +
                                      std::to_string(params.inputs()));
  Eigen::MatrixXd z1 = params.W1() * features;
  z1.colwise() += params.b1();
  Eigen::MatrixXd a1 = z1.cwiseMax(0.0);
  Eigen::MatrixXd z2 = params.W2() * a1;
  z2.colwise() += params.b2();
  Eigen::MatrixXd a2 = z2.cwiseMax(0.0);
  Eigen::VectorXd q = (a2.transpose() * params.w3()).array() + params.b3();
  if (cache) {
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
    cache->q = q;
  }
  return q;
}

double q_forward(const CriticParams& params, const Eigen::VectorXd& features) {
  if (static_cast<std::size_t>(features.size()) != params.inputs())
    throw Error(ErrorCode::Shape, "feature length " + std::to_string(features.size()) +
                                      " does not match critic input " +
                                      std::to_string(params.inputs()));
  Eigen::VectorXd a1 = (params.W1() * features + params.b1()).cwiseMax(0.0);
  Eigen::VectorXd a2 = (params.W2() * a1 + params.b2()).cwiseMax(0.0);
  return params.w3().dot(a2) + params.b3();
}

double q_forward(const CriticParams& params, std::span<const double> features) {
  Eigen::Map<const Eigen::VectorXd> x(features.data(), static_cast<Eigen::Index>(features.size()));
  return q_forward(params, Eigen::VectorXd(x));
}

namespace {

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& z) {
  return (z.array() > 0.0).cast<double>().matrix();
}

}  // namespace

void accumulate_gradients(const CriticParams& params, const Eigen::MatrixXd& features,
                          const ForwardCache& cache, const Eigen::VectorXd& upstream,
                          CriticParams& grads) {
  if (grads.size() != params.size()) grads = CriticParams(params.inputs(), params.hidden());
  grads.w3().noalias() += cache.a2 * upstream;
  grads.b3() += upstream.sum();
  Eigen::MatrixXd d2 = (params.w3() * upstream.transpose()).cwiseProduct(relu_mask(cache.z2));
  grads.W2().noalias() += d2 * cache.a1.transpose();
  grads.b2() += d2.rowwise().sum();
  Eigen::MatrixXd d1 = (params.W2().transpose() * d2).cwiseProduct(relu_mask(cache.z1));
  grads.W1().noalias() += d1 * features.transpose();
  grads.b1() += d1.rowwise().sum();
}

Eigen::VectorXd q_input_partial(const CriticParams& params, const ForwardCache& cache,
                                std::size_t index) {
  const Eigen::Index batch = cache.z2.cols();
  Eigen::MatrixXd d2 = params.w3().replicate(1, batch).cwiseProduct(relu_mask(cache.z2));
  Eigen::MatrixXd d1 = (params.W2().transpose() * d2).cwiseProduct(relu_mask(cache.z1));
  return d1.transpose() * params.W1().col(static_cast<Eigen::Index>(index));
}

LossAndGradients q_backward(const CriticParams& params, const Eigen::MatrixXd& features,
                            std::span<const double> targets, std::span<const std::string> ids) {
  const auto batch = static_cast<std::size_t>(features.cols());
  if (batch == 0) throw Error(ErrorCode::Shape, "empty batch");
  if (targets.size() != batch) throw Error(ErrorCode::Shape, "targets/features size mismatch");
  for (std::size_t i = 0; i < batch; ++i)
    if (!std::isfinite(targets[i]))
      throw Error(ErrorCode::PoisonedBatch,
                  "non-finite target for " + (i < ids.size() ? "transition " + ids[i]
                                                             : "item " + std::to_string(i)));
  ForwardCache cache;
  q_forward_batch(params, features, &cache);
  Eigen::Map<const Eigen::VectorXd> t(targets.data(), static_cast<Eigen::Index>(batch));
  const Eigen::VectorXd err = cache.q - t;
  LossAndGradients out{CriticParams(params.inputs(), params.hidden()),
                       err.squaredNorm() / static_cast<double>(batch)};
  accumulate_gradients(params, features, cache, 2.0 * err / static_cast<double>(batch), out.grads);
  return out;
}

// ---------------------------------------------------------------------------

void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw Error(ErrorCode::Shape, "adam: parameter/gradient/moment sizes differ");
  const AdamConfig& c = state.config;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= c.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

void soft_update(CriticParams& target, const CriticParams& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::Domain, "tau must lie in (0, 1]");
  if (target.size() != online.size()) throw Error(ErrorCode::Shape, "soft_update shape mismatch");
  target.flat() = (1.0 - tau) * target.flat() + tau * online.flat();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'H', 'A', 'I'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_array(std::string& out, const Eigen::VectorXd& v) {
  out.append(reinterpret_cast<const char*>(v.data()),
             static_cast<std::size_t>(v.size()) * sizeof(double));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void get_array(Eigen::VectorXd& v) {
    const std::size_t n = static_cast<std::size_t>(v.size()) * sizeof(double);
    need(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::Checkpoint, "checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string save_checkpoint(const Checkpoint& ckpt) {
  const CriticParams& p = ckpt.online;
  if (ckpt.target.size() != p.size() || ckpt.optimizer.m.size() != static_cast<Eigen::Index>(p.size()))
    throw Error(ErrorCode::Checkpoint, "checkpoint parts have inconsistent shapes");
  std::string out;
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.inputs()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.hidden()));
  put_array(out, p.flat());
  put_array(out, ckpt.target.flat());
  const AdamState& opt = ckpt.optimizer;
  put<std::uint64_t>(out, opt.step);
  put<double>(out, opt.config.lr);
  put<double>(out, opt.config.beta1);
  put<double>(out, opt.config.beta2);
  put<double>(out, opt.config.eps);
  put_array(out, opt.m);
  put_array(out, opt.v);
  const std::string meta = ckpt.meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  return out;
}

Checkpoint load_checkpoint(std::string_view bytes, std::optional<std::size_t> expected_inputs,
                           std::optional<std::string> expected_provider) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4))
    throw Error(ErrorCode::Checkpoint, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::Checkpoint, "unsupported checkpoint version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  if (n == 0 || h == 0) throw Error(ErrorCode::Checkpoint, "checkpoint has zero-sized layers");
  if (expected_inputs && *expected_inputs != n)
    throw Error(ErrorCode::Checkpoint, "checkpoint expects " + std::to_string(n) +
                                           " input features, featurizer produces " +
                                           std::to_string(*expected_inputs));
  if (CriticParams::param_count(n, h) * sizeof(double) > bytes.size())
    throw Error(ErrorCode::Checkpoint, "checkpoint truncated");
  Checkpoint ckpt;
  ckpt.online = CriticParams(n, h);
  ckpt.target = CriticParams(n, h);
  r.get_array(ckpt.online.flat());
  r.get_array(ckpt.target.flat());
  AdamState opt(ckpt.online.size());
  opt.step = r.get<std::uint64_t>();
  opt.config.lr = r.get<double>();
  opt.config.beta1 = r.get<double>();
  opt.config.beta2 = r.get<double>();
  opt.config.eps = r.get<double>();
  r.get_array(opt.m);
  r.get_array(opt.v);
  ckpt.optimizer = std::move(opt);
  const auto meta_len = r.get<std::uint32_t>();
  const std::string_view meta = r.take(meta_len);
  if (!r.done()) throw Error(ErrorCode::Checkpoint, "trailing bytes after metadata");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Checkpoint, std::string("bad metadata trailer: ") + e.what());
  }
  if (expected_provider && ckpt.meta.value("provider", std::string()) != *expected_provider)
    throw Error(ErrorCode::Checkpoint, "checkpoint was trained with provider '" +
                                           ckpt.meta.value("provider", std::string("?")) +
                                           "', current provider is '" + *expected_provider + "'");
  return ckpt;
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  const std::string bytes = save_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::Io, "failed writing " + path);
}

Checkpoint read_checkpoint_file(const std::string& path, std::optional<std::size_t> expected_inputs,
                                std::optional<std::string> expected_provider) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return load_checkpoint(ss.str(), expected_inputs, std::move(expected_provider));
}

}  // namespace chai
