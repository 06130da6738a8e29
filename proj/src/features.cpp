#include "chai/features.hpp"

#include <cctype>
#include <cmath>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

namespace chai {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::Domain, "embedding dimension must be positive");
}

std::string HashingEmbedder::id() const { return "hashing-" + std::to_string(dim_); }

Eigen::VectorXd HashingEmbedder::embed(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  std::size_t tokens = 0;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a(token);
    const double sign = ((h >> 47) & 1U) ? -1.0 : 1.0;
    v[static_cast<Eigen::Index>(h % dim_)] += sign;
    ++tokens;
    token.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else
      flush();
  }
  flush();
  if (tokens > 0) v /= static_cast<double>(tokens);
  return v;
}

// ---------------------------------------------------------------------------

ExternalEmbeddingClient::ExternalEmbeddingClient(std::string endpoint, std::size_t dim,
                                                 std::shared_ptr<const EmbeddingProvider> fallback,
                                                 std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), dim_(dim), fallback_(std::move(fallback)), timeout_(timeout) {
  if (fallback_ && fallback_->dim() != dim_)
    throw Error(ErrorCode::Contract, "fallback provider dimension differs from the client's");
}

std::string ExternalEmbeddingClient::id() const {
  return "external-" + std::to_string(dim_);
}

Eigen::VectorXd ExternalEmbeddingClient::embed(std::string_view text) const {
  httplib::Result res;
  {
    std::lock_guard lock(mu_);
    httplib::Client client(endpoint_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    json body = {{"texts", json::array({std::string(text)})}};
    res = client.Post("/embed", body.dump(), "application/json");
  }
  if (!res || res->status != 200) {
    if (fallback_) return fallback_->embed(text);
    throw Error(ErrorCode::Provider, "embedding service at " + endpoint_ + " unavailable" +
                                         (res ? " (status " + std::to_string(res->status) + ")"
                                              : ""));
  }
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Contract, std::string("embedding reply is not JSON: ") + e.what());
  }
  if (!reply.contains("vectors") || !reply["vectors"].is_array() || reply["vectors"].size() != 1)
    throw Error(ErrorCode::Contract, "embedding reply must hold exactly one vector");
  const json& vec = reply["vectors"][0];
  if (!vec.is_array() || vec.size() != dim_)
    throw Error(ErrorCode::Contract, "embedding dimension mismatch: expected " +
                                         std::to_string(dim_) + ", got " +
                                         std::to_string(vec.is_array() ? vec.size() : 0));
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < dim_; ++i) {
    if (!vec[i].is_number()) throw Error(ErrorCode::Contract, "non-numeric embedding entry");
    v[static_cast<Eigen::Index>(i)] = vec[i].get<double>();
  }
  return v;
}

// ---------------------------------------------------------------------------

std::string transcript_line(const Turn& turn) {
  std::string line = turn.role == Role::Buyer ? "Buyer: " : "Seller: ";
  switch (turn.rtype) {
    case ResponseType::Message: line += turn.text; break;
    case ResponseType::Offer: line += "offer "; line += kPriceToken; break;
    case ResponseType::Accept: line += "accept"; break;
    case ResponseType::Reject: line += "reject"; break;
  }
  return line;
}

std::string format_transcript(const Scenario& scenario, std::span<const Turn> history) {
  std::string out = "Title: " + scenario.title + "\nDescription: " + scenario.description + "\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0) out += '\n';
    out += transcript_line(history[i]);
  }
  return out;
}

std::string format_transcript(const Scenario& scenario, std::span<const Turn> history,
                              const Turn& next) {
  std::string out = format_transcript(scenario, history);
  if (!history.empty()) out += '\n';
  out += transcript_line(next);
  return out;
}

// ---------------------------------------------------------------------------

Featurizer::Featurizer(std::shared_ptr<const EmbeddingProvider> provider)
    : provider_(std::move(provider)), d_(provider_ ? provider_->dim() : 0) {
  if (!provider_) throw Error(ErrorCode::Provider, "featurizer needs an embedding provider");
}

void Featurizer::write_price_type(Eigen::Ref<Eigen::VectorXd> slot, std::optional<double> price,
                                  std::optional<ResponseType> type) const {
  slot.setZero();
  slot[0] = price.value_or(0.0);
  if (type) slot[1 + static_cast<int>(*type)] = 1.0;
}

Eigen::VectorXd Featurizer::state_part(const DialogueState& state) const {
  const auto d = static_cast<Eigen::Index>(d_);
  Eigen::VectorXd out(static_cast<Eigen::Index>(half_size()));
  Eigen::VectorXd e = provider_->embed(format_transcript(*state.scenario, state.history));
  if (e.size() != d) throw Error(ErrorCode::Contract, "embedding dimension changed");
  out.head(d) = e;
  if (state.history.empty())
    write_price_type(out.tail(1 + kNumResponseTypes), std::nullopt, std::nullopt);
  else
    write_price_type(out.tail(1 + kNumResponseTypes), state.history.back().price,
                     state.history.back().rtype);
  return out;
}

Eigen::VectorXd Featurizer::action_part(const DialogueState& state, const Turn& action) const {
  const auto d = static_cast<Eigen::Index>(d_);
  Eigen::VectorXd out(static_cast<Eigen::Index>(half_size()));
  Eigen::VectorXd e = provider_->embed(format_transcript(*state.scenario, state.history, action));
  if (e.size() != d) throw Error(ErrorCode::Contract, "embedding dimension changed");
  out.head(d) = e;
  write_price_type(out.tail(1 + kNumResponseTypes), action.price, action.rtype);
  return out;
}

Eigen::VectorXd Featurizer::featurize(const DialogueState& state, const Turn& action) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(feature_size()));
  const auto half = static_cast<Eigen::Index>(half_size());
  x.head(half) = state_part(state);
  x.tail(half) = action_part(state, action);
  return x;
}

Eigen::MatrixXd Featurizer::featurize_batch(const DialogueState& state,
                                            std::span<const Turn> actions) const {
  const auto half = static_cast<Eigen::Index>(half_size());
  const auto d = static_cast<Eigen::Index>(d_);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(feature_size()),
                    static_cast<Eigen::Index>(actions.size()));
  if (actions.empty()) return x;
  const Eigen::VectorXd s = state_part(state);
  const std::string prefix = format_transcript(*state.scenario, state.history);
  std::unordered_map<std::string, Eigen::VectorXd> memo;
  for (std::size_t j = 0; j < actions.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    x.col(col).head(half) = s;
    std::string line = transcript_line(actions[j]);
    auto it = memo.find(line);
    if (it == memo.end()) {
      std::string text = prefix;
      if (!state.history.empty()) text += '\n';
      text += line;
      Eigen::VectorXd e = provider_->embed(text);
      if (e.size() != d) throw Error(ErrorCode::Contract, "embedding dimension changed");
      it = memo.emplace(std::move(line), std::move(e)).first;
    }
    x.col(col).segment(half, d) = it->second;
    Eigen::VectorXd slot(1 + kNumResponseTypes);
    write_price_type(slot, actions[j].price, actions[j].rtype);
    x.col(col).tail(1 + kNumResponseTypes) = slot;
  }
  return x;
}

}  // namespace chai
