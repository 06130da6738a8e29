#include "chai/offline_rl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace chai {

std::string_view to_string(TrainerVariant v) {
  switch (v) {
    case TrainerVariant::Prop: return "prop";
    case TrainerVariant::Cql: return "cql";
    case TrainerVariant::Brac: return "brac";
  }
  return "?";
}

TrainerVariant parse_trainer_variant(std::string_view s) {
  if (s == "prop") return TrainerVariant::Prop;
  if (s == "cql") return TrainerVariant::Cql;
  if (s == "brac") return TrainerVariant::Brac;
  throw Error(ErrorCode::Parse, "unknown variant '" + std::string(s) + "' (expected prop, cql or brac)");
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Domain, m); };
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
  if (!(tau > 0.0 && tau <= 1.0)) fail("tau must be in (0, 1]");
  if (!(lr > 0.0) || !(proposal_lr > 0.0)) fail("learning rates must be > 0");
  if (batch_size == 0) fail("batch size must be >= 1");
  if (n_target_utterances == 0 || n_target_prices == 0) fail("target candidate counts must be >= 1");
  if (hidden == 0 || proposal_hidden == 0) fail("hidden sizes must be >= 1");
  if (cache_k == 0) fail("cache k must be >= 1");
}

namespace {

Eigen::MatrixXd hstack(const std::vector<Eigen::MatrixXd>& blocks, Eigen::Index rows) {
  Eigen::Index cols = 0;
  for (const auto& b : blocks) cols += b.cols();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

std::span<const double> segment(const Eigen::VectorXd& v, Eigen::Index start, Eigen::Index len) {
  return {v.data() + start, static_cast<std::size_t>(len)};
}

std::vector<CandidateAction> enumerate_or_regenerate(std::vector<std::string> templates,
                                                     std::span<const double> prices,
                                                     const DialogueState& state,
                                                     const TargetContext& ctx,
                                                     const std::string& id, Rng& rng) {
  try {
    return enumerate_actions(templates, prices, state);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyCandidates) throw;
  }
  if (ctx.generator) {
    templates = ctx.generator->propose(*state.scenario, state.history, templates.size(), rng());
    try {
      return enumerate_actions(templates, prices, state);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyCandidates) throw;
    }
  }
  throw Error(ErrorCode::Target, "no legal candidates for transition " + id + " after regenerating");
}

const Featurizer& featurizer_of(const TargetContext& ctx) {
  if (!ctx.featurizer) throw Error(ErrorCode::Target, "training context has no featurizer");
  return *ctx.featurizer;
}

}  // namespace

std::string successor_id(const std::string& transition_id) {
  const auto colon = transition_id.rfind(':');
  if (colon == std::string::npos) return {};
  try {
    const auto j = std::stoull(transition_id.substr(colon + 1));
    return transition_id.substr(0, colon + 1) + std::to_string(j + 1);
  } catch (const std::exception&) {
    return {};
  }
}

std::vector<std::string> resample_templates(const TargetContext& ctx, const std::string& id,
                                            const DialogueState& state, std::size_t n, Rng& rng) {
  if (ctx.cache) {
    if (const auto* entry = ctx.cache->find(id); entry && !entry->empty()) {
      std::vector<std::string> out;
      out.reserve(n);
      for (std::size_t i = 0; i < n; ++i) out.push_back((*entry)[uniform_index(rng, entry->size())]);
      return out;
    }
  }
  if (!ctx.generator) throw Error(ErrorCode::Target, "no cached candidates for " + id + " and no generator");
  auto out = ctx.generator->propose(*state.scenario, state.history, n, rng());
  if (out.empty()) throw Error(ErrorCode::Target, "generator proposed nothing for " + id);
  return out;
}

double bellman_backup(double reward, double gamma, std::span<const double> q, Backup mode) {
  if (q.empty()) throw Error(ErrorCode::EmptyCandidates, "bellman backup over an empty candidate set");
  double agg = 0.0;
  if (mode == Backup::Max) {
    agg = *std::max_element(q.begin(), q.end());
  } else {
    for (double v : q) agg += v;
    agg /= static_cast<double>(q.size());
  }
  return reward + gamma * agg;
}

std::vector<CandidateAction> draw_prop_candidates(const Transition& t, const TargetContext& ctx,
                                                  const TrainerConfig& cfg, Rng& rng) {
  const std::string next = successor_id(t.id);
  auto templates = resample_templates(ctx, next, t.next_state, cfg.n_target_utterances, rng);
  const auto prices = sample_prices(seller_reference_price(t.next_state), cfg.n_target_prices, rng);
  return enumerate_or_regenerate(std::move(templates), prices, t.next_state, ctx, t.id, rng);
}

double compute_target_prop(const Transition& t, const TargetContext& ctx,
                           const CriticParams& target, const TrainerConfig& cfg, Rng& rng) {
  if (t.terminal) return t.reward;
  const auto candidates = draw_prop_candidates(t, ctx, cfg, rng);
  const auto turns = to_turns(candidates);
  const Eigen::VectorXd q = q_forward_batch(target, featurizer_of(ctx).featurize_batch(t.next_state, turns));
  return bellman_backup(t.reward, cfg.gamma, segment(q, 0, q.size()), Backup::Max);
}

// ---------------------------------------------------------------------------

LogSumExpPenalty cql_penalty(const Eigen::VectorXd& q, std::size_t data_index) {
  if (q.size() == 0) throw Error(ErrorCode::EmptyCandidates, "cql penalty over an empty candidate set");
  if (data_index >= static_cast<std::size_t>(q.size()))
    throw Error(ErrorCode::Shape, "dataset action index out of range");
  const double m = q.maxCoeff();
  const Eigen::VectorXd e = (q.array() - m).exp().matrix();
  const double z = e.sum();
  LogSumExpPenalty out;
  out.value = m + std::log(z) - q[static_cast<Eigen::Index>(data_index)];
  out.dq = e / z;
  out.dq[static_cast<Eigen::Index>(data_index)] -= 1.0;
  return out;
}

CandidateAction to_candidate(const Turn& turn) { return {turn.text, turn.rtype, turn.price}; }

std::size_t include_action(std::vector<CandidateAction>& candidates, const CandidateAction& action) {
  auto it = std::find(candidates.begin(), candidates.end(), action);
  if (it != candidates.end()) return static_cast<std::size_t>(it - candidates.begin());
  candidates.push_back(action);
  return candidates.size() - 1;
}

CqlTerm cql_penalty(const DialogueState& state, const CandidateAction& dataset_action,
                    std::vector<CandidateAction> candidates, const CriticParams& params,
                    const Featurizer& featurizer) {
  const std::size_t idx = include_action(candidates, dataset_action);
  const Eigen::MatrixXd x = featurizer.featurize_batch(state, to_turns(candidates));
  ForwardCache cache;
  const Eigen::VectorXd q = q_forward_batch(params, x, &cache);
  const auto pen = cql_penalty(q, idx);
  CqlTerm out{pen.value, CriticParams(params.inputs(), params.hidden())};
  accumulate_gradients(params, x, cache, pen.dq, out.grads);
  return out;
}

// ---------------------------------------------------------------------------

double gaussian_kl(Gaussian p, Gaussian q) {
  if (!(p.std > 0.0) || !(q.std > 0.0) || !std::isfinite(p.std) || !std::isfinite(q.std))
    throw Error(ErrorCode::Domain, "gaussian std must be positive and finite");
  if (!std::isfinite(p.mean) || !std::isfinite(q.mean))
    throw Error(ErrorCode::Domain, "gaussian mean must be finite");
  const double d = p.mean - q.mean;
  return std::log(q.std / p.std) + (p.std * p.std + d * d) / (2.0 * q.std * q.std) - 0.5;
}

Gaussian PriorProposal::at(double prev) const {
  return {mean_slope * prev + mean_intercept, std::max(std_floor, std_slope * prev + std_intercept)};
}

namespace {

struct LineFit {
  double slope = 0.0, intercept = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx / n < 1e-12) return {0.0, my};
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

}  // namespace

PriorProposal fit_prior_proposal(std::span<const Transition> transitions) {
  std::vector<double> prev, cur;
  for (const auto& t : transitions) {
    if (t.action.role != Role::Seller || !t.action.price) continue;
    prev.push_back(seller_reference_price(t.state));
    cur.push_back(*t.action.price);
  }
  if (prev.size() < 2)
    throw Error(ErrorCode::Fit, "need at least 2 priced seller turns to fit the price prior, found " +
                                    std::to_string(prev.size()));
  const LineFit mean = least_squares(prev, cur);
  std::vector<double> spread(prev.size());
  const double scale = std::sqrt(std::numbers::pi / 2.0);
  for (std::size_t i = 0; i < prev.size(); ++i)
    spread[i] = std::abs(cur[i] - (mean.slope * prev[i] + mean.intercept)) * scale;
  const LineFit sd = least_squares(prev, spread);
  PriorProposal out;
  out.mean_slope = mean.slope;
  out.mean_intercept = mean.intercept;
  out.std_slope = sd.slope;
  out.std_intercept = sd.intercept;
  return out;
}

PriceProposalNet::PriceProposalNet(std::size_t inputs, std::size_t hidden)
    : m_(inputs), h_(hidden),
      theta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden * inputs + 3 * hidden + 2))) {}

PriceProposalNet PriceProposalNet::random(std::size_t inputs, std::size_t hidden, Rng& rng,
                                          double output_scale) {
  PriceProposalNet net(inputs, hidden);
  const double lim_h = std::sqrt(6.0 / static_cast<double>(inputs + hidden));
  const double lim_o = std::sqrt(6.0 / static_cast<double>(hidden + 2)) * output_scale;
  std::uniform_real_distribution<double> uh(-lim_h, lim_h), uo(-1.0, 1.0);
  const Eigen::Index nh = net.hh() * net.mm();
  for (Eigen::Index i = 0; i < nh; ++i) net.theta_[i] = uh(rng);
  const Eigen::Index wo = nh + net.hh();
  for (Eigen::Index i = 0; i < 2 * net.hh(); ++i) net.theta_[wo + i] = lim_o * uo(rng);
  return net;
}

PriceProposalNet::Output PriceProposalNet::forward(const Eigen::VectorXd& input,
                                                   const PriorProposal& prior, double prev) const {
  if (input.size() != mm()) throw Error(ErrorCode::Shape, "proposal input has the wrong width");
  Output out;
  out.hidden_pre = Wh() * input + bh();
  const Eigen::VectorXd a = out.hidden_pre.cwiseMax(0.0);
  const Eigen::Vector2d o = Wo() * a + bo();
  const Gaussian base = prior.at(prev);
  const double raw = std::log(base.std) + o[1];
  const double log_std = std::clamp(raw, kMinLogStd, kMaxLogStd);
  out.log_std_clamped = raw != log_std;
  out.dist = {base.mean + o[0], std::exp(log_std)};
  return out;
}

void PriceProposalNet::backward(const Eigen::VectorXd& input, const Output& out, double dmean,
                                double dlogstd, Eigen::VectorXd& grads) const {
  if (grads.size() != theta_.size()) grads = Eigen::VectorXd::Zero(theta_.size());
  const Eigen::Vector2d go(dmean, out.log_std_clamped ? 0.0 : dlogstd);
  const Eigen::VectorXd a = out.hidden_pre.cwiseMax(0.0);
  const Eigen::Index nh = hh() * mm();
  Eigen::Map<RowMatrix> gWh(grads.data(), hh(), mm());
  Eigen::Map<Eigen::VectorXd> gbh(grads.data() + nh, hh());
  Eigen::Map<RowMatrix> gWo(grads.data() + nh + hh(), 2, hh());
  Eigen::Map<Eigen::VectorXd> gbo(grads.data() + nh + 3 * hh(), 2);
  gWo.noalias() += go * a.transpose();
  gbo += go;
  const Eigen::VectorXd dpre =
      ((Wo().transpose() * go).array() * (out.hidden_pre.array() > 0.0).cast<double>()).matrix();
  gWh.noalias() += dpre * input.transpose();
  gbh += dpre;
}

Eigen::VectorXd proposal_input(const DialogueState& state, const Featurizer& featurizer) {
  const Eigen::VectorXd s = featurizer.state_part(state);
  Eigen::VectorXd x(s.size() + 1);
  x << s, seller_reference_price(state);
  return x;
}

SampledActions sample_proposal_actions(const DialogueState& state,
                                       std::span<const std::string> templates, Gaussian dist,
                                       std::size_t count, Rng& rng) {
  std::vector<const std::string*> messages;
  for (const auto& t : templates)
    if (infer_type(t) == ResponseType::Message) messages.push_back(&t);
  std::vector<ResponseType> types{ResponseType::Offer};
  if (!messages.empty()) types.push_back(ResponseType::Message);
  if (state.can_close(Role::Seller)) {
    types.push_back(ResponseType::Accept);
    types.push_back(ResponseType::Reject);
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  SampledActions out;
  auto draw_price = [&](double& eps, bool& active) {
    eps = normal(rng);
    const double raw = dist.mean + dist.std * eps;
    const double p = std::clamp(raw, 0.0, kMaxProposalPrice);
    active = p == raw;
    return p;
  };
  for (std::size_t j = 0; j < count; ++j) {
    const ResponseType type = types[uniform_index(rng, types.size())];
    double eps = 0.0;
    bool active = false;
    CandidateAction a;
    a.rtype = type;
    switch (type) {
      case ResponseType::Offer:
        a.text = "offer <PRICE>";
        a.price = draw_price(eps, active);
        break;
      case ResponseType::Message: {
        a.text = *messages[uniform_index(rng, messages.size())];
        if (a.text.find(kPriceToken) != std::string::npos) a.price = draw_price(eps, active);
        break;
      }
      case ResponseType::Accept:
      case ResponseType::Reject:
        a.text = std::string(to_string(type));
        break;
    }
    out.actions.push_back(std::move(a));
    out.noise.push_back(eps);
    out.price_active.push_back(active);
  }
  return out;
}

namespace {

struct BracDraw {
  SampledActions sampled;
  PriceProposalNet::Output proposal;
};

BracDraw draw_brac(const DialogueState& state, const std::string& id, const PriceProposalNet& phi,
                   const PriorProposal& prior, const TargetContext& ctx, const TrainerConfig& cfg,
                   Rng& rng) {
  const Featurizer& fz = featurizer_of(ctx);
  BracDraw out;
  out.proposal = phi.forward(proposal_input(state, fz), prior, seller_reference_price(state));
  const auto templates = resample_templates(ctx, id, state, cfg.n_target_utterances, rng);
  out.sampled = sample_proposal_actions(state, templates, out.proposal.dist,
                                        cfg.n_target_utterances * cfg.n_target_prices, rng);
  return out;
}

}  // namespace

double compute_target_brac(const Transition& t, const PriceProposalNet& phi,
                           const PriorProposal& prior, const TargetContext& ctx,
                           const CriticParams& target, const TrainerConfig& cfg, Rng& rng) {
  if (t.terminal) return t.reward;
  const auto draw = draw_brac(t.next_state, successor_id(t.id), phi, prior, ctx, cfg, rng);
  const Eigen::VectorXd q = q_forward_batch(
      target, featurizer_of(ctx).featurize_batch(t.next_state, to_turns(draw.sampled.actions)));
  return bellman_backup(t.reward, cfg.gamma, segment(q, 0, q.size()), Backup::Mean);
}

ProposalGradient price_proposal_gradient(const PriceProposalNet& phi,
                                         std::span<const Transition* const> batch,
                                         const PriorProposal& prior, const CriticParams& critic,
                                         const TargetContext& ctx, const TrainerConfig& cfg,
                                         Rng& rng) {
  if (batch.empty()) throw Error(ErrorCode::Shape, "empty batch");
  const Featurizer& fz = featurizer_of(ctx);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ProposalGradient out;
  out.grad = Eigen::VectorXd::Zero(phi.flat().size());
  for (const Transition* t : batch) {
    const DialogueState& s = t->state;
    const Eigen::VectorXd x = proposal_input(s, fz);
    const auto draw = draw_brac(s, t->id, phi, prior, ctx, cfg, rng);
    const auto& sa = draw.sampled;
    ForwardCache cache;
    const Eigen::VectorXd q =
        q_forward_batch(critic, fz.featurize_batch(s, to_turns(sa.actions)), &cache);
    const Eigen::VectorXd dq = q_input_partial(critic, cache, fz.action_price_index());
    const Gaussian pi = draw.proposal.dist;
    double dmean = 0.0, dlogstd = 0.0;
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      if (!sa.price_active[static_cast<std::size_t>(j)]) continue;
      dmean += dq[j];
      dlogstd += dq[j] * sa.noise[static_cast<std::size_t>(j)] * pi.std;
    }
    const double m = static_cast<double>(q.size());
    dmean /= m;
    dlogstd /= m;
    const Gaussian base = prior.at(seller_reference_price(s));
    const double kl = gaussian_kl(pi, base);
    dmean -= (pi.mean - base.mean) / (base.std * base.std);
    dlogstd -= pi.std * pi.std / (base.std * base.std) - 1.0;
    phi.backward(x, draw.proposal, dmean * inv_b, dlogstd * inv_b, out.grad);
    out.objective += (q.mean() - kl) * inv_b;
    out.kl += kl * inv_b;
  }
  return out;
}

ProposalGradient train_price_proposal(PriceProposalNet& phi, AdamState& opt,
                                      std::span<const Transition* const> batch,
                                      const PriorProposal& prior, const CriticParams& critic,
                                      const TargetContext& ctx, const TrainerConfig& cfg,
                                      Rng& rng) {
  auto g = price_proposal_gradient(phi, batch, prior, critic, ctx, cfg, rng);
  if (!g.grad.allFinite() || !std::isfinite(g.objective))
    throw Error(ErrorCode::NonFinite, "price proposal objective became non-finite");
  adam_step(phi.flat(), -g.grad, opt);
  return g;
}

// ---------------------------------------------------------------------------

StepMetrics train_step(TrainerNets& nets, std::span<const Transition* const> batch,
                       const TargetContext& ctx, const TrainerConfig& cfg, Rng& rng) {
  if (batch.empty()) throw Error(ErrorCode::Shape, "empty batch");
  const Featurizer& fz = featurizer_of(ctx);
  const auto rows = static_cast<Eigen::Index>(fz.feature_size());
  const auto bsz = static_cast<Eigen::Index>(batch.size());
  const bool brac = cfg.variant == TrainerVariant::Brac;
  if (brac && (!nets.prior || !nets.proposal))
    throw Error(ErrorCode::Target, "brac training needs a fitted prior and a price proposal");

  // Targets, with every candidate of the batch evaluated in one pass.
  Eigen::VectorXd y(bsz);
  {
    std::vector<Eigen::MatrixXd> blocks;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> spans(batch.size(), {0, 0});
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Transition& t = *batch[i];
      if (t.terminal) continue;
      std::vector<CandidateAction> cands =
          brac ? draw_brac(t.next_state, successor_id(t.id), *nets.proposal, *nets.prior, ctx, cfg, rng)
                     .sampled.actions
               : draw_prop_candidates(t, ctx, cfg, rng);
      blocks.push_back(fz.featurize_batch(t.next_state, to_turns(cands)));
      spans[i] = {at, blocks.back().cols()};
      at += blocks.back().cols();
    }
    Eigen::VectorXd qn;
    if (!blocks.empty()) qn = q_forward_batch(nets.target, hstack(blocks, rows));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Transition& t = *batch[i];
      const auto ii = static_cast<Eigen::Index>(i);
      y[ii] = t.terminal ? t.reward
                         : bellman_backup(t.reward, cfg.gamma, segment(qn, spans[i].first, spans[i].second),
                                          brac ? Backup::Mean : Backup::Max);
    }
  }

  Eigen::MatrixXd xd(rows, bsz);
  for (std::size_t i = 0; i < batch.size(); ++i)
    xd.col(static_cast<Eigen::Index>(i)) = fz.featurize(batch[i]->state, batch[i]->action);
  ForwardCache cache;
  const Eigen::VectorXd q = q_forward_batch(nets.critic, xd, &cache);
  const Eigen::VectorXd err = q - y;
  StepMetrics metrics;
  metrics.loss = err.squaredNorm() / static_cast<double>(bsz);
  metrics.q_mean = q.mean();
  CriticParams grads(nets.critic.inputs(), nets.critic.hidden());
  accumulate_gradients(nets.critic, xd, cache, err * (2.0 / static_cast<double>(bsz)), grads);

  if (cfg.variant == TrainerVariant::Cql) {
    std::vector<Eigen::MatrixXd> blocks;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> spans;
    std::vector<std::size_t> data_index;
    Eigen::Index at = 0;
    for (const Transition* t : batch) {
      auto templates = resample_templates(ctx, t->id, t->state, cfg.n_target_utterances, rng);
      const auto prices = sample_prices(seller_reference_price(t->state), cfg.n_target_prices, rng);
      auto cands = enumerate_or_regenerate(std::move(templates), prices, t->state, ctx, t->id, rng);
      data_index.push_back(include_action(cands, to_candidate(t->action)));
      blocks.push_back(fz.featurize_batch(t->state, to_turns(cands)));
      spans.emplace_back(at, blocks.back().cols());
      at += blocks.back().cols();
    }
    const Eigen::MatrixXd xc = hstack(blocks, rows);
    ForwardCache ccache;
    const Eigen::VectorXd qc = q_forward_batch(nets.critic, xc, &ccache);
    Eigen::VectorXd upstream(qc.size());
    double total = 0.0;
    const double scale = cfg.alpha / static_cast<double>(bsz);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto [start, len] = spans[i];
      const auto pen = cql_penalty(Eigen::VectorXd(qc.segment(start, len)), data_index[i]);
      total += pen.value;
      upstream.segment(start, len) = pen.dq * scale;
    }
    metrics.cql = total / static_cast<double>(bsz);
    accumulate_gradients(nets.critic, xc, ccache, upstream, grads);
  }

  if (!std::isfinite(metrics.loss) || !std::isfinite(metrics.cql) || !grads.all_finite()) {
    std::string ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (!std::isfinite(q[ii]) || !std::isfinite(y[ii])) ids += (ids.empty() ? "" : ", ") + batch[i]->id;
    }
    if (ids.empty())
      for (const Transition* t : batch) ids += (ids.empty() ? "" : ", ") + t->id;
    throw Error(ErrorCode::NonFinite, "non-finite training loss; offending transitions: " + ids);
  }

  adam_step(nets.critic, grads, nets.optimizer);
  soft_update(nets.target, nets.critic, cfg.tau);

  if (brac)
    train_price_proposal(*nets.proposal, nets.proposal_optimizer, batch, *nets.prior, nets.critic,
                         ctx, cfg, rng);
  return metrics;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(std::vector<Transition> transitions, CandidateCache cache,
                 std::shared_ptr<const CandidateGenerator> generator,
                 std::shared_ptr<const Featurizer> featurizer, TrainerConfig cfg)
    : transitions_(std::move(transitions)),
      cache_(std::move(cache)),
      generator_(std::move(generator)),
      featurizer_(std::move(featurizer)),
      cfg_(cfg),
      rng_(cfg.seed) {
  cfg_.validate();
  if (!featurizer_) throw Error(ErrorCode::Target, "trainer needs a featurizer");
  if (transitions_.empty()) throw Error(ErrorCode::Validation, "no transitions to train on");
  validate_cache(cache_, transitions_);
  const std::size_t n = featurizer_->feature_size();
  nets_.critic = CriticParams::glorot(n, cfg_.hidden, rng_);
  nets_.target = nets_.critic;
  nets_.optimizer = AdamState(nets_.critic.size(), AdamConfig{cfg_.lr});
  if (cfg_.variant == TrainerVariant::Brac) {
    nets_.prior = fit_prior_proposal(transitions_);
    nets_.proposal =
        PriceProposalNet::random(featurizer_->half_size() + 1, cfg_.proposal_hidden, rng_, 0.0);
    nets_.proposal_optimizer =
        AdamState(static_cast<std::size_t>(nets_.proposal->flat().size()), AdamConfig{cfg_.proposal_lr});
  }
}

StepMetrics Trainer::step() {
  std::vector<const Transition*> batch(cfg_.batch_size);
  for (auto& p : batch) p = &transitions_[uniform_index(rng_, transitions_.size())];
  StepMetrics m = train_step(nets_, batch, context(), cfg_, rng_);
  m.step = ++steps_;
  return m;
}

void Trainer::run(std::size_t steps, std::ostream* metrics) {
  for (std::size_t i = 0; i < steps; ++i) {
    const StepMetrics m = step();
    if (metrics)
      *metrics << nlohmann::json{{"step", m.step}, {"loss", m.loss}, {"cql", m.cql}, {"q_mean", m.q_mean}}.dump()
               << '\n';
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c{nets_.critic, nets_.target, nets_.optimizer, nlohmann::json::object()};
  c.meta = {{"provider", featurizer_->provider().id()},
            {"embed_dim", featurizer_->embed_dim()},
            {"variant", to_string(cfg_.variant)},
            {"reward", to_string(cfg_.reward)},
            {"seed", cfg_.seed},
            {"steps", steps_},
            {"gamma", cfg_.gamma},
            {"alpha", cfg_.alpha},
            {"tau", cfg_.tau},
            {"lr", cfg_.lr},
            {"batch", cfg_.batch_size},
            {"hidden", cfg_.hidden}};
  if (nets_.prior)
    c.meta["price_prior"] = {{"mean_slope", nets_.prior->mean_slope},
                             {"mean_intercept", nets_.prior->mean_intercept},
                             {"std_slope", nets_.prior->std_slope},
                             {"std_intercept", nets_.prior->std_intercept}};
  return c;
}

Trainer make_trainer(const Corpus& corpus, std::shared_ptr<const CandidateGenerator> generator,
                     std::shared_ptr<const Featurizer> featurizer, const TrainerConfig& cfg,
                     const CandidateCache* cache) {
  auto transitions = extract_transitions(corpus, cfg.reward);
  CandidateCache built;
  if (cache) {
    built = *cache;
  } else {
    if (!generator) throw Error(ErrorCode::Cache, "no cache and no generator to build one");
    built = build_candidate_cache(transitions, *generator, cfg.cache_k, derive_seed(cfg.seed, 0xcac4e));
  }
  return Trainer(std::move(transitions), std::move(built), std::move(generator), std::move(featurizer), cfg);
}

}  // namespace chai
