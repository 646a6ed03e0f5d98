#include "bsl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bsl/errors.hpp"
#include "bsl/models.hpp"
#include "bsl/parallel.hpp"

namespace bsl {

Real soft_dice_loss(std::span<const Real> pred, std::span<const Real> gt, std::size_t channels,
                    std::span<Real> grad) {
  if (pred.size() != gt.size()) throw ContractError("soft_dice_loss: prediction and ground truth sizes differ");
  if (channels == 0 || pred.size() % channels != 0) throw ContractError("soft_dice_loss: bad channel count");
  if (!grad.empty() && grad.size() != pred.size()) throw ContractError("soft_dice_loss: gradient buffer size");
  const std::size_t plane = pred.size() / channels;

  std::vector<Real> weight(channels);
  Real inter = 0, total = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const Real* p = pred.data() + c * plane;
    const Real* g = gt.data() + c * plane;
    Real sg = 0, sp = 0, spg = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      sg += g[i];
      sp += p[i];
      spg += p[i] * g[i];
    }
    weight[c] = 1 / ((sg + kDiceKappa) * (sg + kDiceKappa));
    inter += weight[c] * spg;
    total += weight[c] * (sp + sg);
  }
  const Real num = 2 * inter + kDiceEpsilon;
  const Real den = total + kDiceEpsilon;

  if (!grad.empty()) {
    const Real inv = 1 / (den * den);
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* g = gt.data() + c * plane;
      Real* d = grad.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] = -weight[c] * (2 * g[i] * den - num) * inv;
    }
  }
  return 1 - num / den;
}

Real soft_dice_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.rank() != 3) {
    throw ContractError("soft_dice_loss: expected equal (L,H,W) shapes, got " + shape_to_string(pred.shape()) +
                        " and " + shape_to_string(gt.shape()));
  }
  return soft_dice_loss(pred.data(), gt.data(), pred.dim(0));
}

Real frame_dice_loss(std::span<const Real> pred_frame, std::span<const Real> gt_frame, std::size_t landmarks) {
  return soft_dice_loss(pred_frame, gt_frame, landmarks);
}

FrameLossVector frame_dice_losses(const Tensor& probs, const Tensor& targets, std::size_t landmarks,
                                  std::vector<std::vector<Real>>* grads) {
  if (probs.shape() != targets.shape() || probs.rank() != 3 || landmarks == 0 || probs.dim(0) % landmarks != 0) {
    throw ContractError("frame_dice_losses: expected matching (tau*L,H,W) tensors, got " +
                        shape_to_string(probs.shape()) + " and " + shape_to_string(targets.shape()));
  }
  const std::size_t tau = probs.dim(0) / landmarks;
  const std::size_t block = landmarks * probs.dim(1) * probs.dim(2);
  FrameLossVector out;
  out.values.resize(tau);
  out.has_gt.resize(tau);
  if (grads) grads->assign(tau, std::vector<Real>(block));
  for (std::size_t j = 0; j < tau; ++j) {
    auto p = probs.data().subspan(j * block, block);
    auto g = targets.data().subspan(j * block, block);
    out.values[j] = soft_dice_loss(p, g, landmarks, grads ? std::span<Real>((*grads)[j]) : std::span<Real>());
    out.has_gt[j] = std::any_of(g.begin(), g.end(), [](Real v) { return v > 0; });
  }
  return out;
}

std::string to_string(const LthetaSpec& spec) {
  switch (spec.kind) {
    case LthetaKind::kMin: return "min";
    case LthetaKind::kAvg: return "avg";
    case LthetaKind::kTopM: {
      std::string m = std::to_string(spec.m_percent);
      m.erase(m.find_last_not_of('0') + 1);
      if (!m.empty() && m.back() == '.') m.pop_back();
      return "top_" + m;
    }
  }
  return "?";
}

LthetaSpec parse_ltheta(const std::string& kind, Real m_percent) {
  LthetaSpec s;
  s.m_percent = m_percent;
  if (kind == "min") s.kind = LthetaKind::kMin;
  else if (kind == "avg") s.kind = LthetaKind::kAvg;
  else if (kind == "top_m" || kind == "topm") s.kind = LthetaKind::kTopM;
  else throw ConfigError("unknown ltheta kind '" + kind + "' (expected min, avg, top_m)");
  if (s.kind == LthetaKind::kTopM && !(m_percent > 0 && m_percent <= 100)) {
    throw ConfigError("top_m needs 0 < m <= 100");
  }
  return s;
}

std::size_t top_m_count(Real m_percent, std::size_t tau) {
  if (!(m_percent > 0 && m_percent <= 100)) throw ContractError("top_m needs 0 < m <= 100");
  const auto k = static_cast<std::size_t>(std::llround(m_percent * static_cast<Real>(tau) / 100));
  return std::max<std::size_t>(1, std::min(k, tau));
}

Real ltheta(const LthetaSpec& spec, std::span<const Real> values, std::span<Real> dvalues) {
  if (values.empty()) throw ContractError("ltheta of an empty frame-loss vector");
  if (!dvalues.empty()) {
    if (dvalues.size() != values.size()) throw ContractError("ltheta: derivative buffer size");
    std::fill(dvalues.begin(), dvalues.end(), Real{0});
  }
  const std::size_t n = values.size();
  switch (spec.kind) {
    case LthetaKind::kMin: {
      const std::size_t best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
      if (!dvalues.empty()) dvalues[best] = 1;
      return values[best];
    }
    case LthetaKind::kAvg: {
      Real s = 0;
      for (Real v : values) s += v;
      if (!dvalues.empty()) std::fill(dvalues.begin(), dvalues.end(), Real{1} / static_cast<Real>(n));
      return s / static_cast<Real>(n);
    }
    case LthetaKind::kTopM: {
      const std::size_t k = top_m_count(spec.m_percent, n);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
      Real s = 0;
      for (std::size_t i = 0; i < k; ++i) {
        s += values[order[i]];
        if (!dvalues.empty()) dvalues[order[i]] = Real{1} / static_cast<Real>(k);
      }
      return s / static_cast<Real>(k);
    }
  }
  return 0;
}

std::string to_string(NormMethod method) { return method == NormMethod::kRank ? "rank" : "minmax"; }

NormMethod parse_norm(const std::string& name) {
  if (name == "rank") return NormMethod::kRank;
  if (name == "minmax" || name == "min-max") return NormMethod::kMinMax;
  throw ConfigError("unknown normalization '" + name + "' (expected rank, minmax)");
}

std::vector<Real> minmax_normalize(std::span<const Real> raw) {
  if (raw.empty()) throw ContractError("normalization of an empty batch");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  std::vector<Real> out(raw.size(), Real{1});
  if (*hi == *lo) return out;
  const Real range = *hi - *lo;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::clamp((raw[i] - *lo) / range, Real{0}, Real{1});
  return out;
}

std::vector<Real> rank_normalize(std::span<const Real> raw) {
  if (raw.empty()) throw ContractError("normalization of an empty batch");
  const std::size_t n = raw.size();
  std::vector<Real> out(n, Real{1});
  if (n == 1) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && raw[order[j + 1]] == raw[order[i]]) ++j;
    // Positions i..j (0-based) share the average 1-based rank.
    const Real rank = (static_cast<Real>(i + 1) + static_cast<Real>(j + 1)) / 2;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = (rank - 1) / static_cast<Real>(n - 1);
    i = j + 1;
  }
  return out;
}

std::vector<Real> normalize_scores(NormMethod method, std::span<const Real> raw) {
  return method == NormMethod::kRank ? rank_normalize(raw) : minmax_normalize(raw);
}

Real weighted_task_loss(std::span<const Real> ltheta_values, std::span<const Real> weights) {
  if (ltheta_values.empty() || ltheta_values.size() != weights.size()) {
    throw ContractError("weighted_task_loss: need equal, non-empty loss and weight vectors");
  }
  Real s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += ltheta_values[i] * weights[i];
  return s / static_cast<Real>(weights.size());
}

Real mean_squared_error(std::span<const Real> pred, std::span<const Real> target) {
  if (pred.empty() || pred.size() != target.size()) {
    throw ContractError("mean_squared_error: need equal, non-empty vectors");
  }
  Real s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<Real>(pred.size());
}

Real skill_target(Real ltheta_value, bool raw_loss_target) {
  const Real s = raw_loss_target ? ltheta_value : 1 - ltheta_value;
  return std::clamp(s, Real{0}, Real{1});
}

namespace {

struct SegmenterPass {
  Real ltheta = 0;
  TensorMap grads;
};

// Segmenter forward (and backward scaled by `weight` when requested) for one sequence.
SegmenterPass run_segmenter(const Graph& segmenter, const ParamSet& theta, const Sequence& seq,
                            const LthetaSpec& spec, std::size_t landmarks, Real weight, bool want_grads) {
  Graph g = segmenter;
  TensorMap in;
  in.emplace(kFramesInput, seq.frames);
  const Tensor probs = forward(g, in, theta).at(kProbsOutput);
  std::vector<std::vector<Real>> frame_grads;
  const FrameLossVector fl = frame_dice_losses(probs, seq.targets, landmarks, want_grads ? &frame_grads : nullptr);
  std::vector<Real> dl(fl.values.size());
  SegmenterPass out;
  out.ltheta = ltheta(spec, fl.values, dl);
  if (want_grads && weight != 0) {
    Tensor seed(probs.shape());
    const std::size_t block = frame_grads.empty() ? 0 : frame_grads[0].size();
    for (std::size_t j = 0; j < frame_grads.size(); ++j) {
      if (dl[j] == 0) continue;
      const Real s = weight * dl[j];
      for (std::size_t i = 0; i < block; ++i) seed[j * block + i] = s * frame_grads[j][i];
    }
    TensorMap seeds;
    seeds.emplace(kProbsOutput, std::move(seed));
    backward(g, seeds, out.grads);
  }
  return out;
}

void sum_into(TensorMap& dst, const TensorMap& src) {
  for (const auto& [name, t] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, t);
      continue;
    }
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
  }
}

void require_batch(std::span<const Sequence> batch) {
  if (batch.empty()) throw ContractError("minibatch must hold at least one sequence");
}

}  // namespace

std::vector<Real> sequence_ltheta(const Graph& segmenter, const ParamSet& theta, std::span<const Sequence> batch,
                                  const LthetaSpec& spec, std::size_t landmarks, std::size_t threads) {
  std::vector<Real> out(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    out[i] = run_segmenter(segmenter, theta, batch[i], spec, landmarks, 0, false).ltheta;
  });
  return out;
}

BatchLoss task_loss(const Graph& segmenter, const Graph& regressor, std::span<const Sequence> batch,
                    const ParamSet& theta, const ParamSet& omega, const ObjectiveOptions& options,
                    TensorMap* theta_grads) {
  require_batch(batch);
  const std::size_t n = batch.size();
  BatchLoss out;
  if (options.uniform_weights) {
    out.weights.assign(n, Real{1});
  } else {
    std::vector<Tensor> inputs;
    inputs.reserve(n);
    for (const auto& s : batch) inputs.push_back(s.frames);
    out.scores = predict_scores(regressor, omega, inputs, options.threads);
    out.weights = normalize_scores(options.norm, out.scores);
  }

  std::vector<SegmenterPass> passes(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    passes[i] = run_segmenter(segmenter, theta, batch[i], options.ltheta, options.landmarks,
                              out.weights[i] / static_cast<Real>(n), theta_grads != nullptr);
  });
  out.ltheta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.ltheta[i] = passes[i].ltheta;
    if (theta_grads) sum_into(*theta_grads, passes[i].grads);
  }
  out.loss = weighted_task_loss(out.ltheta, out.weights);
  if (!std::isfinite(out.loss)) throw NumericError("task loss is not finite");
  return out;
}

BatchLoss skill_loss(const Graph& segmenter, const Graph& regressor, std::span<const Sequence> batch,
                     const ParamSet& theta, const ParamSet& omega, const ObjectiveOptions& options,
                     TensorMap* omega_grads) {
  require_batch(batch);
  const std::size_t n = batch.size();
  BatchLoss out;
  out.ltheta = sequence_ltheta(segmenter, theta, batch, options.ltheta, options.landmarks, options.threads);
  out.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.weights[i] = skill_target(out.ltheta[i], options.raw_loss_target);

  out.scores.resize(n);
  std::vector<TensorMap> grads(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    Graph g = regressor;
    TensorMap in;
    in.emplace(kFramesInput, batch[i].frames);
    const Real score = forward(g, in, omega).at(kScoreOutput)[0];
    out.scores[i] = score;
    if (omega_grads) {
      TensorMap seeds;
      seeds.emplace(kScoreOutput, Tensor(Shape{1}, std::vector<Real>{2 * (score - out.weights[i]) / static_cast<Real>(n)}));
      backward(g, seeds, grads[i]);
    }
  });
  if (omega_grads) {
    for (const auto& gmap : grads) sum_into(*omega_grads, gmap);
  }
  out.loss = mean_squared_error(out.scores, out.weights);
  if (!std::isfinite(out.loss)) throw NumericError("skill loss is not finite");
  return out;
}

}  // namespace bsl
