#pragma once

#include <span>
#include <string>
#include <vector>

#include "bsl/graph.hpp"
#include "bsl/synthscan.hpp"

namespace bsl {

inline constexpr Real kDiceEpsilon = 1e-6;
inline constexpr Real kDiceKappa = 1.0;

/// Generalized soft Dice loss over `channels` equally sized maps:
///   1 - (2 sum_c w_c sum p g + eps) / (sum_c w_c sum (p + g) + eps),
///   w_c = 1 / (sum g_c + kappa)^2.
/// If `grad` is non-empty it receives d(loss)/d(pred).
Real soft_dice_loss(std::span<const Real> pred, std::span<const Real> gt, std::size_t channels,
                    std::span<Real> grad = {});

/// Tensor form; pred and gt must both be (L,H,W).
Real soft_dice_loss(const Tensor& pred, const Tensor& gt);

/// Per-frame Dice losses of one sequence.
struct FrameLossVector {
  std::vector<Real> values;  // one per frame, in [0,1]
  std::vector<bool> has_gt;  // any landmark annotated on that frame
};

/// Frame-wise soft Dice of (tau*L,H,W) probabilities against targets.
/// If `grads` is non-null it is resized to tau entries, each holding
/// d(frame loss)/d(probs of that frame), laid out like the frame's L channels.
FrameLossVector frame_dice_losses(const Tensor& probs, const Tensor& targets, std::size_t landmarks,
                                  std::vector<std::vector<Real>>* grads = nullptr);

Real frame_dice_loss(std::span<const Real> pred_frame, std::span<const Real> gt_frame, std::size_t landmarks);

enum class LthetaKind { kMin, kAvg, kTopM };

struct LthetaSpec {
  LthetaKind kind = LthetaKind::kAvg;
  Real m_percent = 20;  // only for kTopM
};

std::string to_string(const LthetaSpec& spec);
LthetaSpec parse_ltheta(const std::string& kind, Real m_percent);

/// Frames averaged by top-m%: max(1, round(m * tau / 100)).
std::size_t top_m_count(Real m_percent, std::size_t tau);

/// Sequence-level task loss from frame losses. min: best frame; avg: mean;
/// top_m: mean of the k smallest. If `dvalues` is non-empty it receives
/// d(result)/d(values).
Real ltheta(const LthetaSpec& spec, std::span<const Real> values, std::span<Real> dvalues = {});

enum class NormMethod { kMinMax, kRank };

std::string to_string(NormMethod method);
NormMethod parse_norm(const std::string& name);

/// (s - min) / (max - min); all ones when every score is equal (incl. N == 1).
std::vector<Real> minmax_normalize(std::span<const Real> raw);
/// (r - 1) / (N - 1) with average ranks for ties; all ones when N == 1.
std::vector<Real> rank_normalize(std::span<const Real> raw);
std::vector<Real> normalize_scores(NormMethod method, std::span<const Real> raw);

/// Weighted task loss on precomputed pieces: mean_i ltheta_i * weight_i.
Real weighted_task_loss(std::span<const Real> ltheta_values, std::span<const Real> weights);

/// Mean squared difference.
Real mean_squared_error(std::span<const Real> pred, std::span<const Real> target);

/// Skill supervision derived from a sequence-level task loss.
Real skill_target(Real ltheta_value, bool raw_loss_target);

struct ObjectiveOptions {
  NormMethod norm = NormMethod::kRank;
  LthetaSpec ltheta;
  bool raw_loss_target = false;  // regress onto L^theta instead of 1 - L^theta
  bool uniform_weights = false;  // ignore the skill predictor, every weight = 1
  std::size_t landmarks = kNumLandmarks;
  std::size_t threads = 1;
};

struct BatchLoss {
  Real loss = 0;
  std::vector<Real> ltheta;   // per sequence
  std::vector<Real> scores;   // raw skill predictions per sequence
  std::vector<Real> weights;  // task: normalized weights; skill: supervision targets
};

/// Weighted task loss. Skill scores are computed from `omega` as
/// constants; if `theta_grads` is non-null it receives d(loss)/d(theta).
BatchLoss task_loss(const Graph& segmenter, const Graph& regressor, std::span<const Sequence> batch,
                    const ParamSet& theta, const ParamSet& omega, const ObjectiveOptions& options,
                    TensorMap* theta_grads = nullptr);

/// Skill loss against targets from the segmenter under `theta`, held
/// constant; if `omega_grads` is non-null it receives d(loss)/d(omega).
BatchLoss skill_loss(const Graph& segmenter, const Graph& regressor, std::span<const Sequence> batch,
                     const ParamSet& theta, const ParamSet& omega, const ObjectiveOptions& options,
                     TensorMap* omega_grads = nullptr);

/// Per-sequence L^theta of the segmenter (no gradients).
std::vector<Real> sequence_ltheta(const Graph& segmenter, const ParamSet& theta, std::span<const Sequence> batch,
                                  const LthetaSpec& spec, std::size_t landmarks, std::size_t threads);

}  // namespace bsl
