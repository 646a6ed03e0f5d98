#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bsl/errors.hpp"
#include "bsl/trainer.hpp"

namespace bsl {

/// Raised by assd() when either mask is empty; callers count the frame as excluded.
class EmptyMaskError : public ContractError {
 public:
  using ContractError::ContractError;
};

inline constexpr Real kBinarizeThreshold = 0.5;

std::vector<std::uint8_t> binarize(std::span<const Real> probs, Real threshold = kBinarizeThreshold);

/// 2|P & G| / (|P| + |G|). Both masks empty is a contract error.
Real dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Boundary pixels (foreground with a background 4-neighbour; outside the
/// image counts as background) as flat indices y*width + x.
std::vector<std::size_t> mask_boundary(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width);

/// Average symmetric surface distance in pixels.
Real assd(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t height, std::size_t width);

Real skill_mse(std::span<const Real> pred, std::span<const Real> target);
Real pearson(std::span<const Real> x, std::span<const Real> y);
/// Pearson correlation of average ranks.
Real spearman(std::span<const Real> x, std::span<const Real> y);

/// Candidate windows of one scan: predicted skill and task metric per window.
struct ScanWindows {
  std::vector<Real> scores;
  std::vector<Real> metrics;
};

/// Indices of the k highest scores; ties keep the earlier window.
std::vector<std::size_t> top_k(std::span<const Real> scores, std::size_t k);

/// Fraction of scans whose mean metric over the top-k windows strictly beats
/// the mean over all windows.
Real improvement_ratio(std::span<const ScanWindows> scans, std::size_t k);

struct PlaneProximity {
  bool top1_eq_sp = false;
  bool top5_contains_sp = false;
  Real dist_seconds = 0;
};

PlaneProximity plane_proximity(std::span<const std::uint32_t> starts, std::span<const Real> scores,
                               std::uint32_t t_sp, std::uint32_t tau, std::uint32_t stride, float fps);

struct MeanSd {
  Real mean = 0;
  Real sd = 0;
  std::size_t count = 0;
};

MeanSd mean_sd(std::span<const Real> values);

struct MetricsRecord {
  std::array<MeanSd, kNumLandmarks> dice{};
  std::array<MeanSd, kNumLandmarks> assd{};
  std::array<std::size_t, kNumLandmarks> assd_excluded{};
  Real skill_mse = 0;
  Real r_top1 = 0;
  Real r_top5 = 0;
  Real top1_eq_sp = 0;        // fraction of scans
  Real top5_contains_sp = 0;  // fraction of scans
  Real dist_seconds = 0;      // mean over scans
  Real spearman_vs_latent = 0;
  std::size_t scans = 0;
  std::size_t windows = 0;

  /// Range invariants; throws ContractError naming the offending field.
  void check() const;
};

struct EvalConfig {
  std::uint32_t tau = 8;
  std::uint32_t stride = 1;
  LthetaSpec ltheta;
  bool raw_loss_target = false;
  std::size_t threads = 1;
  Real threshold = kBinarizeThreshold;
};

EvalConfig eval_config_from(const TrainerConfig& cfg);

/// Half-overlap window starts covering [0, T); the last window is end-aligned.
std::vector<std::uint32_t> tile_windows(std::uint32_t num_frames, std::uint32_t tau, std::uint32_t stride);

struct WindowResult {
  std::uint32_t start = 0;
  Real score = 0;         // skill prediction
  Real task_metric = 0;   // 1 - L^theta
  Real mean_quality = 0;  // latent, synthetic data only
};

/// Per-window skill and task metric for the given starts.
std::vector<WindowResult> evaluate_windows(const Models& models, const ParamSet& theta, const ParamSet& omega,
                                           const Scan& scan, std::span<const std::uint32_t> starts,
                                           const EvalConfig& cfg);

MetricsRecord direct_evaluate(const Models& models, const ParamSet& theta, const ParamSet& omega,
                              const Corpus& corpus, std::span<const std::size_t> scans, const EvalConfig& cfg);

struct MetaSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Operator-grouped split of `scans`: a `fraction` share of operators
/// (rounded, at least one) goes to meta-train.
MetaSplit meta_split(const Corpus& corpus, std::span<const std::size_t> scans, Real fraction, std::uint64_t seed);

struct MetaEvalRow {
  Real fraction = 0;
  std::size_t epoch = 0;
  std::size_t train_scans = 0;
  std::size_t test_scans = 0;
  MetricsRecord metrics;
};

struct MetaEvalResult {
  std::vector<MetaEvalRow> grid;      // fractions x epochs
  std::vector<MetaEvalRow> baseline;  // epoch 0 per fraction
};

MetaEvalResult meta_evaluate(const Models& models, const ParamSet& theta, const ParamSet& omega,
                             const Corpus& corpus, std::span<const std::size_t> scans,
                             std::span<const Real> fractions, std::span<const std::size_t> epochs,
                             const TrainerConfig& train_cfg, const EvalConfig& cfg,
                             const FineTuneOptions& fine_tune_options = {});

struct ScoreTrace {
  std::vector<Real> time_s;
  std::vector<Real> skill_score;
  std::vector<Real> task_metric;
  std::vector<Real> mean_quality;  // latent, not exported
};

/// Sliding windows at a one-frame step.
ScoreTrace score_trace(const Models& models, const ParamSet& theta, const ParamSet& omega, const Scan& scan,
                       const EvalConfig& cfg);

Real variance(std::span<const Real> values);

// CSV export; floats use six significant digits.
inline constexpr const char* kTraceHeader = "time_s,skill_score,task_metric";
std::string format_real(Real v);
std::string metrics_header();
std::string metrics_row(const MetricsRecord& m);
void write_metrics_csv(std::ostream& os, std::span<const std::string> labels, std::span<const MetricsRecord> rows);
void write_meta_csv(std::ostream& os, std::span<const MetaEvalRow> rows);
void write_trace_csv(std::ostream& os, const ScoreTrace& trace);

}  // namespace bsl
