#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "bsl/models.hpp"
#include "bsl/objectives.hpp"
#include "bsl/rng.hpp"
#include "bsl/synthscan.hpp"

namespace bsl {

struct TrainerConfig {
  std::size_t epochs = 60;
  std::size_t steps_per_epoch = 16;  // K
  std::size_t minibatch = 8;         // N
  Real lr_task = 1e-3;
  Real lr_skill = 1e-3;
  Real clip_norm = 10;  // 0 disables
  NormMethod norm = NormMethod::kRank;
  LthetaSpec ltheta;
  std::uint32_t tau = 8;
  std::uint32_t stride = 1;
  std::uint64_t seed = 0;
  std::size_t warmup_epochs = 5;
  std::size_t selection_after_epoch = 0;   // E_sel, 1-based; 0 picks ceil(2 * epochs / 3)
  std::size_t selection_windows = 4;       // evenly spaced windows per scan
  bool raw_loss_target = false;
  bool uniform_weights = false;  // every sequence weight = 1 (ablation)
  std::size_t threads = 1;

  void validate() const;
  ObjectiveOptions objective_options() const;
  /// First epoch (1-based) whose end-of-epoch model may be selected.
  std::size_t selection_start() const;
};

struct TrainState {
  ParamSet theta;
  ParamSet omega;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  Real best_selection_mse = std::numeric_limits<Real>::infinity();
  std::size_t best_epoch = 0;
  std::filesystem::path best_checkpoint;
  Rng rng;
};

TrainState initial_state(const ModelSpec& spec, const TrainerConfig& cfg);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  Real task_loss = 0;
  Real skill_loss = std::numeric_limits<Real>::quiet_NaN();  // NaN during warmup
  Real mean_score = std::numeric_limits<Real>::quiet_NaN();
  Real selection_mse = std::numeric_limits<Real>::quiet_NaN();  // set on epoch-closing steps
};

/// Hooks around the two halves of a step; used by instrumentation only.
struct StepObserver {
  std::function<void(const TrainState&)> before_skill_update;
  std::function<void(const TrainState&)> after_skill_update;
  std::function<void(const TrainState&)> after_task_update;
};

/// One alternation: the skill predictor is updated first against targets
/// from the current task predictor, then the task predictor is updated with
/// weights from the freshly updated skill predictor. Exactly one Adam step
/// per network.
StepLog bilevel_step(TrainState& state, const Models& models, std::span<const Sequence> batch_skill,
                     std::span<const Sequence> batch_task, const TrainerConfig& cfg,
                     const StepObserver* observer = nullptr);

/// Task-only update with uniform weights; omega is left untouched.
StepLog warmup_step(TrainState& state, const Models& models, std::span<const Sequence> batch_task,
                    const TrainerConfig& cfg);

/// Draws `n` sequences, one per scan while scans last (shuffled order, then
/// cycling), each at a uniform start.
std::vector<Sequence> sample_batch(const Corpus& corpus, std::span<const std::size_t> scans, Split split,
                                   std::size_t n, std::uint32_t tau, std::uint32_t stride, Rng& rng);

/// Fixed, evenly spaced windows used for model selection.
std::vector<Sequence> selection_windows(const Corpus& corpus, std::span<const std::size_t> scans,
                                        std::size_t per_scan, std::uint32_t tau, std::uint32_t stride);

/// Skill-MSE of omega against targets from theta on the given windows.
Real skill_mse_on(const Models& models, const ParamSet& theta, const ParamSet& omega,
                  std::span<const Sequence> windows, const TrainerConfig& cfg);

struct SelectionRecord {
  std::size_t epoch = 0;  // 1-based
  Real mse = 0;
  bool selected = false;
};

struct TrainResult {
  TrainState state;  // final
  ParamSet selected_theta;
  ParamSet selected_omega;
  Real initial_selection_mse = 0;
  std::vector<SelectionRecord> selections;
  std::vector<StepLog> log;
};

struct TrainOutputs {
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only
  std::ostream* step_csv = nullptr;      // per-step log, header written first
};

inline constexpr const char* kTaskCheckpoint = "task.ckpt";
inline constexpr const char* kSkillCheckpoint = "skill.ckpt";
inline constexpr const char* kStepLogHeader = "step,epoch,l_task,l_skill,mean_score,selection_mse";

/// Full schedule: warmup epochs, then alternation; from epoch E_sel on the
/// model with the lowest skill-MSE on the task split is retained. When no
/// selection happens (too few epochs) the final state is the selected one.
TrainResult train(const Corpus& corpus, const Models& models, const TrainerConfig& cfg,
                  const TrainOutputs& outputs = {});

void save_pair(const ParamSet& theta, const ParamSet& omega, const std::filesystem::path& dir);
void load_pair(const std::filesystem::path& dir, ParamSet& theta, ParamSet& omega);

struct FineTuneSnapshot {
  std::size_t epoch = 0;
  ParamSet theta;
  ParamSet omega;
};

struct FineTuneOptions {
  std::size_t steps_per_epoch = 4;
};

/// Continues alternation from (theta, omega) on `subset`, which is split by
/// operator into task and skill halves. Emits one snapshot per listed epoch.
std::vector<FineTuneSnapshot> fine_tune(const ParamSet& theta, const ParamSet& omega, const Corpus& corpus,
                                        std::span<const std::size_t> subset, std::span<const std::size_t> epochs,
                                        const Models& models, const TrainerConfig& cfg,
                                        const FineTuneOptions& options = {});

struct BaselineResult {
  ParamSet omega;
  Real best_validation_mse = 0;
  std::size_t best_epoch = 0;
  float years_min = 0;
  float years_max = 0;
  std::vector<Real> validation_curve;
};

/// Normalized years of experience; 0.5 when every operator has the same value.
Real normalize_years(float years, float lo, float hi);

/// Regressor trained by MSE onto normalized years of experience of the skill
/// split, validated on the task split.
BaselineResult train_supervised_baseline(const Corpus& corpus, const Models& models, const TrainerConfig& cfg,
                                         std::size_t epochs);

}  // namespace bsl
