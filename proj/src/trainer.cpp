#include "bsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "bsl/checkpoint.hpp"
#include "bsl/errors.hpp"
#include "bsl/optim.hpp"
#include "bsl/parallel.hpp"

namespace bsl {

std::size_t TrainerConfig::selection_start() const {
  if (selection_after_epoch > 0) return selection_after_epoch;
  return (2 * epochs + 2) / 3;
}

void TrainerConfig::validate() const {
  if (minibatch < 1) throw ConfigError("minibatch size must be at least 1");
  if (!(lr_task > 0) || !(lr_skill > 0)) throw ConfigError("learning rates must be positive");
  if (clip_norm < 0) throw ConfigError("clip norm must be non-negative");
  if (tau < 1) throw ConfigError("tau must be at least 1");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (selection_after_epoch > epochs) throw ConfigError("selection_after_epoch must not exceed epochs");
  if (selection_windows < 1) throw ConfigError("selection_windows must be at least 1");
  if (ltheta.kind == LthetaKind::kTopM && !(ltheta.m_percent > 0 && ltheta.m_percent <= 100)) {
    throw ConfigError("top_m percentage must lie in (0, 100]");
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

ObjectiveOptions TrainerConfig::objective_options() const {
  ObjectiveOptions o;
  o.norm = norm;
  o.ltheta = ltheta;
  o.raw_loss_target = raw_loss_target;
  o.uniform_weights = uniform_weights;
  o.threads = threads;
  return o;
}

TrainState initial_state(const ModelSpec& spec, const TrainerConfig& cfg) {
  TrainState s;
  s.theta = initial_theta(spec, cfg.seed);
  s.omega = initial_omega(spec, cfg.seed);
  s.rng.seed(derive_seed(cfg.seed, "train.batches"));
  return s;
}

namespace {

void check_split(std::span<const Sequence> batch, Split split, const char* what) {
  if (batch.empty()) throw ContractError(std::string(what) + " batch is empty");
  for (const auto& s : batch) {
    if (s.split != split) {
      throw ContractError(std::string(what) + " batch holds a sequence from the " + split_name(s.split) +
                          " split (subject " + std::to_string(s.subject_id) + ")");
    }
  }
}

AdamOptions adam_options(Real lr, Real clip) {
  AdamOptions o;
  o.lr = lr;
  o.clip_norm = clip;
  return o;
}

Real mean_of(const std::vector<Real>& v) {
  if (v.empty()) return std::numeric_limits<Real>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), Real{0}) / static_cast<Real>(v.size());
}

std::string context(const TrainState& s) {
  return "epoch " + std::to_string(s.epoch + 1) + ", step " + std::to_string(s.step + 1);
}

}  // namespace

StepLog bilevel_step(TrainState& state, const Models& models, std::span<const Sequence> batch_skill,
                     std::span<const Sequence> batch_task, const TrainerConfig& cfg, const StepObserver* observer) {
  check_split(batch_skill, Split::kSkill, "skill");
  check_split(batch_task, Split::kTask, "task");
  const ObjectiveOptions opts = cfg.objective_options();
  StepLog log;
  log.epoch = state.epoch;
  try {
    if (observer && observer->before_skill_update) observer->before_skill_update(state);

    TensorMap omega_grads;
    const BatchLoss skill = skill_loss(models.segmenter, models.regressor, batch_skill, state.theta, state.omega,
                                       opts, &omega_grads);
    state.omega.accumulate_grads(omega_grads);
    adam_step(state.omega, adam_options(cfg.lr_skill, cfg.clip_norm));
    if (observer && observer->after_skill_update) observer->after_skill_update(state);

    TensorMap theta_grads;
    const BatchLoss task = task_loss(models.segmenter, models.regressor, batch_task, state.theta, state.omega, opts,
                                     &theta_grads);
    state.theta.accumulate_grads(theta_grads);
    adam_step(state.theta, adam_options(cfg.lr_task, cfg.clip_norm));
    if (observer && observer->after_task_update) observer->after_task_update(state);

    log.skill_loss = skill.loss;
    log.task_loss = task.loss;
    log.mean_score = mean_of(task.scores);
  } catch (const NumericError& e) {
    throw NumericError(context(state) + ": " + e.what());
  }
  ++state.step;
  log.step = state.step;
  return log;
}

StepLog warmup_step(TrainState& state, const Models& models, std::span<const Sequence> batch_task,
                    const TrainerConfig& cfg) {
  check_split(batch_task, Split::kTask, "task");
  ObjectiveOptions opts = cfg.objective_options();
  opts.uniform_weights = true;
  StepLog log;
  log.epoch = state.epoch;
  try {
    TensorMap theta_grads;
    const BatchLoss task =
        task_loss(models.segmenter, models.regressor, batch_task, state.theta, state.omega, opts, &theta_grads);
    state.theta.accumulate_grads(theta_grads);
    adam_step(state.theta, adam_options(cfg.lr_task, cfg.clip_norm));
    log.task_loss = task.loss;
  } catch (const NumericError& e) {
    throw NumericError(context(state) + " (warmup): " + e.what());
  }
  ++state.step;
  log.step = state.step;
  return log;
}

std::vector<Sequence> sample_batch(const Corpus& corpus, std::span<const std::size_t> scans, Split split,
                                   std::size_t n, std::uint32_t tau, std::uint32_t stride, Rng& rng) {
  if (scans.empty()) throw ContractError(std::string("no scans in the ") + split_name(split) + " split");
  std::vector<std::size_t> order(scans.begin(), scans.end());
  std::vector<Sequence> batch;
  batch.reserve(n);
  while (batch.size() < n) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      if (batch.size() == n) break;
      const Scan& scan = corpus.scans.at(idx);
      SequenceSample sample = sample_sequence(scan, rng(), tau, stride);
      sample.scan_index = idx;
      batch.push_back(make_sequence(scan, sample, split));
    }
  }
  return batch;
}

std::vector<Sequence> selection_windows(const Corpus& corpus, std::span<const std::size_t> scans,
                                        std::size_t per_scan, std::uint32_t tau, std::uint32_t stride) {
  std::vector<Sequence> out;
  for (std::size_t idx : scans) {
    const Scan& scan = corpus.scans.at(idx);
    const Split split = corpus.manifest.entries.at(idx).split;
    SequenceSample sample{idx, 0, tau, stride};
    if (sample.span() > scan.num_frames) throw ContractError("scan shorter than one window");
    const std::uint32_t last = scan.num_frames - sample.span();
    for (std::size_t k = 0; k < per_scan; ++k) {
      sample.start = per_scan == 1 ? last / 2
                                   : static_cast<std::uint32_t>(std::llround(static_cast<double>(last) * k /
                                                                             static_cast<double>(per_scan - 1)));
      out.push_back(make_sequence(scan, sample, split));
    }
  }
  return out;
}

Real skill_mse_on(const Models& models, const ParamSet& theta, const ParamSet& omega,
                  std::span<const Sequence> windows, const TrainerConfig& cfg) {
  return skill_loss(models.segmenter, models.regressor, windows, theta, omega, cfg.objective_options()).loss;
}

void save_pair(const ParamSet& theta, const ParamSet& omega, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(theta, dir / kTaskCheckpoint);
  save_checkpoint(omega, dir / kSkillCheckpoint);
}

void load_pair(const std::filesystem::path& dir, ParamSet& theta, ParamSet& omega) {
  theta = load_checkpoint(dir / kTaskCheckpoint);
  omega = load_checkpoint(dir / kSkillCheckpoint);
}

namespace {

void write_csv_real(std::ostream& os, Real v) {
  if (std::isnan(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  os << buf;
}

void write_step(std::ostream& os, const StepLog& log) {
  os << log.step << ',' << log.epoch + 1 << ',';
  write_csv_real(os, log.task_loss);
  os << ',';
  write_csv_real(os, log.skill_loss);
  os << ',';
  write_csv_real(os, log.mean_score);
  os << ',';
  write_csv_real(os, log.selection_mse);
  os << '\n';
}

}  // namespace

TrainResult train(const Corpus& corpus, const Models& models, const TrainerConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  corpus.manifest.validate();
  const auto task_scans = corpus.indices(Split::kTask);
  const auto skill_scans = corpus.indices(Split::kSkill);
  if (task_scans.empty() || skill_scans.empty()) throw ContractError("training needs task and skill scans");

  TrainResult result;
  result.state = initial_state(models.spec, cfg);
  TrainState& state = result.state;
  const auto sel_windows = selection_windows(corpus, task_scans, cfg.selection_windows, cfg.tau, cfg.stride);
  result.initial_selection_mse = skill_mse_on(models, state.theta, state.omega, sel_windows, cfg);
  if (outputs.step_csv) *outputs.step_csv << kStepLogHeader << '\n';

  bool selected_any = false;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const bool warmup = e < cfg.warmup_epochs;
    for (std::size_t k = 0; k < cfg.steps_per_epoch; ++k) {
      const auto batch_task = sample_batch(corpus, task_scans, Split::kTask, cfg.minibatch, cfg.tau, cfg.stride,
                                           state.rng);
      StepLog log;
      if (warmup) {
        log = warmup_step(state, models, batch_task, cfg);
      } else {
        const auto batch_skill = sample_batch(corpus, skill_scans, Split::kSkill, cfg.minibatch, cfg.tau,
                                              cfg.stride, state.rng);
        log = bilevel_step(state, models, batch_skill, batch_task, cfg);
      }
      const bool closes_epoch = k + 1 == cfg.steps_per_epoch;
      if (closes_epoch && e + 1 >= cfg.selection_start()) {
        const Real mse = skill_mse_on(models, state.theta, state.omega, sel_windows, cfg);
        log.selection_mse = mse;
        SelectionRecord rec{e + 1, mse, false};
        if (mse < state.best_selection_mse) {
          rec.selected = true;
          state.best_selection_mse = mse;
          state.best_epoch = e + 1;
          result.selected_theta = state.theta;
          result.selected_omega = state.omega;
          selected_any = true;
          if (!outputs.checkpoint_dir.empty()) {
            save_pair(state.theta, state.omega, outputs.checkpoint_dir);
            state.best_checkpoint = outputs.checkpoint_dir;
          }
        }
        result.selections.push_back(rec);
      }
      if (outputs.step_csv) {
        write_step(*outputs.step_csv, log);
        outputs.step_csv->flush();
      }
      result.log.push_back(log);
    }
    state.epoch = e + 1;
  }
  if (!selected_any) {
    result.selected_theta = state.theta;
    result.selected_omega = state.omega;
    if (!outputs.checkpoint_dir.empty() && cfg.epochs > 0) {
      save_pair(state.theta, state.omega, outputs.checkpoint_dir);
      state.best_checkpoint = outputs.checkpoint_dir;
    }
  }
  return result;
}

std::vector<FineTuneSnapshot> fine_tune(const ParamSet& theta, const ParamSet& omega, const Corpus& corpus,
                                        std::span<const std::size_t> subset, std::span<const std::size_t> epochs,
                                        const Models& models, const TrainerConfig& cfg,
                                        const FineTuneOptions& options) {
  if (subset.empty()) throw ContractError("fine-tuning subset is empty");
  if (epochs.empty()) return {};

  // Operators alternate between the task and skill halves.
  std::map<std::uint32_t, std::vector<std::size_t>> by_operator;
  for (std::size_t idx : subset) by_operator[corpus.manifest.entries.at(idx).sonographer_id].push_back(idx);
  std::vector<std::size_t> task_half, skill_half;
  std::size_t g = 0;
  for (const auto& [op, scans] : by_operator) {
    auto& dst = (g++ % 2 == 0) ? task_half : skill_half;
    dst.insert(dst.end(), scans.begin(), scans.end());
  }
  if (skill_half.empty()) skill_half = task_half;

  TrainState state;
  state.theta = theta;
  state.omega = omega;
  state.rng.seed(derive_seed(cfg.seed, "finetune.batches"));

  std::vector<std::size_t> wanted(epochs.begin(), epochs.end());
  std::sort(wanted.begin(), wanted.end());
  std::vector<FineTuneSnapshot> out;
  std::size_t next = 0;
  while (next < wanted.size() && wanted[next] == 0) out.push_back({0, state.theta, state.omega}), ++next;
  for (std::size_t e = 0; next < wanted.size(); ++e) {
    for (std::size_t k = 0; k < options.steps_per_epoch; ++k) {
      auto batch_task = sample_batch(corpus, task_half, Split::kTask, cfg.minibatch, cfg.tau, cfg.stride, state.rng);
      auto batch_skill =
          sample_batch(corpus, skill_half, Split::kSkill, cfg.minibatch, cfg.tau, cfg.stride, state.rng);
      bilevel_step(state, models, batch_skill, batch_task, cfg);
    }
    state.epoch = e + 1;
    while (next < wanted.size() && wanted[next] == e + 1) {
      out.push_back({e + 1, state.theta, state.omega});
      ++next;
    }
  }
  return out;
}

Real normalize_years(float years, float lo, float hi) {
  if (!(hi > lo)) return 0.5;
  return std::clamp(static_cast<Real>(years - lo) / static_cast<Real>(hi - lo), Real{0}, Real{1});
}

namespace {

// MSE between regressor outputs and normalized years; gradients optional.
Real years_loss(const Models& models, const ParamSet& omega, std::span<const Sequence> batch,
                std::span<const Real> targets, std::size_t threads, TensorMap* grads) {
  const std::size_t n = batch.size();
  std::vector<Real> scores(n);
  std::vector<TensorMap> local(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Graph g = models.regressor;
    const TensorMap out = forward(g, {{kFramesInput, batch[i].frames}}, omega);
    scores[i] = out.at(kScoreOutput).item();
    if (grads) {
      const Real seed = 2 * (scores[i] - targets[i]) / static_cast<Real>(n);
      backward(g, {{kScoreOutput, Tensor(Shape{1}, std::vector<Real>{seed})}}, local[i]);
    }
  });
  if (grads) {
    for (auto& m : local) {
      for (auto& [name, t] : m) {
        auto it = grads->find(name);
        if (it == grads->end()) {
          grads->emplace(name, std::move(t));
        } else {
          for (std::size_t j = 0; j < t.size(); ++j) it->second[j] += t[j];
        }
      }
    }
  }
  const Real loss = mean_squared_error(scores, targets);
  if (!std::isfinite(loss)) throw NumericError("baseline loss is not finite");
  return loss;
}

}  // namespace

BaselineResult train_supervised_baseline(const Corpus& corpus, const Models& models, const TrainerConfig& cfg,
                                         std::size_t epochs) {
  cfg.validate();
  const auto train_scans = corpus.indices(Split::kSkill);
  const auto val_scans = corpus.indices(Split::kTask);
  if (train_scans.empty() || val_scans.empty()) throw ContractError("baseline needs skill and task scans");

  BaselineResult res;
  res.years_min = res.years_max = corpus.scans[train_scans.front()].years_experience;
  for (std::size_t idx : train_scans) {
    res.years_min = std::min(res.years_min, corpus.scans[idx].years_experience);
    res.years_max = std::max(res.years_max, corpus.scans[idx].years_experience);
  }
  auto target_of = [&](const Sequence& s) {
    return normalize_years(corpus.scans[s.sample.scan_index].years_experience, res.years_min, res.years_max);
  };

  // The validation split is re-labelled so the windows read as skill data.
  auto val = selection_windows(corpus, val_scans, cfg.selection_windows, cfg.tau, cfg.stride);
  std::vector<Real> val_targets;
  for (const auto& s : val) val_targets.push_back(target_of(s));

  ParamSet omega = initial_omega(models.spec, derive_seed(cfg.seed, "baseline"));
  Rng rng(derive_seed(cfg.seed, "baseline.batches"));
  res.omega = omega;
  res.best_validation_mse = years_loss(models, omega, val, val_targets, cfg.threads, nullptr);
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 0; k < cfg.steps_per_epoch; ++k) {
      const auto batch = sample_batch(corpus, train_scans, Split::kSkill, cfg.minibatch, cfg.tau, cfg.stride, rng);
      std::vector<Real> targets;
      for (const auto& s : batch) targets.push_back(target_of(s));
      TensorMap grads;
      try {
        years_loss(models, omega, batch, targets, cfg.threads, &grads);
      } catch (const NumericError& ex) {
        throw NumericError("baseline epoch " + std::to_string(e + 1) + ", step " + std::to_string(k + 1) + ": " +
                           ex.what());
      }
      omega.accumulate_grads(grads);
      adam_step(omega, adam_options(cfg.lr_skill, cfg.clip_norm));
    }
    const Real mse = years_loss(models, omega, val, val_targets, cfg.threads, nullptr);
    res.validation_curve.push_back(mse);
    if (mse < res.best_validation_mse) {
      res.best_validation_mse = mse;
      res.best_epoch = e + 1;
      res.omega = omega;
    }
  }
  return res;
}

}  // namespace bsl
