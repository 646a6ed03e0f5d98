#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bsl/config.hpp"

namespace bsl {

/// Creates `dir`; a non-empty existing directory is a ContractError unless
/// `force` is set, in which case its contents are removed.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& dir);

/// Loads cfg.data and adopts the corpus generator parameters into cfg.
Corpus load_run_corpus(RunConfig& cfg);

/// Per-split scan, frame, operator and subject counts as an aligned table.
std::string corpus_summary(const CorpusManifest& manifest);

CorpusManifest run_gen_data(const RunConfig& cfg, bool force, std::ostream& report);

/// Trains into cfg.out: config snapshot, steps.csv, selection.csv,
/// summary.txt and the selected task.ckpt / skill.ckpt.
TrainResult run_train(RunConfig cfg, bool force, std::ostream& report);

/// One axis of a cartesian sweep: a config key (or the short names `norm`,
/// `ltheta`, `m`, `minibatch`, `tau`, `stride`) and its values.
using SweepAxis = std::pair<std::string, std::vector<std::string>>;

/// Parses `key=v1,v2,...`.
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepRun {
  std::string name;  // directory name under cfg.out
  RunConfig config;
};

/// Cartesian product of the axes, first axis varying slowest.
std::vector<SweepRun> expand_sweep(const RunConfig& base, const std::vector<SweepAxis>& axes);

std::vector<std::filesystem::path> run_train_sweep(const RunConfig& cfg, const std::vector<SweepAxis>& axes,
                                                   bool force, std::ostream& report);

/// Evaluates the checkpoints in cfg.run on cfg.eval_split; writes metrics.csv.
MetricsRecord run_eval(RunConfig cfg, std::ostream& report);

/// Writes meta_grid.csv (fractions x epochs) and meta_baseline.csv (epoch 0).
MetaEvalResult run_meta_eval(RunConfig cfg, std::ostream& report);

/// Writes traces/trace_<subject>.csv for every scan of cfg.eval_split.
std::vector<ScoreTrace> run_trace(RunConfig cfg, std::ostream& report);

/// Writes skill.ckpt and baseline_validation.csv under cfg.out.
BaselineResult run_baseline(RunConfig cfg, bool force, std::ostream& report);

/// Train + eval per sweep point; writes sweep_metrics.csv under cfg.out.
std::vector<MetricsRecord> run_sweep(const RunConfig& cfg, const std::vector<SweepAxis>& axes, bool force,
                                     std::ostream& report);

/// Resolves the key a sweep axis or flag shorthand refers to.
std::string resolve_key_alias(const std::string& key);

}  // namespace bsl
