#include "bsl/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "bsl/binary_io.hpp"
#include "bsl/checkpoint.hpp"
#include "bsl/errors.hpp"

namespace fs = std::filesystem;

namespace bsl {

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ContractError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ContractError("output directory " + dir.string() + " is not empty (use --force)");
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_config_snapshot(const RunConfig& cfg, const fs::path& dir) {
  write_text_file(dir / kConfigSnapshot, cfg.to_text());
}

Corpus load_run_corpus(RunConfig& cfg) {
  if (cfg.data.empty()) throw ContractError("no corpus given (--data or run.data)");
  if (!fs::exists(cfg.data / kManifestFile)) throw ContractError("no corpus manifest under " + cfg.data.string());
  Corpus corpus = load_corpus(cfg.data);
  const auto profile = cfg.generator.profile;
  cfg.generator = corpus.manifest.params;
  cfg.generator.profile = profile;
  cfg.validate();
  return corpus;
}

std::string corpus_summary(const CorpusManifest& manifest) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %7s %8s %10s %9s\n", "split", "scans", "frames", "operators", "subjects");
  os << line;
  std::size_t total_scans = 0, total_frames = 0;
  for (Split split : {Split::kTask, Split::kSkill, Split::kTest}) {
    std::set<std::uint32_t> ops, subjects;
    std::size_t scans = 0;
    for (const auto& e : manifest.entries) {
      if (e.split != split) continue;
      ++scans;
      ops.insert(e.sonographer_id);
      subjects.insert(e.subject_id);
    }
    const std::size_t frames = scans * manifest.params.frames;
    total_scans += scans;
    total_frames += frames;
    std::snprintf(line, sizeof line, "%-6s %7zu %8zu %10zu %9zu\n", split_name(split), scans, frames, ops.size(),
                  subjects.size());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-6s %7zu %8zu\n", "total", total_scans, total_frames);
  os << line;
  return os.str();
}

CorpusManifest run_gen_data(const RunConfig& cfg, bool force, std::ostream& report) {
  cfg.validate();
  prepare_output_dir(cfg.out, force);
  const CorpusManifest manifest = make_corpus(cfg.seed, cfg.scans, cfg.generator, cfg.out, cfg.threads);
  write_config_snapshot(cfg, cfg.out);
  report << corpus_summary(manifest);
  return manifest;
}

namespace {

std::string selection_csv(const TrainResult& r) {
  std::string s = "epoch,skill_mse,selected\n";
  for (const auto& rec : r.selections) {
    s += std::to_string(rec.epoch) + ',' + format_real(rec.mse) + ',' + (rec.selected ? "1" : "0") + '\n';
  }
  return s;
}

}  // namespace

TrainResult run_train(RunConfig cfg, bool force, std::ostream& report) {
  const Corpus corpus = load_run_corpus(cfg);
  prepare_output_dir(cfg.out, force);
  write_config_snapshot(cfg, cfg.out);
  const Models models = build_models(cfg.model_spec());

  std::ofstream steps(cfg.out / "steps.csv", std::ios::binary);
  if (!steps) throw FormatError("cannot open " + (cfg.out / "steps.csv").string());
  TrainOutputs outputs;
  outputs.checkpoint_dir = cfg.out;
  outputs.step_csv = &steps;
  TrainResult result = train(corpus, models, cfg.trainer_config(), outputs);

  write_text_file(cfg.out / "selection.csv", selection_csv(result));
  std::string summary;
  summary += "initial_selection_mse = " + format_real(result.initial_selection_mse) + '\n';
  if (!result.selections.empty()) {
    summary += "selected_epoch = " + std::to_string(result.state.best_epoch) + '\n';
    summary += "selected_selection_mse = " + format_real(result.state.best_selection_mse) + '\n';
  } else {
    summary += "selected_epoch = final\n";
  }
  summary += "steps = " + std::to_string(result.state.step) + '\n';
  write_text_file(cfg.out / "summary.txt", summary);
  report << summary;
  return result;
}

std::string resolve_key_alias(const std::string& key) {
  static const std::map<std::string, std::string> aliases = {
      {"norm", "train.norm"},     {"ltheta", "train.ltheta"}, {"m", "train.m_percent"},
      {"minibatch", "train.minibatch"}, {"tau", "train.tau"}, {"stride", "train.stride"},
      {"epochs", "train.epochs"}, {"seed", "run.seed"}};
  auto it = aliases.find(key);
  return it == aliases.end() ? key : it->second;
}

SweepAxis parse_sweep_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("sweep axis '" + text + "' must look like key=v1,v2");
  }
  SweepAxis axis;
  axis.first = text.substr(0, eq);
  std::istringstream is(text.substr(eq + 1));
  std::string v;
  while (std::getline(is, v, ',')) {
    if (!v.empty()) axis.second.push_back(v);
  }
  if (axis.second.empty()) throw ConfigError("sweep axis '" + text + "' has no values");
  return axis;
}

std::vector<SweepRun> expand_sweep(const RunConfig& base, const std::vector<SweepAxis>& axes) {
  std::vector<SweepRun> runs{{"", base}};
  for (const auto& [key, values] : axes) {
    const std::string full = resolve_key_alias(key);
    std::vector<SweepRun> next;
    for (const auto& r : runs) {
      for (const auto& v : values) {
        SweepRun n = r;
        n.config.set(full, v);
        n.name += (n.name.empty() ? "" : "_") + key + "-" + v;
        next.push_back(std::move(n));
      }
    }
    runs = std::move(next);
  }
  for (auto& r : runs) {
    r.config.validate();
    r.config.out = base.out / (r.name.empty() ? "run" : r.name);
  }
  return runs;
}

std::vector<fs::path> run_train_sweep(const RunConfig& cfg, const std::vector<SweepAxis>& axes, bool force,
                                      std::ostream& report) {
  const auto runs = expand_sweep(cfg, axes);
  prepare_output_dir(cfg.out, force);
  std::vector<fs::path> dirs;
  for (const auto& r : runs) {
    report << "== " << r.name << '\n';
    run_train(r.config, force, report);
    dirs.push_back(r.config.out);
  }
  return dirs;
}

namespace {

void require_checkpoints(const RunConfig& cfg) {
  if (cfg.run.empty()) throw ContractError("no checkpoint directory given (--run)");
  for (const char* f : {kTaskCheckpoint, kSkillCheckpoint}) {
    if (!fs::exists(cfg.run / f)) throw ContractError("missing checkpoint " + (cfg.run / f).string());
  }
}

std::vector<std::size_t> eval_scans(const RunConfig& cfg, const Corpus& corpus) {
  const auto scans = corpus.indices(cfg.eval_split);
  if (scans.empty()) throw ContractError(std::string("no scans in the ") + split_name(cfg.eval_split) + " split");
  return scans;
}

}  // namespace

MetricsRecord run_eval(RunConfig cfg, std::ostream& report) {
  require_checkpoints(cfg);
  const Corpus corpus = load_run_corpus(cfg);
  ParamSet theta, omega;
  load_pair(cfg.run, theta, omega);
  const Models models = build_models(cfg.model_spec());
  const MetricsRecord rec = direct_evaluate(models, theta, omega, corpus, eval_scans(cfg, corpus), cfg.eval_config());
  rec.check();
  fs::create_directories(cfg.out);
  write_config_snapshot(cfg, cfg.out);
  std::ostringstream csv;
  const std::string label = split_name(cfg.eval_split);
  write_metrics_csv(csv, std::span(&label, 1), std::span(&rec, 1));
  write_text_file(cfg.out / "metrics.csv", csv.str());
  report << csv.str();
  return rec;
}

MetaEvalResult run_meta_eval(RunConfig cfg, std::ostream& report) {
  require_checkpoints(cfg);
  const Corpus corpus = load_run_corpus(cfg);
  ParamSet theta, omega;
  load_pair(cfg.run, theta, omega);
  const Models models = build_models(cfg.model_spec());
  FineTuneOptions ft;
  ft.steps_per_epoch = cfg.meta_steps_per_epoch;
  const MetaEvalResult res = meta_evaluate(models, theta, omega, corpus, eval_scans(cfg, corpus), cfg.meta_fractions,
                                           cfg.meta_epochs, cfg.trainer_config(), cfg.eval_config(), ft);
  fs::create_directories(cfg.out);
  write_config_snapshot(cfg, cfg.out);
  std::ostringstream grid, base;
  write_meta_csv(grid, res.grid);
  write_meta_csv(base, res.baseline);
  write_text_file(cfg.out / "meta_grid.csv", grid.str());
  write_text_file(cfg.out / "meta_baseline.csv", base.str());
  report << "meta_grid.csv: " << res.grid.size() << " rows\n";
  return res;
}

std::vector<ScoreTrace> run_trace(RunConfig cfg, std::ostream& report) {
  require_checkpoints(cfg);
  const Corpus corpus = load_run_corpus(cfg);
  ParamSet theta, omega;
  load_pair(cfg.run, theta, omega);
  if (!cfg.trace_skill_checkpoint.empty()) omega = load_checkpoint(cfg.trace_skill_checkpoint);
  const Models models = build_models(cfg.model_spec());
  fs::create_directories(cfg.out / "traces");
  write_config_snapshot(cfg, cfg.out);
  std::vector<ScoreTrace> traces;
  for (std::size_t idx : eval_scans(cfg, corpus)) {
    const Scan& scan = corpus.scans[idx];
    traces.push_back(score_trace(models, theta, omega, scan, cfg.eval_config()));
    std::ostringstream csv;
    write_trace_csv(csv, traces.back());
    char name[48];
    std::snprintf(name, sizeof name, "trace_%u.csv", scan.subject_id);
    write_text_file(cfg.out / "traces" / name, csv.str());
  }
  report << traces.size() << " traces written to " << (cfg.out / "traces").string() << '\n';
  return traces;
}

BaselineResult run_baseline(RunConfig cfg, bool force, std::ostream& report) {
  const Corpus corpus = load_run_corpus(cfg);
  prepare_output_dir(cfg.out, force);
  write_config_snapshot(cfg, cfg.out);
  const Models models = build_models(cfg.model_spec());
  const BaselineResult res = train_supervised_baseline(corpus, models, cfg.trainer_config(), cfg.baseline_epochs);
  save_checkpoint(res.omega, cfg.out / kSkillCheckpoint);
  std::string csv = "epoch,validation_mse\n";
  for (std::size_t e = 0; e < res.validation_curve.size(); ++e) {
    csv += std::to_string(e + 1) + ',' + format_real(res.validation_curve[e]) + '\n';
  }
  write_text_file(cfg.out / "baseline_validation.csv", csv);
  report << "best validation mse " << format_real(res.best_validation_mse) << " at epoch " << res.best_epoch
         << " (years " << format_real(res.years_min) << ".." << format_real(res.years_max) << ")\n";
  return res;
}

std::vector<MetricsRecord> run_sweep(const RunConfig& cfg, const std::vector<SweepAxis>& axes, bool force,
                                     std::ostream& report) {
  const auto runs = expand_sweep(cfg, axes);
  prepare_output_dir(cfg.out, force);
  std::vector<MetricsRecord> records;
  std::vector<std::string> labels;
  for (const auto& r : runs) {
    report << "== " << r.name << '\n';
    run_train(r.config, force, report);
    RunConfig ev = r.config;
    ev.run = r.config.out;
    records.push_back(run_eval(ev, report));
    labels.push_back(r.name);
  }
  std::ostringstream csv;
  write_metrics_csv(csv, labels, records);
  write_text_file(cfg.out / "sweep_metrics.csv", csv.str());
  write_config_snapshot(cfg, cfg.out);
  return records;
}

}  // namespace bsl
