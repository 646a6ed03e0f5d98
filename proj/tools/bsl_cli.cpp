// bsl: corpus generation, bi-level training, evaluation and export.

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <sstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "bsl/errors.hpp"
#include "bsl/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// Flags that map one-to-one onto config keys.
class FlagTable {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& e = entries_.emplace_back();
    e.key = key;
    e.option = app->add_option(flag, e.value, help);
  }

  /// (key, value) of every flag present on the command line.
  std::vector<std::pair<std::string, std::string>> given() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : entries_) {
      if (e.option->count() > 0) out.emplace_back(e.key, e.value);
    }
    return out;
  }

 private:
  struct Entry {
    CLI::Option* option = nullptr;
    std::string key;
    std::string value;
  };
  std::deque<Entry> entries_;  // stable addresses for CLI11 bindings
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level skill assessment lab: synthetic corpora, training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  bool force = false;
  std::vector<std::string> sets;
  FlagTable globals;
  app.add_option("--config", config_file, "Config file of `section.key = value` lines");
  app.add_flag("--force", force, "Overwrite a non-empty output directory");
  app.add_option("--set", sets, "Extra `section.key=value` override (repeatable)");
  globals.add(&app, "--seed", "run.seed", "Master seed");
  globals.add(&app, "--out", "run.out", "Output directory");
  globals.add(&app, "--threads", "run.threads", "Worker threads (results do not depend on it)");

  FlagTable flags;
  auto add_train_flags = [&](CLI::App* sub) {
    flags.add(sub, "--data", "run.data", "Corpus directory");
    flags.add(sub, "--norm", "train.norm", "Score normalization: rank | minmax");
    flags.add(sub, "--ltheta", "train.ltheta", "Sequence task loss: min | avg | top_m");
    flags.add(sub, "--m", "train.m_percent", "Percentage for top_m");
    flags.add(sub, "--epochs", "train.epochs", "Training epochs");
    flags.add(sub, "--steps", "train.steps_per_epoch", "Steps per epoch");
    flags.add(sub, "--minibatch", "train.minibatch", "Sequences per minibatch");
    flags.add(sub, "--tau", "train.tau", "Frames per sequence");
    flags.add(sub, "--stride", "train.stride", "Frame stride within a sequence");
    flags.add(sub, "--warmup", "train.warmup_epochs", "Task-only warmup epochs");
    flags.add(sub, "--select-after", "train.selection_after_epoch", "First epoch eligible for model selection (0: last third of training)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  std::string scans;
  gen->add_option("--scans", scans, "Scans per split as task,skill,test")->required();
  flags.add(gen, "--frames", "data.frames", "Frames per scan");
  flags.add(gen, "--height", "data.height", "Frame height");
  flags.add(gen, "--width", "data.width", "Frame width");
  flags.add(gen, "--noise", "data.noise_sigma", "Noise amplitude at zero quality");

  auto* train = app.add_subcommand("train", "Train the task and skill predictors");
  add_train_flags(train);
  std::vector<std::string> train_sweep;
  train->add_option("--sweep", train_sweep, "Sweep axes, e.g. norm=rank,minmax ltheta=min,avg,top_m");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every point of a grid");
  add_train_flags(sweep);
  std::vector<std::string> sweep_axes;
  sweep->add_option("axes", sweep_axes, "Sweep axes, e.g. norm=rank,minmax ltheta=min,avg,top_m")->required();

  auto add_eval_flags = [&](CLI::App* sub) {
    flags.add(sub, "--data", "run.data", "Corpus directory");
    flags.add(sub, "--run", "run.checkpoint_dir", "Directory with task.ckpt and skill.ckpt");
    flags.add(sub, "--split", "eval.split", "Split to evaluate: task | skill | test");
  };
  auto* eval = app.add_subcommand("eval", "Direct evaluation of a trained pair");
  add_eval_flags(eval);
  auto* meta = app.add_subcommand("meta-eval", "Fine-tune on part of a split and evaluate on the rest");
  add_eval_flags(meta);
  flags.add(meta, "--fractions", "meta.fractions", "Meta-train fractions, comma separated");
  flags.add(meta, "--epochs-list", "meta.epochs", "Fine-tune epochs to evaluate, comma separated");
  auto* trace = app.add_subcommand("trace", "Per-window score traces over whole scans");
  add_eval_flags(trace);
  flags.add(trace, "--skill-checkpoint", "trace.skill_checkpoint", "Use this skill predictor instead of the run's");
  auto* baseline = app.add_subcommand("baseline", "Train the years-of-experience regressor");
  flags.add(baseline, "--data", "run.data", "Corpus directory");
  flags.add(baseline, "--epochs", "baseline.epochs", "Training epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    bsl::RunConfig cfg;
    if (const char* env = std::getenv(bsl::kConfigEnv); env && *env) cfg.apply_file(env);
    std::vector<std::pair<std::string, std::string>> overrides = globals.given();
    for (auto& kv : flags.given()) overrides.push_back(std::move(kv));
    // A run directory brings the configuration it was trained with.
    for (const auto& [key, value] : overrides) {
      if (key == "run.checkpoint_dir" && std::filesystem::exists(std::filesystem::path(value) / bsl::kConfigSnapshot)) {
        cfg.apply_file(std::filesystem::path(value) / bsl::kConfigSnapshot);
      }
    }
    if (!config_file.empty()) cfg.apply_file(config_file);
    if (!scans.empty()) {
      std::vector<std::string> parts;
      std::stringstream ss(scans);
      for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
      if (parts.size() != 3) throw bsl::ConfigError("--scans expects task,skill,test");
      cfg.set("data.task_scans", parts[0]);
      cfg.set("data.skill_scans", parts[1]);
      cfg.set("data.test_scans", parts[2]);
    }
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw bsl::ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();

    if (gen->parsed()) {
      bsl::run_gen_data(cfg, force, std::cout);
    } else if (train->parsed()) {
      if (train_sweep.empty()) {
        bsl::run_train(cfg, force, std::cout);
      } else {
        std::vector<bsl::SweepAxis> axes;
        for (const auto& a : train_sweep) axes.push_back(bsl::parse_sweep_axis(a));
        bsl::run_train_sweep(cfg, axes, force, std::cout);
      }
    } else if (sweep->parsed()) {
      std::vector<bsl::SweepAxis> axes;
      for (const auto& a : sweep_axes) axes.push_back(bsl::parse_sweep_axis(a));
      bsl::run_sweep(cfg, axes, force, std::cout);
    } else if (eval->parsed()) {
      bsl::run_eval(cfg, std::cout);
    } else if (meta->parsed()) {
      bsl::run_meta_eval(cfg, std::cout);
    } else if (trace->parsed()) {
      bsl::run_trace(cfg, std::cout);
    } else if (baseline->parsed()) {
      bsl::run_baseline(cfg, force, std::cout);
    }
  } catch (const bsl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const bsl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
