#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "bsl/binary_io.hpp"
#include "bsl/evaluation.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using namespace bsl;
using namespace bsl::testing;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

std::string slurp(const fs::path& p) {
  const auto bytes = io::read_file(p.string());
  return {bytes.begin(), bytes.end()};
}

Outcome run(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "bsl_cli_last.log";
  const std::string cmd = env + " " + BSL_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.output = slurp(log);
  return o;
}

// Small frames, networks and schedule so every subcommand runs in well under a second.
fs::path tiny_config() {
  const fs::path dir = fresh_dir("cli_cfg");
  fs::create_directories(dir);
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << "data.frames = 16\ndata.height = 16\ndata.width = 16\n"
                      "model.segmenter_channels = 2\nmodel.regressor_channels = 2\nmodel.regressor_depth = 2\n"
                      "train.tau = 4\ntrain.epochs = 2\ntrain.steps_per_epoch = 1\ntrain.minibatch = 2\n"
                      "train.warmup_epochs = 1\ntrain.selection_windows = 1\n"
                      "meta.steps_per_epoch = 1\nbaseline.epochs = 1\n";
  return p;
}

std::string cfg_flag() { return "--config " + tiny_config().string(); }

fs::path tiny_data(const std::string& name, const std::string& scans = "3,3,4") {
  const fs::path d = fresh_dir(name);
  const Outcome o = run(cfg_flag() + " --seed 7 --out " + d.string() + " gen-data --scans " + scans);
  EXPECT_EQ(o.code, 0) << o.output;
  return d;
}

fs::path tiny_run(const std::string& name, const fs::path& data) {
  const fs::path d = fresh_dir(name);
  const Outcome o = run(cfg_flag() + " --out " + d.string() + " train --data " + data.string());
  EXPECT_EQ(o.code, 0) << o.output;
  return d;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("frobnicate").code, 2);
  const Outcome missing = run("gen-data --out " + fresh_dir("cli_noscans").string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("--scans"), std::string::npos) << missing.output;
  EXPECT_EQ(run("--set train.bogus=1 gen-data --scans 1,1,1 --out " + fresh_dir("cli_bogus").string()).code, 2);
}

TEST(Cli, GenDataIsDeterministicAndGuardsOutput) {
  const fs::path a = tiny_data("cli_gen_a", "4,4,2"), b = tiny_data("cli_gen_b", "4,4,2");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "config.txt") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 10u + 1);  // scans and manifest
  const Outcome again = run(cfg_flag() + " --seed 7 --out " + a.string() + " gen-data --scans 4,4,2");
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.output.find("--force"), std::string::npos);
  EXPECT_EQ(run(cfg_flag() + " --seed 7 --force --out " + a.string() + " gen-data --scans 4,4,2").code, 0);
  const std::string manifest = slurp(a / kManifestFile);
  EXPECT_EQ(lines(manifest) - static_cast<std::size_t>(std::count(manifest.begin(), manifest.end(), '#')), 10u);
}

TEST(Cli, TrainRecordsChoicesAndRejectsBadM) {
  const fs::path data = tiny_data("cli_train_data");
  const fs::path out = fresh_dir("cli_train");
  const Outcome ok =
      run(cfg_flag() + " --out " + out.string() + " train --norm rank --ltheta avg --data " + data.string());
  ASSERT_EQ(ok.code, 0) << ok.output;
  const std::string snap = slurp(out / "config.txt");
  EXPECT_NE(snap.find("train.norm = rank\n"), std::string::npos);
  EXPECT_NE(snap.find("train.ltheta = avg\n"), std::string::npos);
  const Outcome bad = run(cfg_flag() + " --out " + fresh_dir("cli_train_bad").string() +
                          " train --ltheta top_m --m 0 --data " + data.string());
  EXPECT_EQ(bad.code, 2);
}

TEST(Cli, NumericFailureExitsWithThree) {
  const fs::path data = tiny_data("cli_nan_data");
  const Outcome o = run(cfg_flag() + " --set train.lr_task=1e250 --set train.warmup_epochs=2 --out " +
                        fresh_dir("cli_nan").string() + " train --data " + data.string());
  EXPECT_EQ(o.code, 3) << o.output;
  EXPECT_NE(o.output.find("epoch"), std::string::npos) << o.output;
}

TEST(Cli, SweepMakesOneRunPerCombination) {
  const fs::path data = tiny_data("cli_sweep_data");
  const fs::path out = fresh_dir("cli_sweep");
  const Outcome o = run(cfg_flag() + " --set train.epochs=1 --set train.warmup_epochs=0 --out " + out.string() +
                        " train --data " + data.string() + " --sweep norm=rank,minmax ltheta=min,avg,top_m");
  ASSERT_EQ(o.code, 0) << o.output;
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (!e.is_directory()) continue;
    EXPECT_TRUE(fs::exists(e.path() / "task.ckpt")) << e.path();
    ++dirs;
  }
  EXPECT_EQ(dirs, 6u);
  EXPECT_NE(slurp(out / "norm-minmax_ltheta-top_m" / "config.txt").find("train.ltheta = top_m"), std::string::npos);
}

TEST(Cli, EvalTraceAndMissingCheckpoint) {
  const fs::path data = tiny_data("cli_eval_data");
  const fs::path run_dir = tiny_run("cli_eval_run", data);
  const fs::path ev = fresh_dir("cli_eval");
  const Outcome o = run("--out " + ev.string() + " eval --data " + data.string() + " --run " + run_dir.string());
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_EQ(lines(slurp(ev / "metrics.csv")), 2u);

  const fs::path tr = fresh_dir("cli_trace");
  ASSERT_EQ(run("--out " + tr.string() + " trace --data " + data.string() + " --run " + run_dir.string()).code, 0);
  for (const auto& e : fs::directory_iterator(tr / "traces")) {
    const std::string text = slurp(e.path());
    EXPECT_EQ(text.substr(0, text.find('\n')), "time_s,skill_score,task_metric");
  }

  const fs::path empty = fresh_dir("cli_empty_run");
  fs::create_directories(empty);
  const Outcome missing = run(cfg_flag() + " --out " + fresh_dir("cli_eval_missing").string() + " eval --data " +
                              data.string() + " --run " + empty.string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("task.ckpt"), std::string::npos) << missing.output;
}

TEST(Cli, MetaEvalFullGrid) {
  const fs::path data = tiny_data("cli_meta_data", "3,3,20");
  const fs::path run_dir = tiny_run("cli_meta_run", data);
  const fs::path out = fresh_dir("cli_meta");
  const Outcome o = run("--out " + out.string() + " meta-eval --data " + data.string() + " --run " +
                        run_dir.string() +
                        " --fractions 0.1,0.2,0.3,0.4,0.5,0.6 --epochs-list 10,20,30,40,50,60,70,80,90,100");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_EQ(lines(slurp(out / "meta_grid.csv")), 1 + 60u);
  EXPECT_EQ(lines(slurp(out / "meta_baseline.csv")), 1 + 6u);
}

TEST(Cli, BaselineWritesCheckpoint) {
  const fs::path data = tiny_data("cli_base_data");
  const fs::path out = fresh_dir("cli_base");
  const Outcome o = run(cfg_flag() + " --out " + out.string() + " baseline --data " + data.string() + " --epochs 2");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_TRUE(fs::exists(out / "skill.ckpt"));
  EXPECT_EQ(lines(slurp(out / "baseline_validation.csv")), 3u);
}

TEST(Cli, ConfigLayers) {
  const fs::path env_cfg = fresh_dir("cli_env") / "env.cfg";
  fs::create_directories(env_cfg.parent_path());
  std::ofstream(env_cfg) << "train.epochs = 1\ntrain.warmup_epochs = 0\ndata.frames = 12\n";
  const fs::path data = tiny_data("cli_env_data");
  const fs::path out = fresh_dir("cli_env_run");
  // The environment file is the lowest layer: the --config file and flags win.
  const Outcome o = run(cfg_flag() + " --out " + out.string() + " train --epochs 3 --data " + data.string(),
                        "BSL_CONFIG=" + env_cfg.string());
  ASSERT_EQ(o.code, 0) << o.output;
  const std::string snap = slurp(out / "config.txt");
  EXPECT_NE(snap.find("train.epochs = 3\n"), std::string::npos);
  EXPECT_NE(snap.find("train.warmup_epochs = 1\n"), std::string::npos);
  EXPECT_NE(snap.find("data.frames = 16\n"), std::string::npos);
  const fs::path gen = fresh_dir("cli_env_gen");
  const Outcome env_only = run("--out " + gen.string() + " gen-data --scans 1,1,1", "BSL_CONFIG=" + env_cfg.string());
  ASSERT_EQ(env_only.code, 0) << env_only.output;
  EXPECT_NE(slurp(gen / "config.txt").find("data.frames = 12\n"), std::string::npos);
}
