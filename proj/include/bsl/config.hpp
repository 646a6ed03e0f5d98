#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bsl/evaluation.hpp"
#include "bsl/trainer.hpp"

namespace bsl {

/// Every tunable of a pipeline run. Text form is one `section.key = value`
/// per line; '#' starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path out = "out";
  std::filesystem::path data;  // corpus directory
  std::filesystem::path run;   // directory holding task.ckpt and skill.ckpt

  SplitCounts scans{32, 32, 16};
  GeneratorParams generator;
  ModelSpec model;
  TrainerConfig trainer;

  Split eval_split = Split::kTest;
  Real eval_threshold = kBinarizeThreshold;

  std::vector<Real> meta_fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::vector<std::size_t> meta_epochs{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t meta_steps_per_epoch = 4;

  std::size_t baseline_epochs = 60;
  std::filesystem::path trace_skill_checkpoint;  // optional replacement for the run's skill.ckpt

  /// Applies one `key = value` assignment. ConfigError on unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  /// Applies every assignment in `text`; errors name the line.
  void apply_text(const std::string& text, const std::string& origin);
  void apply_file(const std::filesystem::path& path);

  /// Cross-field checks; run before any subcommand executes.
  void validate() const;

  /// Every key with its resolved value, in a fixed order.
  std::string to_text() const;

  /// Architecture with frame count and size taken from tau and the generator.
  ModelSpec model_spec() const;
  TrainerConfig trainer_config() const;
  EvalConfig eval_config() const;
};

inline constexpr const char* kConfigSnapshot = "config.txt";
inline constexpr const char* kConfigEnv = "BSL_CONFIG";

/// All keys accepted by RunConfig::set.
std::vector<std::string> config_keys();

}  // namespace bsl
