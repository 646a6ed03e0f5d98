#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "bsl/models.hpp"
#include "bsl/synthscan.hpp"
#include "bsl/trainer.hpp"

namespace bsl::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("bsl_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Raw bytes of every value tensor in name order.
inline std::vector<std::uint8_t> value_bytes(const ParamSet& p) {
  std::vector<std::uint8_t> out;
  for (const auto& [name, t] : p.values()) {
    out.insert(out.end(), name.begin(), name.end());
    const auto d = t.data();
    const std::size_t off = out.size();
    out.resize(off + d.size() * sizeof(Real));
    std::memcpy(out.data() + off, d.data(), d.size() * sizeof(Real));
  }
  return out;
}

inline GeneratorParams tiny_generator() {
  GeneratorParams p;
  p.frames = 16;
  p.height = 16;
  p.width = 16;
  return p;
}

// Small corpus written under a per-test directory and loaded back.
inline Corpus tiny_corpus(const std::string& name, SplitCounts counts = {4, 4, 2}, std::uint64_t seed = 1) {
  const auto dir = fresh_dir(name);
  make_corpus(seed, counts, tiny_generator(), dir);
  return load_corpus(dir);
}

inline ModelSpec tiny_spec(std::size_t tau = 4) {
  ModelSpec spec;
  spec.segmenter.in_frames = spec.regressor.in_frames = tau;
  spec.segmenter.base_channels = spec.regressor.base_channels = 2;
  spec.segmenter.height = spec.regressor.height = 16;
  spec.segmenter.width = spec.regressor.width = 16;
  spec.regressor.depth = 2;
  return spec;
}

inline TrainerConfig tiny_trainer() {
  TrainerConfig cfg;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 2;
  cfg.minibatch = 3;
  cfg.tau = 4;
  cfg.warmup_epochs = 1;
  cfg.selection_after_epoch = 2;
  cfg.selection_windows = 2;
  cfg.seed = 3;
  return cfg;
}

}  // namespace bsl::testing
