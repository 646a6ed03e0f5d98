#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bsl/graph.hpp"

namespace bsl {

/// Encoder-decoder segmenter over a stack of frames.
///
/// Input "frames" is (in_frames, height, width); output "probs" is
/// (in_frames * landmarks, height, width) with channel index
/// frame * landmarks + landmark, each passed through its own sigmoid.
struct SegmenterConfig {
  std::size_t in_frames = 8;
  std::size_t base_channels = 8;
  std::size_t depth = 2;
  std::size_t landmarks = 3;
  std::size_t height = 32;
  std::size_t width = 40;

  void validate() const;
  std::size_t out_channels() const { return in_frames * landmarks; }
};

/// Convolutional regressor mapping a frame stack to a scalar "score" in (0,1).
struct SkillRegressorConfig {
  std::size_t in_frames = 8;
  std::size_t base_channels = 8;
  std::size_t depth = 3;
  std::size_t height = 32;
  std::size_t width = 40;

  void validate() const;
};

enum class InitScheme { kFanInUniform };

/// A network: its graph and an initialized parameter store.
struct Network {
  Graph graph;
  ParamSet params;
};

inline constexpr const char* kFramesInput = "frames";
inline constexpr const char* kProbsOutput = "probs";
inline constexpr const char* kScoreOutput = "score";

Network build_segmenter(const SegmenterConfig& cfg, std::uint64_t seed);
Network build_skill_regressor(const SkillRegressorConfig& cfg, std::uint64_t seed);

/// Weights ~ U(-a, a) with a = sqrt(1/fan_in); tensors whose name ends in
/// ".bias" are zeroed and ".gain" set to 1. Each tensor draws from its own
/// substream keyed by name.
void init_params(ParamSet& params, std::uint64_t seed, InitScheme scheme = InitScheme::kFanInUniform);

/// Architecture pair used throughout training and evaluation.
struct ModelSpec {
  SegmenterConfig segmenter;
  SkillRegressorConfig regressor;
};

/// Graphs of both networks; parameters live with the caller.
struct Models {
  ModelSpec spec;
  Graph segmenter;
  Graph regressor;
};

Models build_models(const ModelSpec& spec);
/// Freshly initialized task (theta) and skill (omega) parameters.
ParamSet initial_theta(const ModelSpec& spec, std::uint64_t seed);
ParamSet initial_omega(const ModelSpec& spec, std::uint64_t seed);

/// Segmentation probabilities for one frame stack.
Tensor predict_probs(const Graph& segmenter, const ParamSet& theta, const Tensor& frames);

/// One score per input, in input order. Each input is evaluated independently.
std::vector<Real> predict_scores(const Graph& regressor, const ParamSet& omega, std::span<const Tensor> inputs,
                                 std::size_t threads = 1);

}  // namespace bsl
