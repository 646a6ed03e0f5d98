#include "bsl/models.hpp"

#include <cmath>
#include <string>

#include "bsl/errors.hpp"
#include "bsl/parallel.hpp"
#include "bsl/rng.hpp"

namespace bsl {

void SegmenterConfig::validate() const {
  if (depth < 2) throw ConfigError("segmenter depth must be >= 2");
  if (in_frames == 0 || landmarks == 0 || base_channels == 0) throw ConfigError("segmenter sizes must be positive");
  const std::size_t div = std::size_t{1} << depth;
  if (height == 0 || width == 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("segmenter input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^depth = " + std::to_string(div));
  }
}

void SkillRegressorConfig::validate() const {
  if (depth < 1) throw ConfigError("regressor depth must be >= 1");
  if (in_frames == 0 || base_channels == 0) throw ConfigError("regressor sizes must be positive");
  const std::size_t div = std::size_t{1} << depth;
  if (height == 0 || width == 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("regressor input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^depth = " + std::to_string(div));
  }
}

namespace {

struct Builder {
  Graph& g;
  ParamSet& p;

  NodeId conv(NodeId x, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    p.add(name + ".weight", Tensor({cout, cin, k, k}));
    p.add(name + ".bias", Tensor({cout}));
    return g.conv2d(x, g.param(name + ".weight"), g.param(name + ".bias"));
  }
  NodeId conv_norm_relu(NodeId x, const std::string& name, std::size_t cin, std::size_t cout) {
    const NodeId c = conv(x, name, cin, cout, 3);
    p.add(name + ".norm.gain", Tensor({cout}));
    p.add(name + ".norm.bias", Tensor({cout}));
    return g.relu(g.layer_norm(c, g.param(name + ".norm.gain"), g.param(name + ".norm.bias")));
  }
  NodeId dense(NodeId x, const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", Tensor({out, in}));
    p.add(name + ".bias", Tensor({out}));
    return g.dense(x, g.param(name + ".weight"), g.param(name + ".bias"));
  }
};

}  // namespace

Network build_segmenter(const SegmenterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network net;
  Builder b{net.graph, net.params};
  auto channels = [&](std::size_t level) { return cfg.base_channels << level; };

  NodeId x = net.graph.input(kFramesInput);
  std::vector<NodeId> skips;
  std::size_t cin = cfg.in_frames;
  for (std::size_t level = 0; level < cfg.depth; ++level) {
    x = b.conv_norm_relu(x, "enc" + std::to_string(level), cin, channels(level));
    skips.push_back(x);
    x = net.graph.max_pool2(x);
    cin = channels(level);
  }
  x = b.conv_norm_relu(x, "bottleneck", cin, channels(cfg.depth));
  cin = channels(cfg.depth);
  for (std::size_t level = cfg.depth; level-- > 0;) {
    const std::string tag = "dec" + std::to_string(level);
    x = b.conv_norm_relu(net.graph.upsample2(x), tag + ".up", cin, channels(level));
    x = net.graph.concat({x, skips[level]});
    x = b.conv_norm_relu(x, tag + ".fuse", 2 * channels(level), channels(level));
    cin = channels(level);
  }
  x = b.conv(x, "head", cin, cfg.out_channels(), 1);
  net.graph.set_output(kProbsOutput, net.graph.sigmoid(x));
  init_params(net.params, seed);
  return net;
}

Network build_skill_regressor(const SkillRegressorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network net;
  Builder b{net.graph, net.params};
  NodeId x = net.graph.input(kFramesInput);
  std::size_t cin = cfg.in_frames;
  for (std::size_t stage = 0; stage < cfg.depth; ++stage) {
    const std::size_t cout = cfg.base_channels << stage;
    x = net.graph.max_pool2(b.conv_norm_relu(x, "stage" + std::to_string(stage), cin, cout));
    cin = cout;
  }
  x = net.graph.global_avg_pool(x);
  x = b.dense(x, "head", cin, 1);
  net.graph.set_output(kScoreOutput, net.graph.sigmoid(x));
  init_params(net.params, seed);
  return net;
}

void init_params(ParamSet& params, std::uint64_t seed, InitScheme scheme) {
  (void)scheme;  // only one scheme so far
  for (const auto& name : params.names()) {
    Tensor& t = params.mutable_value(name);
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
      t.fill(0);
      continue;
    }
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0) {
      t.fill(1);
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < t.rank(); ++i) fan_in *= t.dim(i);
    const Real bound = std::sqrt(Real{1} / static_cast<Real>(fan_in));
    Rng rng(derive_seed(seed, name));
    for (Real& v : t.data()) v = (2 * uniform01(rng) - 1) * bound;
  }
}

Models build_models(const ModelSpec& spec) {
  if (spec.segmenter.in_frames != spec.regressor.in_frames || spec.segmenter.height != spec.regressor.height ||
      spec.segmenter.width != spec.regressor.width) {
    throw ConfigError("segmenter and regressor must see the same frame stack shape");
  }
  Models m;
  m.spec = spec;
  m.segmenter = build_segmenter(spec.segmenter, 0).graph;
  m.regressor = build_skill_regressor(spec.regressor, 0).graph;
  return m;
}

ParamSet initial_theta(const ModelSpec& spec, std::uint64_t seed) {
  return build_segmenter(spec.segmenter, derive_seed(seed, "theta")).params;
}

ParamSet initial_omega(const ModelSpec& spec, std::uint64_t seed) {
  return build_skill_regressor(spec.regressor, derive_seed(seed, "omega")).params;
}

Tensor predict_probs(const Graph& segmenter, const ParamSet& theta, const Tensor& frames) {
  Graph g = segmenter;
  TensorMap in;
  in.emplace(kFramesInput, frames);
  return forward(g, in, theta).at(kProbsOutput);
}

std::vector<Real> predict_scores(const Graph& regressor, const ParamSet& omega, std::span<const Tensor> inputs,
                                 std::size_t threads) {
  std::vector<Real> scores(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    Graph g = regressor;
    TensorMap in;
    in.emplace(kFramesInput, inputs[i]);
    scores[i] = forward(g, in, omega).at(kScoreOutput)[0];
  });
  return scores;
}

}  // namespace bsl
