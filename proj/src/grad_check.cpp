#include "bsl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bsl/binary_io.hpp"
#include "bsl/errors.hpp"
#include "bsl/rng.hpp"

namespace bsl {

GradCheckReport finite_diff_report(ParamSet& params, const LossFn& loss, const GradFn& grad,
                                   const GradCheckOptions& options) {
  if (!(options.epsilon > 0)) throw ContractError("finite_diff_check needs epsilon > 0");
  params.zero_grads();
  grad(params);
  TensorMap analytic = params.grads();
  params.zero_grads();

  const std::uint64_t base = options.regime ? options.regime(params) : 0;
  Rng rng(options.seed);
  GradCheckReport report;
  for (const auto& name : params.names()) {
    Tensor& w = params.mutable_value(name);
    std::vector<std::size_t> entries(w.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (entries.size() > options.entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.entries_per_param);
    }
    bool verified = false;
    for (std::size_t i : entries) {
      const Real saved = w[i];
      w[i] = saved + options.epsilon;
      const Real up = loss(params);
      bool kink = options.regime && options.regime(params) != base;
      w[i] = saved - options.epsilon;
      const Real down = loss(params);
      kink = kink || (options.regime && options.regime(params) != base);
      w[i] = saved;
      const Real fd = (up - down) / (2 * options.epsilon);
      const Real a = analytic.at(name)[i];
      const Real err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), Real{1e-8}});
      if (kink) {
        ++report.kinked;
        report.kinked_max_error = std::max(report.kinked_max_error, err);
        verified = verified || err < options.tolerance;
      } else {
        ++report.smooth;
        report.max_error = std::max(report.max_error, err);
        verified = true;
      }
    }
    if (!entries.empty() && !verified) report.unverified.push_back(name);
  }
  return report;
}

Real finite_diff_check(ParamSet& params, const LossFn& loss, const GradFn& grad, const GradCheckOptions& options) {
  return finite_diff_report(params, loss, grad, options).max_error;
}

std::uint64_t activation_regime(const Graph& graph, std::uint64_t hash) {
  if (!graph.has_forward()) throw ContractError("activation_regime needs a forward pass");
  std::vector<std::uint8_t> bits;
  for (NodeId id = 0; id < graph.size(); ++id) {
    const Node& node = graph.node(id);
    if (node.kind != OpKind::kRelu && node.kind != OpKind::kMaxPool2) continue;
    const Tensor& x = graph.value(node.inputs[0]);
    bits.clear();
    if (node.kind == OpKind::kRelu) {
      for (std::size_t i = 0; i < x.size(); ++i) bits.push_back(x[i] > 0);
    } else {
      // same winner rule as the forward pass
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y + 1 < h; y += 2) {
          for (std::size_t xo = 0; xo + 1 < w; xo += 2) {
            const std::size_t base = (ch * h + y) * w + xo;
            const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
            std::uint8_t best = 0;
            for (std::uint8_t j = 1; j < 4; ++j) {
              if (x[cand[j]] > x[cand[best]]) best = j;
            }
            bits.push_back(best);
          }
        }
      }
    }
    hash = io::fnv1a64(bits, hash);
  }
  return hash;
}

Real finite_diff_check(Graph& graph, const TensorMap& inputs, ParamSet& params, const std::string& loss_output,
                       const GradCheckOptions& options) {
  auto loss = [&](const ParamSet& p) {
    const TensorMap out = forward(graph, inputs, p);
    const Tensor& l = out.at(loss_output);
    if (l.size() != 1) throw ContractError("finite_diff_check needs a scalar loss, got " + shape_to_string(l.shape()));
    return l[0];
  };
  auto grad = [&](ParamSet& p) {
    loss(p);
    backward(graph, loss_output, p);
  };
  GradCheckOptions opts = options;
  if (!opts.regime) {
    opts.regime = [&](const ParamSet& p) {
      forward(graph, inputs, p);
      return activation_regime(graph);
    };
  }
  return finite_diff_check(params, loss, grad, opts);
}

}  // namespace bsl
