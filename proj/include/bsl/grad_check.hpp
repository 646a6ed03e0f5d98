#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bsl/graph.hpp"

namespace bsl {

struct GradCheckOptions {
  Real epsilon = 1e-4;
  // Entries probed per parameter tensor; tensors smaller than this are probed fully.
  std::size_t entries_per_param = 6;
  std::uint64_t seed = 1;
  // Optional fingerprint of the piecewise-linear regime at given parameters.
  // A probe whose +/- epsilon evaluations change it straddles a kink, where
  // the central difference is no reference; its error is reported apart.
  std::function<std::uint64_t(const ParamSet&)> regime;
  // Only decides whether a kinked probe still counts as verifying its tensor.
  Real tolerance = 1e-3;
};

struct GradCheckReport {
  Real max_error = 0;  // over smooth probes
  Real kinked_max_error = 0;
  std::size_t smooth = 0;
  std::size_t kinked = 0;
  std::vector<std::string> unverified;  // no smooth probe and no kinked probe within tolerance
};

using LossFn = std::function<Real(const ParamSet&)>;
/// Computes analytic gradients of the same loss into the ParamSet.
using GradFn = std::function<void(ParamSet&)>;

GradCheckReport finite_diff_report(ParamSet& params, const LossFn& loss, const GradFn& grad,
                                   const GradCheckOptions& options = {});

/// Max over sampled smooth entries of |analytic - central difference| /
/// max(|analytic|, |fd|, 1e-8). `params` is restored before returning.
Real finite_diff_check(ParamSet& params, const LossFn& loss, const GradFn& grad,
                       const GradCheckOptions& options = {});

/// Same check for a graph whose `loss_output` is a scalar; kinks are found
/// from the graph's own ReLUs and max-pools unless `options.regime` is set.
Real finite_diff_check(Graph& graph, const TensorMap& inputs, ParamSet& params,
                       const std::string& loss_output, const GradCheckOptions& options = {});

/// Hash of ReLU signs and max-pool winners from the graph's last forward pass.
std::uint64_t activation_regime(const Graph& graph, std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace bsl
