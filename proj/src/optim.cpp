#include "bsl/optim.hpp"

#include <cmath>

#include "bsl/errors.hpp"

namespace bsl {

void adam_step(ParamSet& params, const AdamOptions& options) {
  if (!params.has_grads()) throw StateError("adam_step called without populated gradients");
  if (options.clip_norm > 0) params.clip_grad_norm(options.clip_norm);

  AdamState& state = params.adam();
  state.step += 1;
  const Real t = static_cast<Real>(state.step);
  const Real bias1 = 1 - std::pow(options.beta1, t);
  const Real bias2 = 1 - std::pow(options.beta2, t);

  for (const auto& name : params.names()) {
    auto w = params.mutable_value(name).data();
    auto g = params.grad(name).data();
    auto m = state.first_moment.at(name).data();
    auto v = state.second_moment.at(name).data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options.beta1 * m[i] + (1 - options.beta1) * g[i];
      v[i] = options.beta2 * v[i] + (1 - options.beta2) * g[i] * g[i];
      const Real m_hat = m[i] / bias1;
      const Real v_hat = v[i] / bias2;
      w[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
  params.zero_grads();
}

}  // namespace bsl
