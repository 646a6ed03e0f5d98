#pragma once

#include "bsl/param_set.hpp"

namespace bsl {

struct AdamOptions {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  // Global-norm gradient clip applied before the update; 0 disables.
  Real clip_norm = 0;
};

/// One bias-corrected Adam update. Requires populated gradients (StateError
/// otherwise); increments the step counter and clears the gradients.
void adam_step(ParamSet& params, const AdamOptions& options);

}  // namespace bsl
