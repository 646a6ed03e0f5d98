#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bsl/tensor.hpp"

namespace bsl {

/// First/second moment estimates, keyed like the parameters they track.
struct AdamState {
  TensorMap first_moment;
  TensorMap second_moment;
  std::uint64_t step = 0;
};

/// Learnable parameters of one network with their gradients and optimizer state.
///
/// Values are only mutated by the optimizer, initialization and checkpoint
/// loading. Gradients are accumulated by backward passes and cleared by
/// adam_step().
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);

  bool contains(std::string_view name) const { return values_.find(name) != values_.end(); }
  std::vector<std::string> names() const;
  std::size_t numel() const;
  bool empty() const { return values_.empty(); }

  const Tensor& value(std::string_view name) const;
  Tensor& mutable_value(std::string_view name);
  const TensorMap& values() const { return values_; }

  const Tensor& grad(std::string_view name) const;
  const TensorMap& grads() const { return grads_; }

  /// Adds `grads` into the stored gradients and marks them populated.
  /// Every key must name a parameter of identical shape.
  void accumulate_grads(const TensorMap& grads);
  void zero_grads();
  bool has_grads() const { return grads_ready_; }

  Real grad_norm() const;
  /// Rescales gradients so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  Real clip_grad_norm(Real max_norm);

  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

  /// Byte-level equality of values (not grads or optimizer state).
  bool same_values(const ParamSet& other) const { return values_ == other.values_; }

 private:
  TensorMap values_;
  TensorMap grads_;
  AdamState adam_;
  bool grads_ready_ = false;
};

}  // namespace bsl
