#include "bsl/param_set.hpp"

#include <cmath>

#include "bsl/errors.hpp"

namespace bsl {

void ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  Tensor zero(value.shape());
  value.requires_grad = true;
  grads_.emplace(name, zero);
  adam_.first_moment.emplace(name, zero);
  adam_.second_moment.emplace(name, zero);
  values_.emplace(name, std::move(value));
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [name, _] : values_) out.push_back(name);
  return out;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

const Tensor& ParamSet::value(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamSet::mutable_value(std::string_view name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamSet::grad(std::string_view name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParamSet::accumulate_grads(const TensorMap& grads) {
  for (const auto& [name, g] : grads) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ContractError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + shape_to_string(g.shape()) +
                       ", parameter has " + shape_to_string(it->second.shape()));
    }
    auto dst = it->second.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  grads_ready_ = true;
}

void ParamSet::zero_grads() {
  for (auto& [_, g] : grads_) g.fill(0);
  grads_ready_ = false;
}

Real ParamSet::grad_norm() const {
  Real sq = 0;
  for (const auto& [_, g] : grads_) {
    for (Real v : g.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

Real ParamSet::clip_grad_norm(Real max_norm) {
  const Real norm = grad_norm();
  if (max_norm > 0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& [_, g] : grads_) {
      for (Real& v : g.data()) v *= s;
    }
  }
  return norm;
}

}  // namespace bsl
