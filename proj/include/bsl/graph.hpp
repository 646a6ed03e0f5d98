#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "bsl/param_set.hpp"
#include "bsl/tensor.hpp"

namespace bsl {

enum class OpKind {
  kInput,
  kParam,
  kConv2d,         // (Cin,H,W) * (Cout,Cin,K,K) + (Cout), zero padding, stride 1
  kDense,          // flatten(x) -> (Out) with weight (Out,In) and bias (Out)
  kMaxPool2,       // (C,H,W) -> (C,H/2,W/2)
  kUpsample2,      // nearest neighbour (C,H,W) -> (C,2H,2W)
  kRelu,
  kSigmoid,
  kConcat,         // along the leading (channel) axis
  kGlobalAvgPool,  // (C,H,W) -> (C)
  kMul,
  kAdd,
  kScale,
  kReduceSum,
  kReduceMean,
  kLayerNorm,      // (C,H,W) standardized over all elements, then per-channel gain (C) and bias (C)
};

const char* op_name(OpKind kind);

using NodeId = std::size_t;

inline constexpr Real kLayerNormEps = 1e-5;

struct Node {
  OpKind kind;
  std::vector<NodeId> inputs;
  std::string name;  // binding name for kInput/kParam
  Real scale = 1;    // kScale factor
};

/// Static computation DAG plus the activation cache of its last forward pass.
///
/// Nodes can only reference earlier nodes, so insertion order is a
/// topological order. Copying a Graph gives an independent instance that can
/// run on another thread.
class Graph {
 public:
  NodeId input(std::string name);
  NodeId param(std::string name);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias);
  NodeId dense(NodeId x, NodeId weight, NodeId bias);
  NodeId max_pool2(NodeId x);
  NodeId upsample2(NodeId x);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId concat(std::vector<NodeId> parts);
  NodeId global_avg_pool(NodeId x);
  NodeId mul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, Real factor);
  NodeId reduce_sum(NodeId x);
  NodeId reduce_mean(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);

  void set_output(std::string name, NodeId id);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<std::pair<std::string, NodeId>>& outputs() const { return outputs_; }
  NodeId output_id(std::string_view name) const;

  bool has_forward() const { return evaluated_; }
  /// Cached activation of a node from the last forward pass.
  const Tensor& value(NodeId id) const;

  /// Drops cached activations.
  void clear();

 private:
  NodeId push(Node node);

  friend TensorMap forward(Graph&, const TensorMap&, const ParamSet&);
  friend void backward(Graph&, const TensorMap&, TensorMap&);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, NodeId>> outputs_;
  std::vector<Tensor> values_;
  std::vector<std::vector<std::size_t>> pool_index_;
  bool evaluated_ = false;
};

/// Evaluates every node, caching activations for backward. Returns the named
/// outputs. Throws ShapeError / NumericError naming the failing node.
TensorMap forward(Graph& graph, const TensorMap& inputs, const ParamSet& params);

/// Reverse pass seeded with d(loss)/d(output) for each named output. Parameter
/// gradients are added into `grads` (entries created on first use).
void backward(Graph& graph, const TensorMap& output_grads, TensorMap& grads);

/// Reverse pass from a scalar output; gradients are accumulated into
/// `params`. Parameter values are left untouched.
void backward(Graph& graph, const std::string& loss_output, ParamSet& params);

}  // namespace bsl
