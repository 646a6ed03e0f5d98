#include "bsl/graph.hpp"

#include <algorithm>
#include <cmath>

#include "bsl/errors.hpp"

namespace bsl {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDense: return "dense";
    case OpKind::kMaxPool2: return "max_pool2";
    case OpKind::kUpsample2: return "upsample2";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kConcat: return "concat";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kMul: return "mul";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kReduceMean: return "reduce_mean";
    case OpKind::kLayerNorm: return "layer_norm";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) throw ContractError("node input refers to a node that does not exist yet");
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(std::string name) { return push({OpKind::kInput, {}, std::move(name)}); }
NodeId Graph::param(std::string name) { return push({OpKind::kParam, {}, std::move(name)}); }
NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b) { return push({OpKind::kConv2d, {x, w, b}, {}}); }
NodeId Graph::dense(NodeId x, NodeId w, NodeId b) { return push({OpKind::kDense, {x, w, b}, {}}); }
NodeId Graph::max_pool2(NodeId x) { return push({OpKind::kMaxPool2, {x}, {}}); }
NodeId Graph::upsample2(NodeId x) { return push({OpKind::kUpsample2, {x}, {}}); }
NodeId Graph::relu(NodeId x) { return push({OpKind::kRelu, {x}, {}}); }
NodeId Graph::sigmoid(NodeId x) { return push({OpKind::kSigmoid, {x}, {}}); }
NodeId Graph::concat(std::vector<NodeId> parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  return push({OpKind::kConcat, std::move(parts), {}});
}
NodeId Graph::global_avg_pool(NodeId x) { return push({OpKind::kGlobalAvgPool, {x}, {}}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push({OpKind::kMul, {a, b}, {}}); }
NodeId Graph::add(NodeId a, NodeId b) { return push({OpKind::kAdd, {a, b}, {}}); }
NodeId Graph::scale(NodeId x, Real factor) { return push({OpKind::kScale, {x}, {}, factor}); }
NodeId Graph::reduce_sum(NodeId x) { return push({OpKind::kReduceSum, {x}, {}}); }
NodeId Graph::reduce_mean(NodeId x) { return push({OpKind::kReduceMean, {x}, {}}); }
NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  return push({OpKind::kLayerNorm, {x, gain, bias}, {}});
}

void Graph::set_output(std::string name, NodeId id) {
  if (id >= nodes_.size()) throw ContractError("output refers to unknown node");
  for (auto& [n, i] : outputs_) {
    if (n == name) {
      i = id;
      return;
    }
  }
  outputs_.emplace_back(std::move(name), id);
}

NodeId Graph::output_id(std::string_view name) const {
  for (const auto& [n, i] : outputs_) {
    if (n == name) return i;
  }
  throw ContractError("graph has no output named '" + std::string(name) + "'");
}

const Tensor& Graph::value(NodeId id) const {
  if (!evaluated_) throw StateError("graph has not been evaluated");
  return values_.at(id);
}

void Graph::clear() {
  values_.clear();
  pool_index_.clear();
  evaluated_ = false;
}

namespace {

std::string where(NodeId id, const Node& node) {
  return "node " + std::to_string(id) + " (" + op_name(node.kind) + ")";
}

void require(bool ok, NodeId id, const Node& node, const std::string& what) {
  if (!ok) throw ShapeError(where(id, node) + ": " + what);
}

// out[co] += w[co][ci][ky][kx] * in[ci] shifted, zero padded.
void conv_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * wd;
  Real* o = out.ptr();
  for (std::size_t co = 0; co < cout; ++co) {
    Real* oc = o + co * plane;
    std::fill(oc, oc + plane, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* ic = in.ptr() + ci * plane;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::size_t y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
        const std::size_t y1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(h, h - dy));
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(wd, wd - dx));
          const Real wv = w[((co * cin + ci) * k + ky) * k + kx];
          for (std::size_t y = y0; y < y1; ++y) {
            Real* orow = oc + y * wd;
            const Real* irow = ic + (y + dy) * wd + dx;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

void conv_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin, Tensor* gw,
                   Tensor* gb) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = h * wd;
  for (std::size_t co = 0; co < cout; ++co) {
    const Real* gc = gout.ptr() + co * plane;
    if (gb) {
      Real s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += gc[i];
      (*gb)[co] += s;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* ic = in.ptr() + ci * plane;
      Real* gic = gin ? gin->ptr() + ci * plane : nullptr;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::size_t y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
        const std::size_t y1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(h, h - dy));
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(wd, wd - dx));
          const std::size_t widx = ((co * cin + ci) * k + ky) * k + kx;
          const Real wv = w[widx];
          Real acc = 0;
          for (std::size_t y = y0; y < y1; ++y) {
            const Real* grow = gc + y * wd;
            const Real* irow = ic + (y + dy) * wd + dx;
            for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * irow[x];
            if (gic) {
              Real* girow = gic + (y + dy) * wd + dx;
              for (std::size_t x = x0; x < x1; ++x) girow[x] += wv * grow[x];
            }
          }
          if (gw) (*gw)[widx] += acc;
        }
      }
    }
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  Real* d = dst.ptr();
  const Real* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Mean and 1/sqrt(var + eps) over every element of x.
std::pair<Real, Real> moments(const Tensor& x) {
  Real mean = 0;
  for (Real v : x.data()) mean += v;
  mean /= static_cast<Real>(x.size());
  Real var = 0;
  for (Real v : x.data()) var += (v - mean) * (v - mean);
  var /= static_cast<Real>(x.size());
  return {mean, 1 / std::sqrt(var + kLayerNormEps)};
}

}  // namespace

TensorMap forward(Graph& graph, const TensorMap& inputs, const ParamSet& params) {
  const std::size_t n = graph.nodes_.size();
  graph.values_.assign(n, Tensor());
  graph.pool_index_.assign(n, {});
  graph.evaluated_ = false;

  for (NodeId id = 0; id < n; ++id) {
    const Node& node = graph.nodes_[id];
    auto in = [&](std::size_t i) -> const Tensor& { return graph.values_[node.inputs[i]]; };
    Tensor& out = graph.values_[id];

    switch (node.kind) {
      case OpKind::kInput: {
        auto it = inputs.find(node.name);
        if (it == inputs.end()) throw ContractError(where(id, node) + ": input '" + node.name + "' not bound");
        out = it->second;
        break;
      }
      case OpKind::kParam:
        if (!params.contains(node.name)) {
          throw ContractError(where(id, node) + ": parameter '" + node.name + "' missing from ParamSet");
        }
        out = params.value(node.name);
        break;
      case OpKind::kConv2d: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        const Tensor& b = in(2);
        require(x.rank() == 3, id, node, "input must be (C,H,W), got " + shape_to_string(x.shape()));
        require(w.rank() == 4 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, id, node,
                "weight must be (Cout,Cin,K,K) with odd K, got " + shape_to_string(w.shape()));
        require(w.dim(1) == x.dim(0), id, node,
                "weight " + shape_to_string(w.shape()) + " does not match input " + shape_to_string(x.shape()));
        require(b.rank() == 1 && b.dim(0) == w.dim(0), id, node, "bias must be (Cout)");
        out = Tensor({w.dim(0), x.dim(1), x.dim(2)});
        conv_forward(x, w, b, out);
        break;
      }
      case OpKind::kDense: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        const Tensor& b = in(2);
        require(w.rank() == 2 && w.dim(1) == x.size(), id, node,
                "weight " + shape_to_string(w.shape()) + " does not match input " + shape_to_string(x.shape()));
        require(b.rank() == 1 && b.dim(0) == w.dim(0), id, node, "bias must be (Out)");
        const std::size_t no = w.dim(0), ni = w.dim(1);
        out = Tensor({no});
        for (std::size_t o = 0; o < no; ++o) {
          Real s = b[o];
          const Real* wr = w.ptr() + o * ni;
          for (std::size_t i = 0; i < ni; ++i) s += wr[i] * x[i];
          out[o] = s;
        }
        break;
      }
      case OpKind::kMaxPool2: {
        const Tensor& x = in(0);
        require(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, id, node,
                "input must be (C,H,W) with even H,W, got " + shape_to_string(x.shape()));
        const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / 2, wo = w / 2;
        out = Tensor({c, ho, wo});
        auto& idx = graph.pool_index_[id];
        idx.resize(out.size());
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xo = 0; xo < wo; ++xo) {
              std::size_t best = (ch * h + 2 * y) * w + 2 * xo;
              const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
              for (std::size_t j : cand) {
                if (x[j] > x[best]) best = j;
              }
              const std::size_t o = (ch * ho + y) * wo + xo;
              out[o] = x[best];
              idx[o] = best;
            }
          }
        }
        break;
      }
      case OpKind::kUpsample2: {
        const Tensor& x = in(0);
        require(x.rank() == 3, id, node, "input must be (C,H,W)");
        const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        out = Tensor({c, 2 * h, 2 * w});
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < 2 * h; ++y) {
            const Real* src = x.ptr() + (ch * h + y / 2) * w;
            Real* dst = out.ptr() + (ch * 2 * h + y) * 2 * w;
            for (std::size_t xo = 0; xo < 2 * w; ++xo) dst[xo] = src[xo / 2];
          }
        }
        break;
      }
      case OpKind::kRelu: {
        out = in(0);
        for (Real& v : out.data()) v = v > 0 ? v : Real{0};
        break;
      }
      case OpKind::kSigmoid: {
        out = in(0);
        for (Real& v : out.data()) v = Real{1} / (Real{1} + std::exp(-v));
        break;
      }
      case OpKind::kConcat: {
        const Tensor& first = in(0);
        require(first.rank() >= 1, id, node, "cannot concat scalars");
        std::size_t channels = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Tensor& t = in(i);
          require(t.rank() == first.rank() &&
                      std::equal(t.shape().begin() + 1, t.shape().end(), first.shape().begin() + 1),
                  id, node, "trailing dims differ: " + shape_to_string(t.shape()) + " vs " +
                                shape_to_string(first.shape()));
          channels += t.dim(0);
        }
        Shape s = first.shape();
        s[0] = channels;
        out = Tensor(s);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Tensor& t = in(i);
          std::copy(t.ptr(), t.ptr() + t.size(), out.ptr() + offset);
          offset += t.size();
        }
        break;
      }
      case OpKind::kGlobalAvgPool: {
        const Tensor& x = in(0);
        require(x.rank() == 3, id, node, "input must be (C,H,W)");
        const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
        out = Tensor({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          Real s = 0;
          for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
          out[ch] = s / static_cast<Real>(plane);
        }
        break;
      }
      case OpKind::kMul:
      case OpKind::kAdd: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        require(a.shape() == b.shape(), id, node,
                "operand shapes differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
        out = a;
        for (std::size_t i = 0; i < out.size(); ++i) {
          out[i] = node.kind == OpKind::kMul ? a[i] * b[i] : a[i] + b[i];
        }
        break;
      }
      case OpKind::kScale: {
        out = in(0);
        for (Real& v : out.data()) v *= node.scale;
        break;
      }
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        const Tensor& x = in(0);
        Real s = 0;
        for (Real v : x.data()) s += v;
        if (node.kind == OpKind::kReduceMean) s /= static_cast<Real>(x.size());
        out = Tensor::scalar(s);
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = in(0);
        const Tensor& gain = in(1);
        const Tensor& bias = in(2);
        require(x.rank() == 3, id, node, "input must be (C,H,W), got " + shape_to_string(x.shape()));
        require(gain.rank() == 1 && gain.dim(0) == x.dim(0) && bias.shape() == gain.shape(), id, node,
                "gain and bias must be (C) for input " + shape_to_string(x.shape()));
        const auto [mean, inv] = moments(x);
        const std::size_t plane = x.dim(1) * x.dim(2);
        out = Tensor(x.shape());
        for (std::size_t c = 0; c < x.dim(0); ++c) {
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) out[i] = gain[c] * (x[i] - mean) * inv + bias[c];
        }
        break;
      }
    }
    if (!out.all_finite()) throw NumericError(where(id, node) + ": non-finite value in output");
  }

  graph.evaluated_ = true;
  TensorMap result;
  for (const auto& [name, id] : graph.outputs_) result.emplace(name, graph.values_[id]);
  return result;
}

void backward(Graph& graph, const TensorMap& output_grads, TensorMap& grads) {
  if (!graph.evaluated_) throw StateError("backward called before forward");
  const std::size_t n = graph.nodes_.size();
  std::vector<Tensor> g(n);
  std::vector<bool> live(n, false);

  for (const auto& [name, seed] : output_grads) {
    const NodeId id = graph.output_id(name);
    if (seed.size() != graph.values_[id].size()) {
      throw ShapeError("gradient seed for output '" + name + "' has shape " + shape_to_string(seed.shape()) +
                       ", output has " + shape_to_string(graph.values_[id].shape()));
    }
    if (!live[id]) {
      g[id] = Tensor(graph.values_[id].shape());
      live[id] = true;
    }
    for (std::size_t i = 0; i < seed.size(); ++i) g[id][i] += seed[i];
  }

  auto grad_of = [&](NodeId id) -> Tensor& {
    if (!live[id]) {
      g[id] = Tensor(graph.values_[id].shape());
      live[id] = true;
    }
    return g[id];
  };
  // Input nodes never need gradients; skip allocating them.
  auto wants = [&](NodeId id) { return graph.nodes_[id].kind != OpKind::kInput; };

  for (NodeId id = n; id-- > 0;) {
    if (!live[id]) continue;
    const Node& node = graph.nodes_[id];
    const Tensor& gout = g[id];
    auto val = [&](std::size_t i) -> const Tensor& { return graph.values_[node.inputs[i]]; };

    switch (node.kind) {
      case OpKind::kInput:
        break;
      case OpKind::kParam: {
        auto it = grads.find(node.name);
        if (it == grads.end()) it = grads.emplace(node.name, Tensor(gout.shape())).first;
        add_into(it->second, gout);
        break;
      }
      case OpKind::kConv2d: {
        Tensor* gin = wants(node.inputs[0]) ? &grad_of(node.inputs[0]) : nullptr;
        Tensor* gw = wants(node.inputs[1]) ? &grad_of(node.inputs[1]) : nullptr;
        Tensor* gb = wants(node.inputs[2]) ? &grad_of(node.inputs[2]) : nullptr;
        conv_backward(val(0), val(1), gout, gin, gw, gb);
        break;
      }
      case OpKind::kDense: {
        const Tensor& x = val(0);
        const Tensor& w = val(1);
        const std::size_t no = w.dim(0), ni = w.dim(1);
        Tensor* gx = wants(node.inputs[0]) ? &grad_of(node.inputs[0]) : nullptr;
        Tensor* gw = wants(node.inputs[1]) ? &grad_of(node.inputs[1]) : nullptr;
        Tensor* gb = wants(node.inputs[2]) ? &grad_of(node.inputs[2]) : nullptr;
        for (std::size_t o = 0; o < no; ++o) {
          const Real go = gout[o];
          if (gb) (*gb)[o] += go;
          for (std::size_t i = 0; i < ni; ++i) {
            if (gw) (*gw)[o * ni + i] += go * x[i];
            if (gx) (*gx)[i] += go * w[o * ni + i];
          }
        }
        break;
      }
      case OpKind::kMaxPool2: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        const auto& idx = graph.pool_index_[id];
        for (std::size_t o = 0; o < gout.size(); ++o) gx[idx[o]] += gout[o];
        break;
      }
      case OpKind::kUpsample2: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        const std::size_t c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < 2 * h; ++y) {
            Real* dst = gx.ptr() + (ch * h + y / 2) * w;
            const Real* src = gout.ptr() + (ch * 2 * h + y) * 2 * w;
            for (std::size_t xo = 0; xo < 2 * w; ++xo) dst[xo / 2] += src[xo];
          }
        }
        break;
      }
      case OpKind::kRelu: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        const Tensor& x = val(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (x[i] > 0) gx[i] += gout[i];
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        const Tensor& y = graph.values_[id];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (1 - y[i]);
        break;
      }
      case OpKind::kConcat: {
        std::size_t offset = 0;
        for (NodeId part : node.inputs) {
          const std::size_t sz = graph.values_[part].size();
          if (wants(part)) {
            Tensor& gp = grad_of(part);
            for (std::size_t i = 0; i < sz; ++i) gp[i] += gout[offset + i];
          }
          offset += sz;
        }
        break;
      }
      case OpKind::kGlobalAvgPool: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        const std::size_t c = gx.dim(0), plane = gx.dim(1) * gx.dim(2);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Real v = gout[ch] / static_cast<Real>(plane);
          for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += v;
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        if (wants(node.inputs[0])) {
          Tensor& ga = grad_of(node.inputs[0]);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * b[i];
        }
        if (wants(node.inputs[1])) {
          Tensor& gb = grad_of(node.inputs[1]);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * a[i];
        }
        break;
      }
      case OpKind::kAdd: {
        for (NodeId part : node.inputs) {
          if (wants(part)) add_into(grad_of(part), gout);
        }
        break;
      }
      case OpKind::kScale: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * node.scale;
        break;
      }
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        Real v = gout[0];
        if (node.kind == OpKind::kReduceMean) v /= static_cast<Real>(gx.size());
        for (Real& e : gx.data()) e += v;
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = val(0);
        const Tensor& gain = val(1);
        const auto [mean, inv] = moments(x);
        const std::size_t plane = x.dim(1) * x.dim(2);
        const Real n = static_cast<Real>(x.size());
        Tensor* gg = wants(node.inputs[1]) ? &grad_of(node.inputs[1]) : nullptr;
        Tensor* gb = wants(node.inputs[2]) ? &grad_of(node.inputs[2]) : nullptr;
        Real sum_d = 0, sum_dx = 0;  // over d(xhat) and d(xhat)*xhat
        for (std::size_t c = 0; c < x.dim(0); ++c) {
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            const Real xhat = (x[i] - mean) * inv;
            if (gg) (*gg)[c] += gout[i] * xhat;
            if (gb) (*gb)[c] += gout[i];
            sum_d += gout[i] * gain[c];
            sum_dx += gout[i] * gain[c] * xhat;
          }
        }
        if (!wants(node.inputs[0])) break;
        Tensor& gx = grad_of(node.inputs[0]);
        for (std::size_t c = 0; c < x.dim(0); ++c) {
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            const Real xhat = (x[i] - mean) * inv;
            gx[i] += inv * (gout[i] * gain[c] - sum_d / n - xhat * sum_dx / n);
          }
        }
        break;
      }
    }
  }
}

void backward(Graph& graph, const std::string& loss_output, ParamSet& params) {
  if (!graph.has_forward()) throw StateError("backward called before forward");
  const Tensor& loss = graph.value(graph.output_id(loss_output));
  if (loss.size() != 1) {
    throw ContractError("loss output '" + loss_output + "' is not scalar: " + shape_to_string(loss.shape()));
  }
  TensorMap seeds;
  seeds.emplace(loss_output, Tensor(loss.shape(), Real{1}));
  TensorMap grads;
  backward(graph, seeds, grads);
  params.accumulate_grads(grads);
}

}  // namespace bsl
