#include "fairdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>

namespace fairdet {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative axis length in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(Eigen::VectorXd::Constant(shape_size(shape_), fill)) {}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape),
             Eigen::Map<const Eigen::VectorXd>(values.begin(), static_cast<Index>(values.size()))) {}

Index Tensor::offset(std::initializer_list<Index> idx) const {
  if (idx.size() != shape_.size()) throw DimensionError("index rank mismatch for " + shape_string(shape_));
  Index off = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= shape_[axis]) throw DimensionError("index out of range for " + shape_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Eigen::Map<const RowMatrix> Tensor::as_matrix(Index rows) const {
  return {data_.data(), rows, rows ? data_.size() / rows : 0};
}

Eigen::Map<RowMatrix> Tensor::as_matrix(Index rows) {
  return {data_.data(), rows, rows ? data_.size() / rows : 0};
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ChannelBias: return "channel_bias";
    case OpKind::Dense: return "dense";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::ChannelMask: return "channel_mask";
    case OpKind::SoftmaxColumn: return "softmax_column";
    case OpKind::Gather: return "gather";
    case OpKind::TransportCost: return "transport_cost";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->node(id).grad; }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(OpKind op, std::vector<int> inputs, ForwardFn forward, BackwardFn backward) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs) {
    if (in < 0 || in >= id) throw UsageError(std::string("invalid input id for ") + op_name(op));
  }
  Node n;
  n.op = op;
  n.value = forward(*this);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](int in) { return nodes_[static_cast<std::size_t>(in)].requires_grad; });
  n.inputs = std::move(inputs);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, id};
}

void Graph::backward(Var root) {
  if (root.graph != this) throw UsageError("backward root belongs to another graph");
  if (value(root.id).size() != 1) {
    throw UsageError("backward requires a scalar root, got shape " + shape_string(value(root.id).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  node(root.id).grad[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = node(id);
    if (n.op == OpKind::Leaf || !n.requires_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

std::vector<Tensor> Graph::replay() const {
  Graph copy = *this;
  for (auto& n : copy.nodes_) {
    if (n.op != OpKind::Leaf) n.value = n.forward(copy);
  }
  std::vector<Tensor> out;
  out.reserve(copy.nodes_.size());
  for (auto& n : copy.nodes_) out.push_back(std::move(n.value));
  return out;
}

namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw UsageError("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph || !a.graph) throw UsageError("variables belong to different graphs");
  return *a.graph;
}

bool wants_grad(const Graph& g, int id) { return g.node(id).requires_grad; }

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite input");
}

struct ConvGeometry {
  Index batch, cin, h, w, cout, kh, kw, stride, oh, ow;
  Index patch() const { return cin * kh * kw; }
  Index cells() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, Index stride) {
  if (x.rank() != 4 || k.rank() != 4) {
    throw DimensionError("conv2d expects rank-4 input and kernel, got " + shape_string(x.shape()) + " and " +
                         shape_string(k.shape()));
  }
  if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), stride, 0, 0};
  if (k.dim(1) != g.cin) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(x.shape()) + ", kernel " +
                         shape_string(k.shape()));
  }
  if (g.kh > g.h || g.kw > g.w) throw DimensionError("conv2d kernel larger than input");
  g.oh = (g.h - g.kh) / stride + 1;
  g.ow = (g.w - g.kw) / stride + 1;
  return g;
}

// Unfolds sample b of x into a (Cin*kH*kW) x (oH*oW) column matrix.
RowMatrix im2col(const Tensor& x, const ConvGeometry& g, Index b) {
  RowMatrix cols(g.patch(), g.cells());
  const double* base = x.data().data() + b * g.cin * g.h * g.w;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Index row = (c * g.kh + ky) * g.kw + kx;
        for (Index oy = 0; oy < g.oh; ++oy)
          for (Index ox = 0; ox < g.ow; ++ox)
            cols(row, oy * g.ow + ox) = base[(c * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx];
      }
  return cols;
}

void col2im_add(const RowMatrix& cols, const ConvGeometry& g, Index b, Tensor& dx) {
  double* base = dx.data().data() + b * g.cin * g.h * g.w;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const Index row = (c * g.kh + ky) * g.kw + kx;
        for (Index oy = 0; oy < g.oh; ++oy)
          for (Index ox = 0; ox < g.ow; ++ox)
            base[(c * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx] += cols(row, oy * g.ow + ox);
      }
}

}  // namespace

Var conv2d(Var input, Var kernel, Index stride) {
  Graph& graph = graph_of(input, kernel);
  const int xi = input.id, ki = kernel.id;
  conv_geometry(graph.value(xi), graph.value(ki), stride);  // validate eagerly
  require_finite(graph.value(xi), "conv2d");

  auto fwd = [xi, ki, stride](const Graph& g) {
    const Tensor& x = g.value(xi);
    const Tensor& k = g.value(ki);
    const ConvGeometry geo = conv_geometry(x, k, stride);
    Tensor out({geo.batch, geo.cout, geo.oh, geo.ow});
    const auto kmat = k.as_matrix(geo.cout);
    for (Index b = 0; b < geo.batch; ++b) {
      Eigen::Map<RowMatrix> ob(out.data().data() + b * geo.cout * geo.cells(), geo.cout, geo.cells());
      ob.noalias() = kmat * im2col(x, geo, b);
    }
    return out;
  };
  auto bwd = [xi, ki, stride](Graph& g, int self) {
    const Tensor& x = g.value(xi);
    const Tensor& k = g.value(ki);
    const ConvGeometry geo = conv_geometry(x, k, stride);
    const Tensor& dout = g.node(self).grad;
    const auto kmat = k.as_matrix(geo.cout);
    const bool dx_needed = wants_grad(g, xi), dk_needed = wants_grad(g, ki);
    RowMatrix dk = RowMatrix::Zero(geo.cout, geo.patch());
    for (Index b = 0; b < geo.batch; ++b) {
      Eigen::Map<const RowMatrix> db(dout.data().data() + b * geo.cout * geo.cells(), geo.cout, geo.cells());
      if (dk_needed) dk.noalias() += db * im2col(x, geo, b).transpose();
      if (dx_needed) {
        RowMatrix dcols = kmat.transpose() * db;
        col2im_add(dcols, geo, b, g.grad(xi));
      }
    }
    if (dk_needed) g.grad(ki).as_matrix(geo.cout) += dk;
  };
  return graph.record(OpKind::Conv2d, {xi, ki}, fwd, bwd);
}

Var channel_bias(Var input, Var bias) {
  Graph& graph = graph_of(input, bias);
  const int xi = input.id, bi = bias.id;
  const Tensor& x = graph.value(xi);
  if (x.rank() < 2 || graph.value(bi).rank() != 1 || graph.value(bi).dim(0) != x.dim(1)) {
    throw DimensionError("channel_bias: bias " + shape_string(graph.value(bi).shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  auto fwd = [xi, bi](const Graph& g) {
    Tensor out = g.value(xi);
    const Tensor& b = g.value(bi);
    const Index batch = out.dim(0), ch = out.dim(1), inner = out.size() / (batch * ch);
    for (Index n = 0; n < batch; ++n)
      for (Index c = 0; c < ch; ++c) out.data().segment((n * ch + c) * inner, inner).array() += b[c];
    return out;
  };
  auto bwd = [xi, bi](Graph& g, int self) {
    const Tensor& d = g.node(self).grad;
    const Index batch = d.dim(0), ch = d.dim(1), inner = d.size() / (batch * ch);
    if (wants_grad(g, xi)) g.grad(xi).data() += d.data();
    if (wants_grad(g, bi)) {
      Tensor& db = g.grad(bi);
      for (Index n = 0; n < batch; ++n)
        for (Index c = 0; c < ch; ++c)
          for (Index i = 0; i < inner; ++i) db[c] += d[(n * ch + c) * inner + i];
    }
  };
  return graph.record(OpKind::ChannelBias, {xi, bi}, fwd, bwd);
}

Var dense(Var input, Var weight, Var bias) {
  Graph& graph = graph_of(input, weight);
  graph_of(input, bias);
  const int xi = input.id, wi = weight.id, bi = bias.id;
  const Tensor &x = graph.value(xi), &w = graph.value(wi), &b = graph.value(bi);
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(1) || b.dim(0) != w.dim(0)) {
    throw DimensionError("dense: input " + shape_string(x.shape()) + ", weight " + shape_string(w.shape()) +
                         ", bias " + shape_string(b.shape()));
  }
  auto fwd = [xi, wi, bi](const Graph& g) {
    const Tensor &x = g.value(xi), &w = g.value(wi), &b = g.value(bi);
    Tensor out({x.dim(0), w.dim(0)});
    auto o = out.as_matrix(x.dim(0));
    o.noalias() = x.as_matrix(x.dim(0)) * w.as_matrix(w.dim(0)).transpose();
    o.rowwise() += b.data().transpose();
    return out;
  };
  auto bwd = [xi, wi, bi](Graph& g, int self) {
    const Tensor &x = g.value(xi), &w = g.value(wi);
    const Tensor& d = g.node(self).grad;
    const auto dm = d.as_matrix(x.dim(0));
    if (wants_grad(g, xi)) g.grad(xi).as_matrix(x.dim(0)).noalias() += dm * w.as_matrix(w.dim(0));
    if (wants_grad(g, wi)) g.grad(wi).as_matrix(w.dim(0)).noalias() += dm.transpose() * x.as_matrix(x.dim(0));
    if (wants_grad(g, bi)) g.grad(bi).data() += dm.colwise().sum().transpose();
  };
  return graph.record(OpKind::Dense, {xi, wi, bi}, fwd, bwd);
}

Var elementwise(Var input, Elementwise kind) {
  Graph& graph = graph_of(input);
  const int xi = input.id;
  if (kind == Elementwise::Log && (graph.value(xi).data().array() <= 0.0).any()) {
    throw DomainError("log of non-positive entry");
  }
  auto fwd = [xi, kind](const Graph& g) {
    Tensor out = g.value(xi);
    auto a = out.data().array();
    switch (kind) {
      case Elementwise::Relu: a = a.max(0.0); break;
      case Elementwise::Exp: a = a.exp(); break;
      case Elementwise::Log: a = a.log(); break;
      case Elementwise::Square: a = a.square(); break;
    }
    return out;
  };
  auto bwd = [xi, kind](Graph& g, int self) {
    if (!wants_grad(g, xi)) return;
    const auto x = g.value(xi).data().array();
    const auto y = g.value(self).data().array();
    const auto d = g.node(self).grad.data().array();
    auto dx = g.grad(xi).data().array();
    switch (kind) {
      case Elementwise::Relu: dx += (x > 0.0).select(d, 0.0); break;
      case Elementwise::Exp: dx += d * y; break;
      case Elementwise::Log: dx += d / x; break;
      case Elementwise::Square: dx += 2.0 * d * x; break;
    }
  };
  const OpKind op = kind == Elementwise::Relu  ? OpKind::Relu
                    : kind == Elementwise::Exp ? OpKind::Exp
                    : kind == Elementwise::Log ? OpKind::Log
                                               : OpKind::Square;
  return graph.record(op, {xi}, fwd, bwd);
}

namespace {

// Maps every flat input index to its flat output index for an axis reduction.
struct ReductionPlan {
  Shape out_shape;
  std::vector<Index> target;  // per input element
  Index count = 0;            // elements folded into each output
};

ReductionPlan plan_reduction(const Shape& in, std::vector<std::size_t> axes) {
  if (axes.empty()) {
    axes.resize(in.size());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
  }
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t a : axes) {
    if (a >= in.size()) throw DimensionError("reduce axis " + std::to_string(a) + " invalid for " + shape_string(in));
    reduced[a] = true;
  }
  ReductionPlan p;
  p.count = 1;
  for (std::size_t a = 0; a < in.size(); ++a) {
    if (reduced[a]) p.count *= in[a];
    else p.out_shape.push_back(in[a]);
  }
  const Index n = shape_size(in);
  p.target.resize(static_cast<std::size_t>(n));
  std::vector<Index> idx(in.size(), 0);
  for (Index flat = 0; flat < n; ++flat) {
    Index out = 0;
    for (std::size_t a = 0; a < in.size(); ++a)
      if (!reduced[a]) out = out * in[a] + idx[a];
    p.target[static_cast<std::size_t>(flat)] = out;
    for (std::size_t a = in.size(); a-- > 0;) {
      if (++idx[a] < in[a]) break;
      idx[a] = 0;
    }
  }
  return p;
}

}  // namespace

Var reduce(Var input, Reduction kind, std::vector<std::size_t> axes) {
  Graph& graph = graph_of(input);
  const int xi = input.id;
  const Shape& in = graph.value(xi).shape();
  if (kind == Reduction::GlobalAvgPool) {
    if (in.size() != 4) throw DimensionError("global_avg_pool expects [B,C,H,W], got " + shape_string(in));
    axes = {2, 3};
  }
  auto plan = std::make_shared<ReductionPlan>(plan_reduction(in, std::move(axes)));
  if (plan->count == 0 || graph.value(xi).size() == 0) throw DomainError("empty reduction");
  const bool average = kind != Reduction::Sum;

  auto fwd = [xi, plan, average](const Graph& g) {
    const Tensor& x = g.value(xi);
    Tensor out(plan->out_shape, 0.0);
    // Left-to-right accumulation in flat input order.
    for (Index i = 0; i < x.size(); ++i) out[plan->target[static_cast<std::size_t>(i)]] += x[i];
    if (average) out.data() /= static_cast<double>(plan->count);
    return out;
  };
  auto bwd = [xi, plan, average](Graph& g, int self) {
    if (!wants_grad(g, xi)) return;
    const Tensor& d = g.node(self).grad;
    Tensor& dx = g.grad(xi);
    const double f = average ? 1.0 / static_cast<double>(plan->count) : 1.0;
    for (Index i = 0; i < dx.size(); ++i) dx[i] += f * d[plan->target[static_cast<std::size_t>(i)]];
  };
  const OpKind op = kind == Reduction::Sum ? OpKind::Sum : kind == Reduction::Mean ? OpKind::Mean : OpKind::GlobalAvgPool;
  return graph.record(op, {xi}, fwd, bwd);
}

namespace {

RowMatrix softmax_rows(const Tensor& logits) {
  RowMatrix p = logits.as_matrix(logits.dim(0));
  for (Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace

Var cross_entropy(Var logits, std::span<const int> labels) {
  Graph& graph = graph_of(logits);
  const int xi = logits.id;
  const Tensor& x = graph.value(xi);
  if (x.rank() != 2) throw DimensionError("cross_entropy expects [B,K] logits, got " + shape_string(x.shape()));
  if (x.dim(0) == 0) throw DomainError("cross_entropy of empty batch");
  if (static_cast<Index>(labels.size()) != x.dim(0)) throw DimensionError("cross_entropy label count mismatch");
  std::vector<int> y(labels.begin(), labels.end());
  for (int l : y)
    if (l < 0 || l >= x.dim(1)) throw DomainError("cross_entropy label out of range");

  auto fwd = [xi, y](const Graph& g) {
    const auto z = g.value(xi).as_matrix(g.value(xi).dim(0));
    double total = 0.0;
    for (Index r = 0; r < z.rows(); ++r) {
      const double m = z.row(r).maxCoeff();
      const double lse = m + std::log((z.row(r).array() - m).exp().sum());
      total += lse - z(r, y[static_cast<std::size_t>(r)]);
    }
    return Tensor::scalar(total / static_cast<double>(z.rows()));
  };
  auto bwd = [xi, y](Graph& g, int self) {
    if (!wants_grad(g, xi)) return;
    const Tensor& z = g.value(xi);
    RowMatrix p = softmax_rows(z);
    for (Index r = 0; r < p.rows(); ++r) p(r, y[static_cast<std::size_t>(r)]) -= 1.0;
    const double f = g.node(self).grad[0] / static_cast<double>(p.rows());
    g.grad(xi).as_matrix(z.dim(0)) += f * p;
  };
  return graph.record(OpKind::CrossEntropy, {xi}, fwd, bwd);
}

Var channel_mask(Var input, std::span<const double> keep) {
  Graph& graph = graph_of(input);
  const int xi = input.id;
  const Tensor& x = graph.value(xi);
  if (x.rank() < 2 || static_cast<Index>(keep.size()) != x.dim(1)) {
    throw DimensionError("channel_mask: " + std::to_string(keep.size()) + " mask bits for input " +
                         shape_string(x.shape()));
  }
  std::vector<double> k(keep.begin(), keep.end());
  auto apply = [k](const Tensor& t, Tensor& out, bool accumulate) {
    const Index batch = t.dim(0), ch = t.dim(1), inner = t.size() / std::max<Index>(1, batch * ch);
    for (Index n = 0; n < batch; ++n)
      for (Index c = 0; c < ch; ++c) {
        auto src = t.data().segment((n * ch + c) * inner, inner);
        auto dst = out.data().segment((n * ch + c) * inner, inner);
        const double f = k[static_cast<std::size_t>(c)];
        if (accumulate) dst += f * src;
        else dst = f * src;
      }
  };
  auto fwd = [xi, apply](const Graph& g) {
    Tensor out(g.value(xi).shape());
    apply(g.value(xi), out, false);
    return out;
  };
  auto bwd = [xi, apply](Graph& g, int self) {
    if (wants_grad(g, xi)) apply(g.node(self).grad, g.grad(xi), true);
  };
  return graph.record(OpKind::ChannelMask, {xi}, fwd, bwd);
}

Var softmax_column(Var logits, Index column) {
  Graph& graph = graph_of(logits);
  const int xi = logits.id;
  const Tensor& x = graph.value(xi);
  if (x.rank() != 2 || column < 0 || column >= x.dim(1)) {
    throw DimensionError("softmax_column: column " + std::to_string(column) + " for " + shape_string(x.shape()));
  }
  auto fwd = [xi, column](const Graph& g) {
    const RowMatrix p = softmax_rows(g.value(xi));
    return Tensor({p.rows()}, Eigen::VectorXd(p.col(column)));
  };
  auto bwd = [xi, column](Graph& g, int self) {
    if (!wants_grad(g, xi)) return;
    const Tensor& z = g.value(xi);
    const RowMatrix p = softmax_rows(z);
    const Tensor& d = g.node(self).grad;
    auto dz = g.grad(xi).as_matrix(z.dim(0));
    for (Index r = 0; r < p.rows(); ++r) {
      const double pc = p(r, column);
      for (Index c = 0; c < p.cols(); ++c) dz(r, c) += d[r] * pc * ((c == column ? 1.0 : 0.0) - p(r, c));
    }
  };
  return graph.record(OpKind::SoftmaxColumn, {xi}, fwd, bwd);
}

Var gather(Var input, std::span<const int> indices) {
  Graph& graph = graph_of(input);
  const int xi = input.id;
  const Tensor& x = graph.value(xi);
  if (x.rank() != 1) throw DimensionError("gather expects a rank-1 tensor, got " + shape_string(x.shape()));
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx)
    if (i < 0 || i >= x.dim(0)) throw DimensionError("gather index out of range");
  auto fwd = [xi, idx](const Graph& g) {
    const Tensor& x = g.value(xi);
    Tensor out({static_cast<Index>(idx.size())});
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = x[idx[i]];
    return out;
  };
  auto bwd = [xi, idx](Graph& g, int self) {
    if (!wants_grad(g, xi)) return;
    const Tensor& d = g.node(self).grad;
    Tensor& dx = g.grad(xi);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += d[static_cast<Index>(i)];
  };
  return graph.record(OpKind::Gather, {xi}, fwd, bwd);
}

Var transport_cost(Var x, Var y, const Eigen::MatrixXd& plan) {
  Graph& graph = graph_of(x, y);
  const int xi = x.id, yi = y.id;
  if (graph.value(xi).rank() != 1 || graph.value(yi).rank() != 1 || plan.rows() != graph.value(xi).dim(0) ||
      plan.cols() != graph.value(yi).dim(0)) {
    throw DimensionError("transport_cost: plan " + std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()) +
                         " vs supports " + shape_string(graph.value(xi).shape()) + ", " +
                         shape_string(graph.value(yi).shape()));
  }
  auto p = std::make_shared<const Eigen::MatrixXd>(plan);
  auto fwd = [xi, yi, p](const Graph& g) {
    const Eigen::VectorXd& a = g.value(xi).data();
    const Eigen::VectorXd& b = g.value(yi).data();
    double total = 0.0;
    for (Index i = 0; i < a.size(); ++i)
      for (Index j = 0; j < b.size(); ++j) {
        const double diff = a[i] - b[j];
        total += (*p)(i, j) * diff * diff;
      }
    return Tensor::scalar(total);
  };
  auto bwd = [xi, yi, p](Graph& g, int self) {
    const double d = g.node(self).grad[0];
    const Eigen::VectorXd a = g.value(xi).data();
    const Eigen::VectorXd b = g.value(yi).data();
    const bool dx_needed = wants_grad(g, xi), dy_needed = wants_grad(g, yi);
    for (Index i = 0; i < a.size(); ++i)
      for (Index j = 0; j < b.size(); ++j) {
        const double t = 2.0 * d * (*p)(i, j) * (a[i] - b[j]);
        if (dx_needed) g.grad(xi)[i] += t;
        if (dy_needed) g.grad(yi)[j] -= t;
      }
  };
  return graph.record(OpKind::TransportCost, {xi, yi}, fwd, bwd);
}

Var add(Var a, Var b) {
  Graph& graph = graph_of(a, b);
  const int ai = a.id, bi = b.id;
  if (graph.value(ai).shape() != graph.value(bi).shape()) {
    throw DimensionError("add: " + shape_string(graph.value(ai).shape()) + " vs " +
                         shape_string(graph.value(bi).shape()));
  }
  auto fwd = [ai, bi](const Graph& g) {
    return Tensor(g.value(ai).shape(), Eigen::VectorXd(g.value(ai).data() + g.value(bi).data()));
  };
  auto bwd = [ai, bi](Graph& g, int self) {
    const Eigen::VectorXd d = g.node(self).grad.data();
    if (wants_grad(g, ai)) g.grad(ai).data() += d;
    if (wants_grad(g, bi)) g.grad(bi).data() += d;
  };
  return graph.record(OpKind::Add, {ai, bi}, fwd, bwd);
}

Var scale(Var a, double factor) {
  Graph& graph = graph_of(a);
  const int ai = a.id;
  auto fwd = [ai, factor](const Graph& g) {
    return Tensor(g.value(ai).shape(), Eigen::VectorXd(factor * g.value(ai).data()));
  };
  auto bwd = [ai, factor](Graph& g, int self) {
    if (wants_grad(g, ai)) g.grad(ai).data() += factor * g.node(self).grad.data();
  };
  return graph.record(OpKind::Scale, {ai}, fwd, bwd);
}

}  // namespace fairdet
