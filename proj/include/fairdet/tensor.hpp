#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fairdet/errors.hpp"

namespace fairdet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::VectorXd data);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor scalar(double v) { return Tensor({}, Eigen::VectorXd::Constant(1, v)); }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  double& at(std::initializer_list<Index> idx);
  double at(std::initializer_list<Index> idx) const;

  /// Value of a one-element tensor.
  double item() const;

  bool all_finite() const { return data_.allFinite(); }

  /// Row-major view as a matrix of `rows` x (size/rows).
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  as_matrix(Index rows) const;
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  as_matrix(Index rows);

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  Eigen::VectorXd data_;
};

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class OpKind : std::uint8_t {
  Leaf,
  Conv2d,
  ChannelBias,
  Dense,
  Relu,
  Exp,
  Log,
  Square,
  Sum,
  Mean,
  GlobalAvgPool,
  CrossEntropy,
  ChannelMask,
  SoftmaxColumn,
  Gather,
  TransportCost,
  Add,
  Scale,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Computation record: the ordered list of primitive applications that
/// produced every node. Nodes are appended in evaluation order, so the
/// record is topologically sorted by construction.
class Graph {
 public:
  using ForwardFn = std::function<Tensor(const Graph&)>;
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  /// Appends a primitive. `forward` is evaluated immediately and kept for replay.
  Var record(OpKind op, std::vector<int> inputs, ForwardFn forward, BackwardFn backward);

  /// Reverse sweep from a scalar root. Gradients of every node are reset
  /// first; nodes not on a path to `root` end with zero gradient.
  void backward(Var root);

  /// Re-evaluates every non-leaf node from its inputs in record order and
  /// returns the recomputed values (leaves copied as-is).
  std::vector<Tensor> replay() const;

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(int id) const { return node(id).value; }
  Tensor& grad(int id) { return node(id).grad; }

 private:
  std::vector<Node> nodes_;
};

// Primitive operations. Each records itself on the graph of its inputs.

/// Valid (unpadded) 2-D convolution, input [B,Cin,H,W], kernel [Cout,Cin,kH,kW].
Var conv2d(Var input, Var kernel, Index stride = 1);
/// Adds bias[c] to every spatial cell of channel c of a [B,C,H,W] tensor.
Var channel_bias(Var input, Var bias);
/// input [B,n], weight [m,n], bias [m] -> [B,m].
Var dense(Var input, Var weight, Var bias);

enum class Elementwise { Relu, Exp, Log, Square };
Var elementwise(Var input, Elementwise kind);
inline Var relu(Var x) { return elementwise(x, Elementwise::Relu); }
inline Var exp(Var x) { return elementwise(x, Elementwise::Exp); }
inline Var log(Var x) { return elementwise(x, Elementwise::Log); }
inline Var square(Var x) { return elementwise(x, Elementwise::Square); }

enum class Reduction { Sum, Mean, GlobalAvgPool };
/// Sum/Mean over the listed axes (empty list = all axes, scalar result).
/// GlobalAvgPool ignores `axes` and averages the two trailing axes of a
/// rank-4 tensor, giving [B,C].
Var reduce(Var input, Reduction kind, std::vector<std::size_t> axes = {});
inline Var sum(Var x) { return reduce(x, Reduction::Sum); }
inline Var mean(Var x) { return reduce(x, Reduction::Mean); }
inline Var global_avg_pool(Var x) { return reduce(x, Reduction::GlobalAvgPool); }

/// Mean over the batch of -log softmax(logits)[label]; logits [B,K].
Var cross_entropy(Var logits, std::span<const int> labels);

/// Multiplies channel c of [B,C,...] by keep[c] (0 or 1).
Var channel_mask(Var input, std::span<const double> keep);

/// softmax(logits)[:, column] for logits [B,K] -> [B].
Var softmax_column(Var logits, Index column);

/// Selects entries of a rank-1 tensor.
Var gather(Var input, std::span<const int> indices);

/// sum_ij plan(i,j) * (x_i - y_j)^2 with the plan held constant.
Var transport_cost(Var x, Var y, const Eigen::MatrixXd& plan);

Var add(Var a, Var b);
Var scale(Var a, double factor);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(double f, Var a) { return scale(a, f); }

}  // namespace fairdet
