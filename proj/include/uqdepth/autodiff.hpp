#pragma once

// Tape-based reverse-mode differentiation over dense arrays.
//
// A Graph owns its nodes in creation order, which is always a valid
// topological order. Op constructors evaluate eagerly; Graph::forward()
// re-evaluates every non-leaf node after leaf values change. Values are
// immutable once forward has run, so an evaluated graph may be read from
// several threads.
//
// Binary element-wise ops accept equal shapes or a single-element operand
// (scalar broadcast). Everything else requires an explicit reshape.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "uqdepth/array.hpp"

namespace uqd::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Square,
  Sqrt,
  PowConst,
  Sum,
  Mean,
  Relu,
  Sigmoid,
  Softplus,
  Matmul,
  Conv2d,
  MaxElem,
  UpsampleNearest,
  Concat,
  Slice,
  FlipH,
  FlipV,
  Reshape,
};

std::string_view op_name(Op op);

using NodeId = int;

struct Attrs {
  double exponent = 1.0;    // PowConst
  std::size_t stride = 1;   // Conv2d
  std::size_t factor = 1;   // UpsampleNearest
  std::size_t axis = 0;     // Concat, Slice
  std::size_t begin = 0;    // Slice
  std::size_t end = 0;      // Slice
  Shape shape;              // Reshape
};

struct Node {
  NodeId id = 0;
  Op op = Op::Leaf;
  std::vector<NodeId> inputs;
  Array value;
  bool requires_grad = false;
  Attrs attrs;
};

using GradientMap = std::map<NodeId, Array>;

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  NodeId id = -1;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Array value, bool requires_grad = false);
  Var constant(double v) { return leaf(Array::scalar(v)); }

  // Replace a leaf's value; shape must be unchanged. Call forward() after.
  void set_leaf(Var v, Array value);

  // Re-evaluates every non-leaf node in order.
  void forward();

  // d(root)/d(node) for every node with requires_grad. Root must hold a
  // single element.
  GradientMap backward(Var root) const;

  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  std::span<const Node> nodes() const { return nodes_; }

  Var add_node(Op op, std::vector<NodeId> inputs, Attrs attrs = {});

 private:
  void evaluate(Node& n);
  std::vector<Node> nodes_;
};

// Element-wise arithmetic (scalar broadcast only).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var max_elem(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var pow_const(Var a, double exponent);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);

// Reductions to a single-element array of shape {1}.
Var sum(Var a);
Var mean(Var a);

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);

// Input C×H×W or N×C×H×W, weight Cout×Cin×k×k (k odd), optional bias
// [Cout]. Zero padding (k-1)/2; stride 1 or 2.
Var conv2d(Var input, Var weight, Var bias, std::size_t stride = 1);
Var conv2d(Var input, Var weight, std::size_t stride = 1);

// Nearest-neighbour upsampling of the last two axes by an integer factor.
Var upsample_nearest(Var a, std::size_t factor);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
// Reverse the last axis (flip_h) or the second-to-last axis (flip_v).
Var flip_h(Var a);
Var flip_v(Var a);
Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

// Max over the elements of `leaf` of
//   |analytic - central| / max(|analytic|, |central|, kGradCheckFloor).
// The floor keeps roundoff in the central difference from dominating where
// the true gradient is (near) zero.
inline constexpr double kGradCheckFloor = 1e-6;
// Leaf values are restored before returning.
double grad_check(Graph& graph, Var root, Var leaf, double step);

// Plain-array flips shared with the inference code.
Array flip_h(const Array& a);
Array flip_v(const Array& a);

}  // namespace uqd::ad
