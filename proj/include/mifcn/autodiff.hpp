#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mifcn/conv.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn::ad {

enum class Op { Leaf, Constant, Reshape, Conv2d, Lrelu, Add, Sub, Hadamard, Square, Exp, Scale, Div, Mean, Sum };

const char* op_name(Op op);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// One recorded operation: its inputs, forward value, and accumulated gradient.
struct ComputationNode {
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Op op = Op::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;
  Backward backward;
  bool requires_grad = false;
  bool reached = false;
};

/// Append-only record of a computation. Nodes are stored in creation order, which is
/// a topological order, so backward() is a single reverse sweep.
class Tape {
 public:
  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var record(Op op, std::span<const Var> inputs, Tensor value, ComputationNode::Backward backward);

  /// Reverse sweep from a scalar root. Afterwards every node holds a gradient of its own
  /// shape (zero where the root does not depend on it).
  void backward(Var root);

  const ComputationNode& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, const Tensor& contribution);

  std::size_t size() const { return nodes_.size(); }

  /// Smallest |x| over every leaky-ReLU input recorded so far; +inf if there are none.
  double min_kink_distance() const;

 private:
  Var push(ComputationNode node);

  std::vector<ComputationNode> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

Var reshape(Var x, Shape shape);
Var conv2d(Var input, Var kernels, Var bias, const ConvSpec& spec);
Var lrelu(Var x, double alpha);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var square(Var x);
Var exp(Var x);
Var scale(Var x, double factor);
Var div(Var a, Var b);
Var mean(Var x);
Var sum(std::span<const Var> terms);

}  // namespace mifcn::ad
