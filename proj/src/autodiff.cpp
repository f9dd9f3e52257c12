#include "mifcn/autodiff.hpp"

#include <limits>
#include <string>

namespace mifcn::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Reshape: return "reshape";
    case Op::Conv2d: return "conv2d";
    case Op::Lrelu: return "lrelu";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Hadamard: return "hadamard";
    case Op::Square: return "square";
    case Op::Exp: return "exp";
    case Op::Scale: return "scale";
    case Op::Div: return "div";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
  }
  return "?";
}

Var Tape::push(ComputationNode node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  ComputationNode node;
  node.op = Op::Leaf;
  node.value = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

Var Tape::constant(Tensor value) {
  ComputationNode node;
  node.op = Op::Constant;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::record(Op op, std::span<const Var> inputs, Tensor value, ComputationNode::Backward backward) {
  ComputationNode node;
  node.op = op;
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (const Var& in : inputs) {
    require(&in.tape() == this, std::string(op_name(op)) + ": operand recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  return push(std::move(node));
}

void Tape::accumulate(std::size_t id, const Tensor& contribution) {
  ComputationNode& node = nodes_[id];
  if (!node.requires_grad) return;
  require(contribution.size() == node.value.size(), std::string(op_name(node.op)) +
                                                        ": gradient contribution " +
                                                        shape_string(contribution.shape()) + " vs value " +
                                                        shape_string(node.value.shape()));
  node.grad.array() += contribution.array();
  node.reached = true;
}

void Tape::backward(Var root) {
  require(&root.tape() == this, "backward: root belongs to a different tape");
  require(root.value().size() == 1,
          "backward: root must be scalar-valued, got shape " + shape_string(root.value().shape()));
  for (ComputationNode& node : nodes_) {
    node.grad = Tensor::zeros_like(node.value);
    node.reached = false;
  }
  nodes_[root.id()].grad.array().setOnes();
  nodes_[root.id()].reached = true;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const ComputationNode& node = nodes_[id];
    if (node.reached && node.requires_grad && node.backward) node.backward(*this, id);
  }
}

double Tape::min_kink_distance() const {
  double closest = std::numeric_limits<double>::infinity();
  for (const ComputationNode& node : nodes_) {
    if (node.op != Op::Lrelu) continue;
    const Tensor& x = nodes_[node.inputs[0]].value;
    if (!x.empty()) closest = std::min(closest, x.array().abs().minCoeff());
  }
  return closest;
}

namespace {

Var unary(Op op, Var x, Tensor value, ComputationNode::Backward backward) {
  const Var inputs[] = {x};
  return x.tape().record(op, inputs, std::move(value), std::move(backward));
}

Var binary(Op op, Var a, Var b, Tensor value, ComputationNode::Backward backward) {
  const Var inputs[] = {a, b};
  return a.tape().record(op, inputs, std::move(value), std::move(backward));
}

}  // namespace

Var reshape(Var x, Shape shape) {
  const std::size_t in = x.id();
  const Shape original = x.shape();
  return unary(Op::Reshape, x, x.value().reshaped(std::move(shape)), [in, original](Tape& t, std::size_t self) {
    t.accumulate(in, t.grad(self).reshaped(original));
  });
}

Var conv2d(Var input, Var kernels, Var bias, const ConvSpec& spec) {
  const Var inputs[] = {input, kernels, bias};
  const std::size_t x = input.id(), k = kernels.id(), b = bias.id();
  return input.tape().record(
      Op::Conv2d, inputs, conv2d_dilated(input.value(), kernels.value(), bias.value(), spec),
      [x, k, b, spec](Tape& t, std::size_t self) {
        ConvGradients<double> g = conv2d_dilated_backward(t.value(x), t.value(k), t.grad(self), spec);
        t.accumulate(x, g.input);
        t.accumulate(k, g.kernels);
        t.accumulate(b, g.bias);
      });
}

Var lrelu(Var x, double alpha) {
  const std::size_t in = x.id();
  return unary(Op::Lrelu, x, mifcn::lrelu(x.value(), alpha), [in, alpha](Tape& t, std::size_t self) {
    const auto& v = t.value(in).array();
    // Slope alpha at exactly zero.
    Tensor g(t.value(in).shape(), (v > 0.0).select(t.grad(self).array(), alpha * t.grad(self).array()));
    t.accumulate(in, g);
  });
}

Var add(Var a, Var b) {
  const std::size_t ia = a.id(), ib = b.id();
  return binary(Op::Add, a, b, mifcn::add(a.value(), b.value()), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  const std::size_t ia = a.id(), ib = b.id();
  return binary(Op::Sub, a, b, mifcn::sub(a.value(), b.value()), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, mifcn::scale(t.grad(self), -1.0));
  });
}

Var hadamard(Var a, Var b) {
  const std::size_t ia = a.id(), ib = b.id();
  return binary(Op::Hadamard, a, b, mifcn::hadamard(a.value(), b.value()), [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, mifcn::hadamard(t.grad(self), t.value(ib)));
    t.accumulate(ib, mifcn::hadamard(t.grad(self), t.value(ia)));
  });
}

Var square(Var x) {
  const std::size_t in = x.id();
  return unary(Op::Square, x, mifcn::square(x.value()), [in](Tape& t, std::size_t self) {
    t.accumulate(in, Tensor(t.value(in).shape(), 2.0 * t.value(in).array() * t.grad(self).array()));
  });
}

Var exp(Var x) {
  const std::size_t in = x.id();
  return unary(Op::Exp, x, mifcn::exp(x.value()), [in](Tape& t, std::size_t self) {
    t.accumulate(in, mifcn::hadamard(t.grad(self), t.value(self)));
  });
}

Var scale(Var x, double factor) {
  const std::size_t in = x.id();
  return unary(Op::Scale, x, mifcn::scale(x.value(), factor), [in, factor](Tape& t, std::size_t self) {
    t.accumulate(in, mifcn::scale(t.grad(self), factor));
  });
}

Var div(Var a, Var b) {
  const std::size_t ia = a.id(), ib = b.id();
  return binary(Op::Div, a, b, mifcn::div(a.value(), b.value()), [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self).array();
    const auto& den = t.value(ib).array();
    t.accumulate(ia, Tensor(t.value(ia).shape(), g / den));
    t.accumulate(ib, Tensor(t.value(ib).shape(), -g * t.value(self).array() / den));
  });
}

Var mean(Var x) {
  const std::size_t in = x.id();
  return unary(Op::Mean, x, Tensor(Shape{}, reduce_mean(x.value())), [in](Tape& t, std::size_t self) {
    const Tensor& v = t.value(in);
    t.accumulate(in, Tensor(v.shape(), t.grad(self)[0] / static_cast<double>(v.size())));
  });
}

Var sum(std::span<const Var> terms) {
  require(!terms.empty(), "sum: no terms");
  Tensor total = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) total = mifcn::add(total, terms[i].value());
  std::vector<std::size_t> ids;
  for (const Var& v : terms) ids.push_back(v.id());
  return terms[0].tape().record(Op::Sum, terms, std::move(total), [ids](Tape& t, std::size_t self) {
    for (std::size_t id : ids) t.accumulate(id, t.grad(self));
  });
}

}  // namespace mifcn::ad
