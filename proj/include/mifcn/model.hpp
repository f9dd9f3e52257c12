#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mifcn/autodiff.hpp"
#include "mifcn/conv.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn {

/// Architecture hyperparameters. A branch is `branch_layers` dilated 3x3 conv + LReLU layers
/// followed by a linear 1x1 conv; the head is `head_layers` 3x3 conv + LReLU layers followed
/// by a linear 1x1 conv.
struct ModelConfig {
  int branches = 5;
  int channels = 24;
  int branch_layers = 3;
  int head_layers = 1;
  std::vector<int> dilations{1, 2, 1};
  double h = 400.0;
  double alpha = 0.2;

  void validate() const;

  /// 1,2,1,2,... ; gives the reference 1,2,1 for three layers.
  static std::vector<int> default_dilations(int layers);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerT {
  T kernel;
  T bias;
  int dilation = 1;
};

template <typename T>
struct StackT {
  std::vector<LayerT<T>> hidden;
  LayerT<T> output;
};

/// Learnable parameters: one independent stack per branch plus the post-fusion head.
template <typename T>
struct ParamsT {
  std::vector<StackT<T>> branches;
  StackT<T> head;
};

using MifcnParams = ParamsT<Tensor>;

/// Branch outputs, fusion weights, fused image and final reconstruction, all [H,W].
template <typename T>
struct OutputT {
  std::vector<T> branch_outputs;
  std::vector<T> weights;
  T fused;
  T final;
};

template <typename Scalar>
using MifcnOutput = OutputT<BasicTensor<Scalar>>;

namespace detail {

template <typename T, typename F>
void visit_stack(const std::string& prefix, StackT<T>& stack, F&& f) {
  for (std::size_t l = 0; l < stack.hidden.size(); ++l) {
    const std::string name = prefix + ".conv" + std::to_string(l + 1);
    f(name + ".kernel", stack.hidden[l].kernel);
    f(name + ".bias", stack.hidden[l].bias);
  }
  f(prefix + ".out.kernel", stack.output.kernel);
  f(prefix + ".out.bias", stack.output.bias);
}

template <typename From, typename To, typename F>
StackT<To> map_stack(const StackT<From>& stack, F&& f) {
  StackT<To> out;
  for (const auto& layer : stack.hidden) out.hidden.push_back({f(layer.kernel), f(layer.bias), layer.dilation});
  out.output = {f(stack.output.kernel), f(stack.output.bias), stack.output.dilation};
  return out;
}

}  // namespace detail

/// Calls f(name, tensor) for every parameter in a fixed order: branches 1..T, then head.
template <typename T, typename F>
void for_each_param(ParamsT<T>& params, F&& f) {
  for (std::size_t t = 0; t < params.branches.size(); ++t)
    detail::visit_stack("branch" + std::to_string(t + 1), params.branches[t], f);
  detail::visit_stack("head", params.head, f);
}

template <typename T, typename F>
void for_each_param(const ParamsT<T>& params, F&& f) {
  for_each_param(const_cast<ParamsT<T>&>(params), [&](const std::string& name, T& value) {
    f(name, static_cast<const T&>(value));
  });
}

template <typename To, typename From, typename F>
ParamsT<To> map_params(const ParamsT<From>& params, F&& f) {
  ParamsT<To> out;
  for (const auto& branch : params.branches) out.branches.push_back(detail::map_stack<From, To>(branch, f));
  out.head = detail::map_stack<From, To>(params.head, f);
  return out;
}

template <typename Scalar>
ParamsT<BasicTensor<Scalar>> cast_params(const MifcnParams& params) {
  return map_params<BasicTensor<Scalar>>(params, [](const Tensor& t) { return t.template cast<Scalar>(); });
}

std::size_t parameter_count(const MifcnParams& params);

/// Identity-mapping initialisation. 3x3 layers with equal channel counts get a unit centre tap
/// on the diagonal; layers that change the channel count connect output i to input i mod Cin
/// (fan-out) or input j to output j mod Cout (fan-in) with centre taps summing to one per
/// output. Biases start at zero. Every tap then receives N(0, noise_std^2) noise.
MifcnParams identity_init(const ModelConfig& config, std::uint64_t seed, double noise_std = 1e-4);

/// Checks that `params` has the layer layout `config` describes.
void check_params(const MifcnParams& params, const ModelConfig& config);

// Plain-tensor forward path (inference, no graph).

template <typename Scalar>
BasicTensor<Scalar> stack_forward(const BasicTensor<Scalar>& image, const StackT<BasicTensor<Scalar>>& stack,
                                  Scalar alpha) {
  require(image.rank() == 2, "stack_forward: image must be [H,W], got " + shape_string(image.shape()));
  BasicTensor<Scalar> features = image.reshaped({1, image.dim(0), image.dim(1)});
  for (const auto& layer : stack.hidden) {
    features = conv2d_dilated(features, layer.kernel, layer.bias, ConvSpec{3, layer.dilation});
    features = lrelu(features, alpha);
  }
  features = conv2d_dilated(features, stack.output.kernel, stack.output.bias, ConvSpec{1, 1});
  return features.reshaped({image.dim(0), image.dim(1)});
}

template <typename Scalar>
BasicTensor<Scalar> branch_forward(const BasicTensor<Scalar>& image, const StackT<BasicTensor<Scalar>>& branch,
                                   Scalar alpha) {
  return stack_forward(image, branch, alpha);
}

template <typename Scalar>
BasicTensor<Scalar> head_forward(const BasicTensor<Scalar>& fused, const StackT<BasicTensor<Scalar>>& head,
                                 Scalar alpha) {
  return stack_forward(fused, head, alpha);
}

/// P_t = W_t / sum_s W_s with W_t = exp(-(X_1 - X_t)^2 / h), elementwise.
template <typename Scalar>
std::vector<BasicTensor<Scalar>> fusion_weights(std::span<const BasicTensor<Scalar>> outputs, Scalar h) {
  require(!outputs.empty(), "fusion_weights: no branch outputs");
  require(h > Scalar(0), "fusion_weights: h must be positive");
  const auto& main = outputs.front();
  std::vector<BasicTensor<Scalar>> weights;
  BasicTensor<Scalar> total = BasicTensor<Scalar>::zeros_like(main);
  for (const auto& x : outputs) {
    require_same_shape(main, x, "fusion_weights");
    weights.emplace_back(x.shape(), (-(main.array() - x.array()).square() / h).exp());
    total.array() += weights.back().array();
  }
  for (auto& w : weights) w = div(w, total);
  return weights;
}

/// Elementwise sum_t X_t o P_t.
template <typename Scalar>
BasicTensor<Scalar> weighted_average(std::span<const BasicTensor<Scalar>> outputs,
                                     std::span<const BasicTensor<Scalar>> weights) {
  require(!outputs.empty() && outputs.size() == weights.size(),
          "weighted_average: need one weight map per branch output");
  BasicTensor<Scalar> fused = BasicTensor<Scalar>::zeros_like(outputs.front());
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    require_same_shape(fused, outputs[t], "weighted_average");
    require_same_shape(fused, weights[t], "weighted_average");
    fused.array() += outputs[t].array() * weights[t].array();
  }
  return fused;
}

/// Everything after the branches: fusion weights, weighted average, head.
template <typename Scalar>
MifcnOutput<Scalar> fuse_and_reconstruct(std::vector<BasicTensor<Scalar>> branch_outputs,
                                         const StackT<BasicTensor<Scalar>>& head, Scalar h, Scalar alpha) {
  MifcnOutput<Scalar> out;
  out.branch_outputs = std::move(branch_outputs);
  out.weights = fusion_weights<Scalar>(out.branch_outputs, h);
  out.fused = weighted_average<Scalar>(out.branch_outputs, out.weights);
  out.final = head_forward(out.fused, head, alpha);
  return out;
}

template <typename Scalar>
MifcnOutput<Scalar> mifcn_forward(std::span<const BasicTensor<Scalar>> images,
                                  const ParamsT<BasicTensor<Scalar>>& params, const ModelConfig& config) {
  config.validate();
  require(images.size() == static_cast<std::size_t>(config.branches),
          "mifcn_forward: expected " + std::to_string(config.branches) + " input images, got " +
              std::to_string(images.size()));
  require(params.branches.size() == images.size(), "mifcn_forward: parameter set has " +
                                                       std::to_string(params.branches.size()) + " branches");
  std::vector<BasicTensor<Scalar>> outputs;
  for (std::size_t t = 0; t < images.size(); ++t) {
    require_same_shape(images.front(), images[t], "mifcn_forward");
    outputs.push_back(branch_forward(images[t], params.branches[t], static_cast<Scalar>(config.alpha)));
  }
  return fuse_and_reconstruct(std::move(outputs), params.head, static_cast<Scalar>(config.h),
                              static_cast<Scalar>(config.alpha));
}

inline MifcnOutput<double> mifcn_forward(std::span<const Tensor> images, const MifcnParams& params,
                                         const ModelConfig& config) {
  return mifcn_forward<double>(images, params, config);
}

// Differentiable path, recorded on an ad::Tape.

using ParamVars = ParamsT<ad::Var>;
using GraphOutput = OutputT<ad::Var>;

/// Registers every parameter tensor as a leaf of `tape`.
ParamVars bind_params(ad::Tape& tape, const MifcnParams& params);

ad::Var stack_forward(ad::Var image, const StackT<ad::Var>& stack, double alpha);
std::vector<ad::Var> fusion_weights(std::span<const ad::Var> outputs, double h);
ad::Var weighted_average(std::span<const ad::Var> outputs, std::span<const ad::Var> weights);
GraphOutput mifcn_forward(std::span<const ad::Var> images, const ParamVars& params, const ModelConfig& config);

}  // namespace mifcn
