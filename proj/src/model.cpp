#include "mifcn/model.hpp"

#include <random>

namespace mifcn {

void ModelConfig::validate() const {
  require(branches >= 1, "model config: T must be >= 1");
  require(channels >= 1, "model config: C must be >= 1");
  require(branch_layers >= 1, "model config: A must be >= 1");
  require(head_layers >= 0, "model config: B must be >= 0");
  require(dilations.size() == static_cast<std::size_t>(branch_layers),
          "model config: need one dilation per branch layer (A=" + std::to_string(branch_layers) + ", got " +
              std::to_string(dilations.size()) + ")");
  for (int d : dilations) require(d >= 1, "model config: dilations must be >= 1");
  require(h > 0.0, "model config: h must be positive");
  require(alpha >= 0.0 && alpha < 1.0, "model config: alpha must lie in [0,1)");
}

std::vector<int> ModelConfig::default_dilations(int layers) {
  std::vector<int> out;
  for (int l = 0; l < layers; ++l) out.push_back(l % 2 == 0 ? 1 : 2);
  return out;
}

std::size_t parameter_count(const MifcnParams& params) {
  std::size_t count = 0;
  for_each_param(params, [&](const std::string&, const Tensor& t) { count += static_cast<std::size_t>(t.size()); });
  return count;
}

namespace {

LayerT<Tensor> identity_layer(Index cout, Index cin, Index k, int dilation) {
  LayerT<Tensor> layer{Tensor({cout, cin, k, k}), Tensor({cout}), dilation};
  const Index c = k / 2;
  for (Index o = 0; o < cout; ++o) {
    if (cout >= cin) {
      layer.kernel(o, o % cin, c, c) = 1.0;
    } else {
      Index fan_in = 0;
      for (Index i = 0; i < cin; ++i) fan_in += (i % cout == o);
      for (Index i = 0; i < cin; ++i)
        if (i % cout == o) layer.kernel(o, i, c, c) = 1.0 / static_cast<double>(fan_in);
    }
  }
  return layer;
}

StackT<Tensor> identity_stack(Index channels, int layers, const std::vector<int>& dilations) {
  StackT<Tensor> stack;
  Index cin = 1;
  for (int l = 0; l < layers; ++l) {
    stack.hidden.push_back(identity_layer(channels, cin, 3, dilations[static_cast<std::size_t>(l)]));
    cin = channels;
  }
  stack.output = identity_layer(1, cin, 1, 1);
  return stack;
}

void check_layer(const LayerT<Tensor>& layer, Index cout, Index cin, Index k, const std::string& where) {
  require(layer.kernel.shape() == Shape({cout, cin, k, k}),
          where + ": kernel shape " + shape_string(layer.kernel.shape()) + ", expected " +
              shape_string({cout, cin, k, k}));
  require(layer.bias.shape() == Shape({cout}), where + ": bias shape " + shape_string(layer.bias.shape()));
  require(layer.dilation >= 1, where + ": dilation must be >= 1");
}

void check_stack(const StackT<Tensor>& stack, Index channels, int layers, const std::string& where) {
  require(stack.hidden.size() == static_cast<std::size_t>(layers),
          where + ": expected " + std::to_string(layers) + " hidden layers, got " +
              std::to_string(stack.hidden.size()));
  Index cin = 1;
  for (std::size_t l = 0; l < stack.hidden.size(); ++l) {
    check_layer(stack.hidden[l], channels, cin, 3, where + ".conv" + std::to_string(l + 1));
    cin = channels;
  }
  check_layer(stack.output, 1, cin, 1, where + ".out");
}

}  // namespace

MifcnParams identity_init(const ModelConfig& config, std::uint64_t seed, double noise_std) {
  config.validate();
  require(noise_std >= 0.0, "identity_init: noise_std must be >= 0");
  MifcnParams params;
  for (int t = 0; t < config.branches; ++t)
    params.branches.push_back(identity_stack(config.channels, config.branch_layers, config.dilations));
  params.head = identity_stack(config.channels, config.head_layers, std::vector<int>(config.head_layers, 1));

  if (noise_std > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std);
    for_each_param(params, [&](const std::string& name, Tensor& t) {
      if (name.ends_with(".kernel"))
        for (double& v : t.values()) v += noise(rng);
    });
  }
  return params;
}

void check_params(const MifcnParams& params, const ModelConfig& config) {
  config.validate();
  require(params.branches.size() == static_cast<std::size_t>(config.branches),
          "parameters hold " + std::to_string(params.branches.size()) + " branches, config expects T=" +
              std::to_string(config.branches));
  for (std::size_t t = 0; t < params.branches.size(); ++t) {
    check_stack(params.branches[t], config.channels, config.branch_layers, "branch" + std::to_string(t + 1));
    for (std::size_t l = 0; l < params.branches[t].hidden.size(); ++l)
      require(params.branches[t].hidden[l].dilation == config.dilations[l], "branch dilation mismatch");
  }
  check_stack(params.head, config.channels, config.head_layers, "head");
}

ParamVars bind_params(ad::Tape& tape, const MifcnParams& params) {
  return map_params<ad::Var>(params, [&](const Tensor& t) { return tape.leaf(t); });
}

ad::Var stack_forward(ad::Var image, const StackT<ad::Var>& stack, double alpha) {
  const Shape shape = image.shape();
  require(shape.size() == 2, "stack_forward: image must be [H,W], got " + shape_string(shape));
  ad::Var features = ad::reshape(image, {1, shape[0], shape[1]});
  for (const auto& layer : stack.hidden)
    features = ad::lrelu(ad::conv2d(features, layer.kernel, layer.bias, ConvSpec{3, layer.dilation}), alpha);
  features = ad::conv2d(features, stack.output.kernel, stack.output.bias, ConvSpec{1, 1});
  return ad::reshape(features, shape);
}

std::vector<ad::Var> fusion_weights(std::span<const ad::Var> outputs, double h) {
  require(!outputs.empty(), "fusion_weights: no branch outputs");
  require(h > 0.0, "fusion_weights: h must be positive");
  std::vector<ad::Var> raw;
  for (const ad::Var& x : outputs) {
    const ad::Var distance = ad::square(ad::sub(outputs.front(), x));
    raw.push_back(ad::exp(ad::scale(distance, -1.0 / h)));
  }
  const ad::Var total = ad::sum(raw);
  std::vector<ad::Var> weights;
  for (const ad::Var& w : raw) weights.push_back(ad::div(w, total));
  return weights;
}

ad::Var weighted_average(std::span<const ad::Var> outputs, std::span<const ad::Var> weights) {
  require(!outputs.empty() && outputs.size() == weights.size(),
          "weighted_average: need one weight map per branch output");
  std::vector<ad::Var> terms;
  for (std::size_t t = 0; t < outputs.size(); ++t) terms.push_back(ad::hadamard(outputs[t], weights[t]));
  return ad::sum(terms);
}

GraphOutput mifcn_forward(std::span<const ad::Var> images, const ParamVars& params, const ModelConfig& config) {
  config.validate();
  require(images.size() == static_cast<std::size_t>(config.branches),
          "mifcn_forward: expected " + std::to_string(config.branches) + " input images, got " +
              std::to_string(images.size()));
  require(params.branches.size() == images.size(), "mifcn_forward: parameter/branch count mismatch");
  GraphOutput out;
  for (std::size_t t = 0; t < images.size(); ++t) {
    require(images[t].shape() == images.front().shape(), "mifcn_forward: input images differ in shape");
    out.branch_outputs.push_back(stack_forward(images[t], params.branches[t], config.alpha));
  }
  out.weights = fusion_weights(out.branch_outputs, config.h);
  out.fused = weighted_average(out.branch_outputs, out.weights);
  out.final = stack_forward(out.fused, params.head, config.alpha);
  return out;
}

}  // namespace mifcn
