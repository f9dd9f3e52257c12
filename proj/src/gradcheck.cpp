#include "mifcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

#include "mifcn/reference.hpp"
#include "mifcn/training.hpp"

namespace mifcn {

namespace {

Tensor uniform(std::mt19937_64& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor gaussian(std::mt19937_64& rng, Shape shape, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

GradcheckInstance make_gradcheck_instance(std::mt19937_64& rng, const ModelConfig& config, Index size,
                                          std::size_t batch, double kernel_std, double kink_margin) {
  config.validate();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    GradcheckInstance inst;
    inst.config = config;
    inst.params = identity_init(config, 0, 0.0);
    for_each_param(inst.params, [&](const std::string& name, Tensor& t) {
      if (name.ends_with(".kernel")) {
        const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
        t = gaussian(rng, t.shape(), kernel_std * std::sqrt(3.0 / fan_in));
      } else {
        t = gaussian(rng, t.shape(), 0.1);
      }
    });
    for (std::size_t i = 0; i < batch; ++i) {
      PatchTuple s;
      for (int t = 0; t < config.branches; ++t) {
        s.noisy.push_back(uniform(rng, {size, size}));
        s.clean.push_back(uniform(rng, {size, size}));
        s.locations.push_back({0, 0});
      }
      inst.samples.push_back(std::move(s));
    }
    if (loss_and_gradient(inst.params, config, inst.samples).min_kink_distance >= kink_margin) return inst;
  }
  throw NumericError("make_gradcheck_instance: could not draw an instance away from leaky-ReLU kinks");
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_shape(analytic, numeric, "relative_error");
  if (analytic.empty()) return 0.0;
  const double scale = std::max(analytic.array().abs().maxCoeff(), numeric.array().abs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (analytic.array() - numeric.array()).abs().maxCoeff() / scale;
}

CheckLine check_conv_oracle(std::mt19937_64& rng, int configs, double tolerance) {
  std::uniform_int_distribution<Index> extent(1, 16), channels(1, 4), dilation(1, 3), kind(0, 1);
  double worst = 0.0;
  for (int n = 0; n < configs; ++n) {
    const ConvSpec spec{kind(rng) == 0 ? 1 : 3, dilation(rng)};
    const Index cin = channels(rng), cout = channels(rng), h = extent(rng), w = extent(rng);
    const Tensor input = gaussian(rng, {cin, h, w}, 1.0);
    const Tensor kernels = gaussian(rng, {cout, cin, spec.kernel_size, spec.kernel_size}, 1.0);
    const Tensor bias = gaussian(rng, {cout}, 1.0);
    worst = std::max(worst, max_abs_diff(conv2d_dilated(input, kernels, bias, spec),
                                         reference::conv2d_dilated(input, kernels, bias, spec)));
  }
  return {"conv2d_dilated vs literal oracle (" + std::to_string(configs) + " configs, max abs)", worst, tolerance,
          worst <= tolerance};
}

std::vector<CheckLine> check_loss_gradient(std::mt19937_64& rng, int instances, double step, double tolerance,
                                           double perturbation) {
  ModelConfig config;
  config.branches = 3;
  config.channels = 4;
  config.branch_layers = 3;
  config.dilations = {1, 2, 1};
  config.head_layers = 1;
  config.h = 0.5;
  config.alpha = 0.2;

  std::vector<std::string> names;
  std::map<std::string, double> worst;
  for (int n = 0; n < instances; ++n) {
    GradcheckInstance inst = make_gradcheck_instance(rng, config, 8);
    const LossAndGradient lg = loss_and_gradient(inst.params, config, inst.samples);
    std::size_t index = 0;
    MifcnParams probe = inst.params;
    for_each_param(probe, [&](const std::string& name, Tensor& slot) {
      const Tensor saved = slot;
      const Tensor numeric = reference::finite_difference_grad(
          [&](const Tensor& x) {
            slot = x;
            return evaluate_loss(probe, config, inst.samples);
          },
          saved, step);
      slot = saved;
      const Tensor analytic = scale(lg.grads[index++], 1.0 + perturbation);
      if (!worst.contains(name)) names.push_back(name);
      worst[name] = std::max(worst[name], relative_error(analytic, numeric));
    });
  }
  std::vector<CheckLine> lines;
  for (const auto& name : names)
    lines.push_back({"d J / d " + name, worst[name], tolerance, worst[name] < tolerance});
  return lines;
}

CheckLine check_fusion_gradient(std::mt19937_64& rng, int instances, double step, double tolerance,
                                double perturbation) {
  constexpr int kBranches = 3;
  constexpr double kH = 0.5;
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    std::vector<Tensor> outputs, coeffs;
    for (int t = 0; t < kBranches; ++t) {
      outputs.push_back(uniform(rng, {8, 8}));
      coeffs.push_back(uniform(rng, {8, 8}, -1.0, 1.0));
    }
    const auto plain = [&](const std::vector<Tensor>& xs) {
      const auto weights = fusion_weights<double>(xs, kH);
      double total = 0.0;
      for (int t = 0; t < kBranches; ++t) total += (weights[t].array() * coeffs[t].array()).mean();
      return total;
    };

    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& x : outputs) leaves.push_back(tape.leaf(x));
    const auto weights = fusion_weights(leaves, kH);
    std::vector<ad::Var> terms;
    for (int t = 0; t < kBranches; ++t) terms.push_back(ad::mean(ad::hadamard(weights[t], tape.constant(coeffs[t]))));
    tape.backward(ad::sum(terms));

    for (int t = 0; t < kBranches; ++t) {
      std::vector<Tensor> probe = outputs;
      const Tensor numeric = reference::finite_difference_grad(
          [&](const Tensor& x) {
            probe[t] = x;
            return plain(probe);
          },
          outputs[t], step);
      worst = std::max(worst, relative_error(scale(leaves[t].grad(), 1.0 + perturbation), numeric));
    }
  }
  return {"d <P,C> / d X_t through fusion weights", worst, tolerance, worst < tolerance};
}

bool GradcheckReport::passed() const {
  return !lines.empty() && std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.pass; });
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  GradcheckReport report;
  report.lines.push_back(check_conv_oracle(rng, options.conv_configs, options.conv_tolerance));
  report.lines.push_back(
      check_fusion_gradient(rng, options.instances, options.step, options.grad_tolerance, options.perturbation));
  for (CheckLine& line :
       check_loss_gradient(rng, options.instances, options.step, options.grad_tolerance, options.perturbation))
    report.lines.push_back(std::move(line));
  return report;
}

void write_gradcheck_report(std::ostream& os, const GradcheckReport& report) {
  for (const CheckLine& line : report.lines)
    os << (line.pass ? "PASS  " : "FAIL  ") << std::left << std::setw(60) << line.name << std::right
       << std::scientific << std::setprecision(3) << line.value << "  (tol " << line.tolerance << ")\n"
       << std::defaultfloat;
  os << (report.passed() ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
}

}  // namespace mifcn
