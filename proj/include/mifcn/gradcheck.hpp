#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "mifcn/dataset.hpp"
#include "mifcn/model.hpp"

namespace mifcn {

/// Random small model + batch used by the oracle checks.
struct GradcheckInstance {
  ModelConfig config;
  MifcnParams params;
  std::vector<PatchTuple> samples;
};

/// Gaussian kernels (std `kernel_std`), small biases, inputs/targets uniform in [0,1).
/// Resamples until every leaky-ReLU input stays at least `kink_margin` away from zero.
GradcheckInstance make_gradcheck_instance(std::mt19937_64& rng, const ModelConfig& config, Index size,
                                          std::size_t batch = 1, double kernel_std = 0.4, double kink_margin = 1e-4);

struct GradcheckOptions {
  std::uint64_t seed = 20240613;
  int conv_configs = 200;
  int instances = 25;
  double conv_tolerance = 1e-12;
  double grad_tolerance = 1e-5;
  double step = 1e-6;
  /// Multiplies every analytic gradient by (1 + perturbation); nonzero only in fixtures that
  /// check the checker.
  double perturbation = 0.0;
};

struct CheckLine {
  std::string name;
  double value = 0.0;  // max error observed
  double tolerance = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<CheckLine> lines;
  bool passed() const;
};

/// Normwise relative error max|a - n| / max(max|a|, max|n|), zero when both vanish.
double relative_error(const Tensor& analytic, const Tensor& numeric);

/// Tiled conv against the literal-loop oracle over random shapes, kernels, and dilations.
CheckLine check_conv_oracle(std::mt19937_64& rng, int configs, double tolerance);

/// Loss gradient vs central differences, one line per parameter group (branch t layer l,
/// head), maximised over `instances` random models.
std::vector<CheckLine> check_loss_gradient(std::mt19937_64& rng, int instances, double step, double tolerance,
                                           double perturbation = 0.0);

/// Gradient of a loss that depends on the branch outputs only through the fusion weights,
/// sum_t <P_t, C_t>, with respect to the branch outputs.
CheckLine check_fusion_gradient(std::mt19937_64& rng, int instances, double step, double tolerance,
                                double perturbation = 0.0);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

void write_gradcheck_report(std::ostream& os, const GradcheckReport& report);

}  // namespace mifcn
