#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mifcn/dataset.hpp"
#include "mifcn/model.hpp"

namespace mifcn {

struct Hyperparams {
  int epochs = 60;
  double lr1 = 1e-4;
  double lr2 = 1e-5;
  int lr_switch_epoch = 30;  // last epoch trained at lr1
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t init_seed = 1;
  bool augment = true;

  void validate() const;
  double learning_rate(int epoch) const { return epoch <= lr_switch_epoch ? lr1 : lr2; }
};

/// Adam moments, one pair per parameter tensor in for_each_param order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update applied in place. Moments are created on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
void adam_step(MifcnParams& params, std::span<const Tensor> grads, AdamState& state, double lr,
               const Hyperparams& hyper);

/// Per-sample objective: sum_t mean((X_t - target_t)^2) + mean((X_1 - X_R)^2). The batch loss is
/// its average over samples.
double sample_loss(const MifcnOutput<double>& output, std::span<const Tensor> targets);
double batch_loss(std::span<const MifcnOutput<double>> outputs, std::span<const std::vector<Tensor>> targets);

ad::Var sample_loss(const GraphOutput& output, std::span<const ad::Var> targets);
ad::Var batch_loss(std::span<const GraphOutput> outputs, std::span<const std::vector<ad::Var>> targets);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;  // for_each_param order
  double min_kink_distance = 0.0;
};

/// Batch objective over `samples` and its gradient with respect to every parameter.
LossAndGradient loss_and_gradient(const MifcnParams& params, const ModelConfig& config,
                                  std::span<const PatchTuple> samples);

/// Batch objective only (no graph).
double evaluate_loss(const MifcnParams& params, const ModelConfig& config, std::span<const PatchTuple> samples);

/// Original, horizontal flip, and +90 degree (counter-clockwise) rotation; every window in the
/// tuple is transformed identically.
std::array<PatchTuple, 3> augment(const PatchTuple& sample);
Tensor flip_horizontal(const Tensor& patch);
Tensor rotate90(const Tensor& patch);

std::vector<PatchTuple> augment_all(std::span<const PatchTuple> samples);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // written at the end when non-empty
  std::filesystem::path log;         // per-epoch lines appended when non-empty
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  MifcnParams params;
  TrainRecord record;
};

/// Mini-batch Adam on the (optionally augmented) samples, reshuffled every epoch from
/// `hyper.shuffle_seed`. Starts from `initial`. Throws NumericError on a non-finite loss.
TrainResult train(std::span<const PatchTuple> samples, const ModelConfig& config, const Hyperparams& hyper,
                  MifcnParams initial, const TrainOptions& options = {});

/// Same, starting from identity_init(config, hyper.init_seed).
TrainResult train(std::span<const PatchTuple> samples, const ModelConfig& config, const Hyperparams& hyper,
                  const TrainOptions& options = {});

/// Applies one `key=value` setting (keys as in the CLI flags: T, C, A, B, dilations, h, alpha,
/// epochs, batch, lr1, lr2, lr_switch, beta1, beta2, epsilon, seed, init_seed, augment).
void apply_setting(ModelConfig& config, Hyperparams& hyper, const std::string& key, const std::string& value);

/// Reads a flat key=value file ('#' comments) through apply_setting.
void load_train_config(const std::filesystem::path& path, ModelConfig& config, Hyperparams& hyper);

}  // namespace mifcn
