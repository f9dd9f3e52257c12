#include "mifcn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "mifcn/checkpoint.hpp"

namespace mifcn {

void Hyperparams::validate() const {
  require(epochs >= 0, "hyperparams: epochs must be >= 0");
  require(lr1 > 0.0 && lr2 > 0.0, "hyperparams: learning rates must be positive");
  require(batch_size >= 1, "hyperparams: batch size must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "hyperparams: Adam betas must lie in [0,1)");
  require(epsilon > 0.0, "hyperparams: Adam epsilon must be positive");
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double beta1, double beta2, double epsilon) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  require(state.m.size() == params.size(), "adam_step: optimizer state does not match parameters");
  ++state.step;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    require(grads[i].shape() == p.shape() && state.m[i].shape() == p.shape(),
            "adam_step: shape mismatch for parameter " + std::to_string(i));
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    const auto& g = grads[i].array();
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.square();
    p.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + epsilon);
  }
}

void adam_step(MifcnParams& params, std::span<const Tensor> grads, AdamState& state, double lr,
               const Hyperparams& hyper) {
  std::vector<Tensor*> slots;
  for_each_param(params, [&](const std::string&, Tensor& t) { slots.push_back(&t); });
  adam_step(slots, grads, state, lr, hyper.beta1, hyper.beta2, hyper.epsilon);
}

double sample_loss(const MifcnOutput<double>& output, std::span<const Tensor> targets) {
  require(targets.size() == output.branch_outputs.size(),
          "loss: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(output.branch_outputs.size()) + " branch outputs");
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    require_same_shape(output.branch_outputs[t], targets[t], "loss");
    total += (output.branch_outputs[t].array() - targets[t].array()).square().mean();
  }
  require_same_shape(output.branch_outputs.front(), output.final, "loss");
  return total + (output.branch_outputs.front().array() - output.final.array()).square().mean();
}

double batch_loss(std::span<const MifcnOutput<double>> outputs, std::span<const std::vector<Tensor>> targets) {
  require(!outputs.empty() && outputs.size() == targets.size(), "loss: need one target set per sample");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) total += sample_loss(outputs[i], targets[i]);
  return total / static_cast<double>(outputs.size());
}

ad::Var sample_loss(const GraphOutput& output, std::span<const ad::Var> targets) {
  require(targets.size() == output.branch_outputs.size(), "loss: target/branch count mismatch");
  std::vector<ad::Var> terms;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    require(targets[t].shape() == output.branch_outputs[t].shape(), "loss: target shape mismatch");
    terms.push_back(ad::mean(ad::square(ad::sub(output.branch_outputs[t], targets[t]))));
  }
  terms.push_back(ad::mean(ad::square(ad::sub(output.branch_outputs.front(), output.final))));
  return ad::sum(terms);
}

ad::Var batch_loss(std::span<const GraphOutput> outputs, std::span<const std::vector<ad::Var>> targets) {
  require(!outputs.empty() && outputs.size() == targets.size(), "loss: need one target set per sample");
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < outputs.size(); ++i) terms.push_back(sample_loss(outputs[i], targets[i]));
  return ad::scale(ad::sum(terms), 1.0 / static_cast<double>(outputs.size()));
}

namespace {

void check_sample(const PatchTuple& sample, const ModelConfig& config) {
  require(sample.size() == static_cast<std::size_t>(config.branches) &&
              sample.clean.size() == static_cast<std::size_t>(config.branches),
          "training sample holds " + std::to_string(sample.size()) + " pairs, model expects T=" +
              std::to_string(config.branches));
}

LossAndGradient loss_and_gradient(const MifcnParams& params, const ModelConfig& config,
                                  std::span<const PatchTuple* const> samples) {
  require(!samples.empty(), "loss_and_gradient: empty batch");
  ad::Tape tape;
  const ParamVars vars = bind_params(tape, params);
  std::vector<GraphOutput> outputs;
  std::vector<std::vector<ad::Var>> targets;
  for (const PatchTuple* sample : samples) {
    check_sample(*sample, config);
    std::vector<ad::Var> inputs, clean;
    for (std::size_t t = 0; t < sample->size(); ++t) {
      inputs.push_back(tape.constant(sample->noisy[t]));
      clean.push_back(tape.constant(sample->clean[t]));
    }
    outputs.push_back(mifcn_forward(inputs, vars, config));
    targets.push_back(std::move(clean));
  }
  const ad::Var loss = batch_loss(outputs, targets);
  tape.backward(loss);

  LossAndGradient out;
  out.loss = loss.value()[0];
  out.min_kink_distance = tape.min_kink_distance();
  for_each_param(vars, [&](const std::string&, const ad::Var& v) { out.grads.push_back(v.grad()); });
  return out;
}

std::vector<const PatchTuple*> pointers(std::span<const PatchTuple> samples) {
  std::vector<const PatchTuple*> out;
  for (const PatchTuple& s : samples) out.push_back(&s);
  return out;
}

}  // namespace

LossAndGradient loss_and_gradient(const MifcnParams& params, const ModelConfig& config,
                                  std::span<const PatchTuple> samples) {
  const auto ptrs = pointers(samples);
  return loss_and_gradient(params, config, std::span<const PatchTuple* const>(ptrs));
}

double evaluate_loss(const MifcnParams& params, const ModelConfig& config, std::span<const PatchTuple> samples) {
  require(!samples.empty(), "evaluate_loss: no samples");
  double total = 0.0;
  for (const PatchTuple& sample : samples) {
    check_sample(sample, config);
    const MifcnOutput<double> out = mifcn_forward(sample.noisy, params, config);
    total += sample_loss(out, sample.clean);
  }
  return total / static_cast<double>(samples.size());
}

Tensor flip_horizontal(const Tensor& patch) {
  require(patch.rank() == 2, "flip_horizontal: patch must be [H,W]");
  Tensor out(patch.shape());
  out.matrix() = patch.matrix().rowwise().reverse();
  return out;
}

Tensor rotate90(const Tensor& patch) {
  require(patch.rank() == 2, "rotate90: patch must be [H,W]");
  require(patch.dim(0) == patch.dim(1),
          "rotate90: rotation needs a square patch, got " + shape_string(patch.shape()));
  // Counter-clockwise: out(i, j) = in(j, n-1-i).
  Tensor out(patch.shape());
  out.matrix() = patch.matrix().transpose().colwise().reverse();
  return out;
}

std::array<PatchTuple, 3> augment(const PatchTuple& sample) {
  std::array<PatchTuple, 3> out{sample, sample, sample};
  for (std::size_t t = 0; t < sample.size(); ++t) {
    out[1].noisy[t] = flip_horizontal(sample.noisy[t]);
    out[1].clean[t] = flip_horizontal(sample.clean[t]);
    out[2].noisy[t] = rotate90(sample.noisy[t]);
    out[2].clean[t] = rotate90(sample.clean[t]);
  }
  return out;
}

std::vector<PatchTuple> augment_all(std::span<const PatchTuple> samples) {
  std::vector<PatchTuple> out;
  out.reserve(samples.size() * 3);
  for (const PatchTuple& s : samples)
    for (PatchTuple& a : augment(s)) out.push_back(std::move(a));
  return out;
}

TrainResult train(std::span<const PatchTuple> samples, const ModelConfig& config, const Hyperparams& hyper,
                  MifcnParams initial, const TrainOptions& options) {
  config.validate();
  hyper.validate();
  check_params(initial, config);
  if (samples.empty()) throw DataError("train: empty training set");
  for (const PatchTuple& s : samples) check_sample(s, config);

  std::vector<PatchTuple> augmented;
  if (hyper.augment) augmented = augment_all(samples);
  const std::span<const PatchTuple> data = hyper.augment ? std::span<const PatchTuple>(augmented) : samples;

  TrainResult result{std::move(initial), {}};
  AdamState state;
  std::mt19937_64 rng(hyper.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::ofstream log;
  if (!options.log.empty()) {
    const bool fresh = !std::filesystem::exists(options.log);
    log.open(options.log, std::ios::app);
    if (!log) throw DataError("cannot open training log: " + options.log.string());
    if (fresh) log << "# epoch lr mean_J\n";
  }

  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = hyper.learning_rate(epoch);
    double weighted = 0.0;
    std::vector<const PatchTuple*> batch;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(hyper.batch_size));
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);
      LossAndGradient lg = loss_and_gradient(result.params, config, std::span<const PatchTuple* const>(batch));
      if (!std::isfinite(lg.loss)) {
        const int last = result.record.epochs.empty() ? 0 : result.record.epochs.back().epoch;
        throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) +
                           "; last finite epoch: " + std::to_string(last));
      }
      weighted += lg.loss * static_cast<double>(batch.size());
      adam_step(result.params, lg.grads, state, lr, hyper);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean_loss = weighted / static_cast<double>(data.size());
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.record.epochs.push_back(stats);
    if (log) log << epoch << ' ' << lr << ' ' << std::setprecision(10) << stats.mean_loss << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(stats);
  }
  result.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!options.checkpoint.empty()) {
    save_checkpoint(result.params, config, options.checkpoint);
    result.record.checkpoint = options.checkpoint;
  }
  return result;
}

TrainResult train(std::span<const PatchTuple> samples, const ModelConfig& config, const Hyperparams& hyper,
                  const TrainOptions& options) {
  return train(samples, config, hyper, identity_init(config, hyper.init_seed), options);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  T out{};
  std::string rest;
  if (!(ss >> out) || (ss >> rest)) throw PreconditionError("setting '" + key + "': cannot parse '" + value + "'");
  return out;
}

}  // namespace

void apply_setting(ModelConfig& config, Hyperparams& hyper, const std::string& key, const std::string& value) {
  if (key == "T") {
    config.branches = parse_number<int>(key, value);
  } else if (key == "C") {
    config.channels = parse_number<int>(key, value);
  } else if (key == "A") {
    config.branch_layers = parse_number<int>(key, value);
    config.dilations = ModelConfig::default_dilations(config.branch_layers);
  } else if (key == "B") {
    config.head_layers = parse_number<int>(key, value);
  } else if (key == "dilations") {
    config.dilations.clear();
    std::istringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) config.dilations.push_back(parse_number<int>(key, item));
  } else if (key == "h") {
    config.h = parse_number<double>(key, value);
  } else if (key == "alpha") {
    config.alpha = parse_number<double>(key, value);
  } else if (key == "epochs") {
    hyper.epochs = parse_number<int>(key, value);
  } else if (key == "batch") {
    hyper.batch_size = parse_number<int>(key, value);
  } else if (key == "lr1") {
    hyper.lr1 = parse_number<double>(key, value);
  } else if (key == "lr2") {
    hyper.lr2 = parse_number<double>(key, value);
  } else if (key == "lr_switch") {
    hyper.lr_switch_epoch = parse_number<int>(key, value);
  } else if (key == "beta1") {
    hyper.beta1 = parse_number<double>(key, value);
  } else if (key == "beta2") {
    hyper.beta2 = parse_number<double>(key, value);
  } else if (key == "epsilon") {
    hyper.epsilon = parse_number<double>(key, value);
  } else if (key == "seed") {
    hyper.shuffle_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "init_seed") {
    hyper.init_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "augment") {
    if (value == "1" || value == "true") hyper.augment = true;
    else if (value == "0" || value == "false") hyper.augment = false;
    else throw PreconditionError("setting 'augment': expected true/false, got '" + value + "'");
  } else {
    throw PreconditionError("unknown setting '" + key + "'");
  }
}

void load_train_config(const std::filesystem::path& path, ModelConfig& config, Hyperparams& hyper) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw PreconditionError(path.string() + ":" + std::to_string(number) + ": expected key=value");
    apply_setting(config, hyper, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace mifcn
