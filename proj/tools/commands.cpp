#include "commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "mifcn/checkpoint.hpp"
#include "mifcn/dataset.hpp"
#include "mifcn/gradcheck.hpp"
#include "mifcn/image_io.hpp"
#include "mifcn/metrics.hpp"
#include "mifcn/model.hpp"
#include "mifcn/training.hpp"

namespace fs = std::filesystem;

namespace mifcn::cli {

namespace {

struct Options {
  std::string data, crops, rois, checkpoint, out, config, results, compare;
  std::string h_list = "1,100,200,300,400,500,600,700,800,900,1000";
  std::optional<int> T, C, A, B, epochs, batch;
  std::optional<double> h, alpha, lr1, lr2;
  std::optional<std::uint64_t> seed;
  int patch_size = 15;
  int patches = 400;
  bool intermediates = false;
  bool noisy = false;
  int instances = 25;
  double perturb = 0.0;
};

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--T", o.T, "Number of branches (main + nearby images)")->check(CLI::PositiveNumber);
  cmd->add_option("--C", o.C, "Feature maps per hidden layer")->check(CLI::PositiveNumber);
  cmd->add_option("--A", o.A, "3x3 conv layers per branch")->check(CLI::PositiveNumber);
  cmd->add_option("--B", o.B, "3x3 conv layers after fusion")->check(CLI::NonNegativeNumber);
  cmd->add_option("--h", o.h, "Fusion decay constant");
  cmd->add_option("--alpha", o.alpha, "Leaky ReLU slope");
}

void add_training_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Flat key=value training config file")->check(CLI::ExistingFile);
  cmd->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch", o.batch, "Tuples per mini-batch")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Shuffle and initialisation seed");
  cmd->add_option("--lr1", o.lr1, "Learning rate up to the switch epoch");
  cmd->add_option("--lr2", o.lr2, "Learning rate after the switch epoch");
}

void apply_overrides(const Options& o, ModelConfig& config, Hyperparams& hyper) {
  if (!o.config.empty()) load_train_config(o.config, config, hyper);
  if (o.T) config.branches = *o.T;
  if (o.C) config.channels = *o.C;
  if (o.A) {
    config.branch_layers = *o.A;
    config.dilations = ModelConfig::default_dilations(*o.A);
  }
  if (o.B) config.head_layers = *o.B;
  if (o.h) config.h = *o.h;
  if (o.alpha) config.alpha = *o.alpha;
  if (o.epochs) hyper.epochs = *o.epochs;
  if (o.batch) hyper.batch_size = *o.batch;
  if (o.lr1) hyper.lr1 = *o.lr1;
  if (o.lr2) hyper.lr2 = *o.lr2;
  if (o.seed) hyper.shuffle_seed = hyper.init_seed = *o.seed;
  config.validate();
  hyper.validate();
}

std::vector<double> parse_h_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw PreconditionError("--h-list: cannot parse '" + item + "'");
    if (!(v > 0.0)) throw PreconditionError("--h-list: h must be positive, got " + item);
    out.push_back(v);
  }
  if (out.empty()) throw PreconditionError("--h-list: empty list");
  return out;
}

/// ROI source: one file for every image, or a directory of <case>.roi files.
std::optional<RoiSpec> rois_for(const Options& o, const std::string& case_name) {
  if (o.rois.empty()) return std::nullopt;
  const fs::path p(o.rois);
  if (fs::is_directory(p)) {
    const fs::path file = p / (case_name + ".roi");
    if (!fs::exists(file)) throw DataError("no ROI file for '" + case_name + "': " + file.string());
    return read_roi_file(file);
  }
  if (!fs::exists(p)) throw DataError("ROI file not found: " + p.string());
  return read_roi_file(p);
}

int nearby_count(const fs::path& dir) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().stem().string().starts_with("near")) ++count;
  return count;
}

std::string case_name(const fs::path& dir) {
  const fs::path clean = dir.lexically_normal();
  return (clean.has_filename() ? clean.filename() : clean.parent_path().filename()).string();
}

int build_dataset(const Options& o, std::ostream& out) {
  require(o.patch_size >= 1 && o.patches >= 1, "--patch-size and --patches must be positive");
  const int branches = o.T.value_or(5);
  const std::vector<ImagePair> pairs = load_training_pairs(o.data, o.crops);
  const TrainingSet set = build_training_set(pairs, {o.patch_size, o.patches, branches});
  fs::create_directories(fs::absolute(o.out).parent_path());
  save_patch_archive(set.tuples, o.patch_size, o.out);
  out << "pairs: " << pairs.size() << "\ntuples: " << set.tuples.size() << "\nT: " << branches << "\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) out << "stride " << pairs[i].name << ": " << set.strides[i] << "\n";
  out << "archive: " << o.out << "\n";
  return kSuccess;
}

int train_model(const Options& o, std::ostream& out) {
  ModelConfig config;
  Hyperparams hyper;
  const std::vector<PatchTuple> tuples = load_patch_archive(o.data);
  if (tuples.empty()) throw DataError(o.data + ": archive holds no tuples");
  const int archive_t = static_cast<int>(tuples.front().size());
  config.branches = archive_t;
  apply_overrides(o, config, hyper);
  if (config.branches != archive_t)
    throw DataError("archive tuples have T=" + std::to_string(archive_t) + ", model configured with T=" +
                    std::to_string(config.branches));

  TrainOptions options;
  options.checkpoint = o.checkpoint;
  options.log = o.out.empty() ? fs::path(o.checkpoint + ".log") : fs::path(o.out);
  options.on_epoch = [&](const EpochStats& s) {
    out << "epoch " << s.epoch << " lr " << s.lr << " J " << std::setprecision(8) << s.mean_loss << " ("
        << std::setprecision(3) << s.seconds << " s)\n"
        << std::flush;
  };
  out << "training on " << tuples.size() << " tuples" << (hyper.augment ? " (x3 augmentation)" : "") << ", "
      << hyper.epochs << " epochs\n";
  const TrainResult result = train(tuples, config, hyper, options);
  out << "checkpoint: " << result.record.checkpoint.string() << "\nlog: " << options.log.string() << "\n"
      << "wall clock: " << std::setprecision(4) << result.record.wall_seconds << " s\n";
  return kSuccess;
}

Checkpoint checkpoint_for_inference(const Options& o) {
  Checkpoint ck = load_checkpoint(o.checkpoint);
  if (o.T && *o.T != ck.config.branches)
    throw DataError("checkpoint has T=" + std::to_string(ck.config.branches) + " branches but --T " +
                    std::to_string(*o.T) + " was given");
  if (o.h) {
    require(*o.h > 0.0, "--h must be positive");
    ck.config.h = *o.h;
  }
  if (o.alpha) ck.config.alpha = *o.alpha;
  ck.config.validate();
  return ck;
}

int denoise(const Options& o, std::ostream& out) {
  const Checkpoint ck = checkpoint_for_inference(o);
  const std::vector<fs::path> cases = find_test_cases(o.data);
  std::vector<TestCase> loaded;
  for (const auto& dir : cases) loaded.push_back(load_test_case(dir, ck.config.branches));
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const TestCase& tc = loaded[i];
    const std::string name = case_name(cases[i]);
    const auto start = std::chrono::steady_clock::now();
    const MifcnOutput<double> result = mifcn_forward(tc.inputs(), ck.params, ck.config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!result.final.all_finite()) throw NumericError(name + ": non-finite output");
    save_image(result.final, fs::path(o.out) / (name + ".pgm"));
    if (o.intermediates) {
      const fs::path dir = fs::path(o.out) / name;
      fs::create_directories(dir);
      for (std::size_t t = 0; t < result.branch_outputs.size(); ++t) {
        save_image(result.branch_outputs[t], dir / ("branch" + std::to_string(t + 1) + ".pgm"));
        save_image(scale(result.weights[t], 255.0), dir / ("weight" + std::to_string(t + 1) + ".pgm"));
      }
      save_image(result.fused, dir / "fused.pgm");
    }
    out << name << ": " << tc.main.dim(0) << "x" << tc.main.dim(1) << " in " << std::setprecision(3) << seconds
        << " s, PSNR " << to_string(psnr(result.final, tc.reference), 2) << " dB (noisy "
        << to_string(psnr(tc.main, tc.reference), 2) << " dB)\n";
  }
  return kSuccess;
}

MetricReport report_for(const Options& o, const std::string& results, bool noisy) {
  std::vector<ImageMetrics> rows;
  for (const auto& dir : find_test_cases(o.data)) {
    const std::string name = case_name(dir);
    const TestCase tc = load_test_case(dir, o.T.value_or(nearby_count(dir) + 1));
    const Tensor image = noisy ? tc.main : load_image(fs::path(results) / (name + ".pgm"));
    if (image.shape() != tc.reference.shape())
      throw DataError(name + ": result " + shape_string(image.shape()) + " and reference " +
                      shape_string(tc.reference.shape()) + " differ in shape");
    const std::optional<RoiSpec> rois = rois_for(o, name);
    if (rois) {
      try {
        rois->check(image.dim(0), image.dim(1));
      } catch (const PreconditionError& e) {
        throw DataError(name + ": " + e.what());
      }
    }
    rows.push_back(evaluate_image(name, image, tc.reference, rois ? &*rois : nullptr));
  }
  return make_report(std::move(rows));
}

int evaluate(const Options& o, std::ostream& out) {
  if (o.results.empty() && !o.noisy) throw PreconditionError("evaluate needs --results DIR or --noisy");
  MetricReport report = report_for(o, o.results, o.noisy);
  if (!o.compare.empty()) attach_wilcoxon(report, report_for(o, o.compare, false));
  write_report_table(out, report);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream table(fs::path(o.out) / "report.txt"), csv(fs::path(o.out) / "report.csv");
    if (!table || !csv) throw DataError("cannot write report files under " + o.out);
    write_report_table(table, report);
    write_report_csv(csv, report);
  }
  return kSuccess;
}

int ablate_h(const Options& o, std::ostream& out) {
  const std::vector<double> hs = parse_h_list(o.h_list);
  const Checkpoint ck = checkpoint_for_inference(o);
  struct Case {
    std::string name;
    TestCase data;
    std::vector<Tensor> branches;
    std::optional<RoiSpec> rois;
  };
  std::vector<Case> cases;
  for (const auto& dir : find_test_cases(o.data)) {
    Case c{case_name(dir), load_test_case(dir, ck.config.branches), {}, {}};
    c.rois = rois_for(o, c.name);
    const auto inputs = c.data.inputs();
    for (std::size_t t = 0; t < inputs.size(); ++t)
      c.branches.push_back(branch_forward(inputs[t], ck.params.branches[t], ck.config.alpha));
    cases.push_back(std::move(c));
  }

  struct Row {
    std::string label;
    MetricReport report;
    double mean_p1 = 1.0;
  };
  std::vector<Row> rows;
  // Reference row: the head applied to the main branch alone (P_1 = 1).
  {
    std::vector<ImageMetrics> metrics;
    for (const Case& c : cases) {
      const Tensor final = head_forward(c.branches.front(), ck.params.head, ck.config.alpha);
      metrics.push_back(evaluate_image(c.name, final, c.data.reference, c.rois ? &*c.rois : nullptr));
    }
    rows.push_back({"main-only", make_report(std::move(metrics)), 1.0});
  }
  bool monotone = true;
  double previous_p1 = 1.0;
  for (double h : hs) {
    std::vector<ImageMetrics> metrics;
    double p1 = 0.0;
    for (const Case& c : cases) {
      const MifcnOutput<double> r = fuse_and_reconstruct(c.branches, ck.params.head, h, ck.config.alpha);
      p1 += r.weights.front().array().mean();
      metrics.push_back(evaluate_image(c.name, r.final, c.data.reference, c.rois ? &*c.rois : nullptr));
    }
    p1 /= static_cast<double>(cases.size());
    if (rows.size() > 1 && h > hs[rows.size() - 2] && p1 > previous_p1) monotone = false;
    previous_p1 = p1;
    std::ostringstream label;
    label << h;
    rows.push_back({label.str(), make_report(std::move(metrics)), p1});
  }

  const auto mean = [](const Summary& s) {
    if (s.count == 0) return std::string("-");
    std::ostringstream v;
    v << std::fixed << std::setprecision(2) << s.mean;
    return v.str();
  };
  out << std::left << std::setw(10) << "h" << std::right << std::setw(10) << "MSR" << std::setw(10) << "CNR"
      << std::setw(12) << "ENL" << std::setw(10) << "PSNR" << std::setw(10) << "mean P1" << '\n';
  std::ofstream csv;
  if (!o.out.empty()) {
    fs::create_directories(fs::absolute(o.out).parent_path());
    csv.open(o.out);
    if (!csv) throw DataError("cannot write " + o.out);
    csv << "h,msr,cnr,enl,psnr,mean_p1\n";
  }
  for (const Row& r : rows) {
    out << std::left << std::setw(10) << r.label << std::right << std::setw(10) << mean(r.report.msr)
        << std::setw(10) << mean(r.report.cnr) << std::setw(12) << mean(r.report.enl) << std::setw(10)
        << mean(r.report.psnr) << std::setw(10) << std::fixed << std::setprecision(4) << r.mean_p1
        << std::defaultfloat << '\n';
    if (csv)
      csv << r.label << ',' << mean(r.report.msr) << ',' << mean(r.report.cnr) << ',' << mean(r.report.enl) << ','
          << mean(r.report.psnr) << ',' << std::setprecision(10) << r.mean_p1 << '\n';
  }
  out << "mean P1 non-increasing in h: " << (monotone ? "yes" : "NO") << '\n';
  return kSuccess;
}

int gradcheck(const Options& o, std::ostream& out) {
  GradcheckOptions options;
  if (o.seed) options.seed = *o.seed;
  options.instances = o.instances;
  options.perturbation = o.perturb;
  require(options.instances >= 1, "--instances must be >= 1");
  const GradcheckReport report = run_gradcheck(options);
  write_gradcheck_report(out, report);
  return report.passed() ? kSuccess : kNumericFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-input fully-convolutional OCT denoiser"};
  app.require_subcommand(1);
  // "-h" would collide with the fusion constant flag.
  app.set_help_flag("--help", "Print this help message and exit");
  Options o;

  auto* build = app.add_subcommand("build-dataset", "Extract training patch tuples from image pairs");
  build->add_option("--data", o.data, "Directory with noisy/ and ref/ subdirectories")->required()->check(CLI::ExistingDirectory);
  build->add_option("--crops", o.crops, "Crop sidecar: 'filename top left height width' lines")->required()->check(CLI::ExistingFile);
  build->add_option("--out", o.out, "Archive to write")->required();
  build->add_option("--T", o.T, "Tuple size (branches)")->check(CLI::PositiveNumber);
  build->add_option("--patch-size", o.patch_size, "Patch side length");
  build->add_option("--patches", o.patches, "Anchor patches per image pair");

  auto* trn = app.add_subcommand("train", "Train from a patch archive");
  trn->add_option("--data", o.data, "Patch archive from build-dataset")->required()->check(CLI::ExistingFile);
  trn->add_option("--checkpoint", o.checkpoint, "Checkpoint to write")->required();
  trn->add_option("--out", o.out, "Training log (default: <checkpoint>.log)");
  add_model_flags(trn, o);
  add_training_flags(trn, o);

  auto* den = app.add_subcommand("denoise", "Denoise test cases with a trained checkpoint");
  den->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  den->add_option("--data", o.data, "Test case directory, or a directory of them")->required()->check(CLI::ExistingDirectory);
  den->add_option("--out", o.out, "Output directory")->required();
  den->add_option("--T", o.T, "Expected branch count (must match the checkpoint)")->check(CLI::PositiveNumber);
  den->add_option("--h", o.h, "Override the fusion constant");
  den->add_option("--alpha", o.alpha, "Override the leaky ReLU slope");
  den->add_flag("--intermediates", o.intermediates, "Also write branch outputs and weight maps");

  auto* ev = app.add_subcommand("evaluate", "PSNR/MSR/CNR/ENL report for denoised images");
  ev->add_option("--data", o.data, "Test cases holding the references")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--results", o.results, "Directory of <case>.pgm results")->check(CLI::ExistingDirectory);
  ev->add_flag("--noisy", o.noisy, "Evaluate the noisy main images instead of results");
  ev->add_option("--compare", o.compare, "Second result directory for paired Wilcoxon tests")->check(CLI::ExistingDirectory);
  ev->add_option("--rois", o.rois, "ROI file, or directory of <case>.roi files");
  ev->add_option("--out", o.out, "Directory for report.txt and report.csv");
  ev->add_option("--T", o.T, "Branch count the test cases were prepared for")->check(CLI::PositiveNumber);

  auto* abl = app.add_subcommand("ablate-h", "Metrics of a trained model across fusion constants");
  abl->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  abl->add_option("--data", o.data, "Test cases")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--rois", o.rois, "ROI file, or directory of <case>.roi files");
  abl->add_option("--h-list", o.h_list, "Comma-separated h values");
  abl->add_option("--out", o.out, "CSV table to write");
  abl->add_option("--T", o.T, "Expected branch count")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "Oracle and finite-difference gradient checks");
  gc->add_option("--seed", o.seed, "Random seed");
  gc->add_option("--instances", o.instances, "Random model instances");
  gc->add_option("--perturb", o.perturb, "Scale analytic gradients by (1 + x); for testing the checker")
      ->group("");

  std::vector<std::string> argv_storage{"mifcn"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*build) return build_dataset(o, out);
    if (*trn) return train_model(o, out);
    if (*den) return denoise(o, out);
    if (*ev) return evaluate(o, out);
    if (*abl) return ablate_h(o, out);
    if (*gc) return gradcheck(o, out);
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}

}  // namespace mifcn::cli
