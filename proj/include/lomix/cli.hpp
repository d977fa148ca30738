#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lomix/data.hpp"
#include "lomix/export.hpp"
#include "lomix/gradcheck.hpp"
#include "lomix/manifest.hpp"
#include "lomix/params.hpp"
#include "lomix/trainer.hpp"

namespace lomix::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Run directory file names.
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kCheckpointFile = "checkpoint.lmxw";
inline constexpr const char* kFinalCheckpointFile = "final.lmxw";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kTraceFile = "weight_trace.csv";
inline constexpr const char* kLossFile = "loss.csv";
inline constexpr const char* kFamilyFile = "family_sums.csv";
inline constexpr const char* kFinalWeightsFile = "final_weights.csv";

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::vector<FusionOp> parse_ops(const std::string& s) {
  std::vector<FusionOp> ops;
  try {
    for (const auto& item : split_list(s)) ops.push_back(parse_fusion_op(item));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (ops.empty()) throw UsageError("--ops needs at least one operator");
  return ops;
}

template <std::floating_point T>
void write_run_outputs(const std::string& dir, const TrainResult<T>& r, const SupervisionScheme& scheme) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  save_checkpoint((root / kCheckpointFile).string(),
                  std::vector<const ParameterSet<T>*>{&r.best_params.net, &r.best_params.fusion, &r.best_params.alphas});
  save_checkpoint((root / kFinalCheckpointFile).string(),
                  std::vector<const ParameterSet<T>*>{&r.final_params.net, &r.final_params.fusion,
                                                      &r.final_params.alphas});
  csv::write_text((root / kMetricsFile).string(), metrics_csv(r.metrics));
  std::string loss = "step,loss\n";
  for (std::size_t i = 0; i < r.loss_history.size(); ++i)
    loss += std::to_string(i + 1) + "," + csv::number(r.loss_history[i], 17) + "\n";
  csv::write_text((root / kLossFile).string(), loss);
  const fs::path trace = root / kTraceFile;
  if (scheme.weight_mode() == WeightMode::Learned) {
    csv::write_text(trace.string(), weight_trace_csv(r.trace));
  } else if (fs::exists(trace)) {
    fs::remove(trace);
  }
}

template <std::floating_point T>
int execute_typed(const RunManifest& m, const std::vector<Sample>& train, const std::vector<Sample>& val,
                  std::ostream& out) {
  const bool has_val = !val.empty();
  auto report = [&](const EpochReport& e) {
    char buf[160];
    if (e.validation) {
      std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f %s mean dice %.4f miou %.4f\n", e.epoch, e.mean_loss,
                    has_val ? "val" : "train", e.validation->mean_dice, e.validation->mean_iou);
    } else {
      std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f\n", e.epoch, e.mean_loss);
    }
    out << buf << std::flush;
  };
  const TrainResult<T> r = run_training<T>(train, has_val ? val : train, m.config, report, has_val ? "val" : "train");
  write_run_outputs(m.out_dir, r, m.config.scheme);
  char buf[200];
  std::snprintf(buf, sizeof buf, "best mean dice %.4f at epoch %zu; %zu supervised outputs; wrote %s\n", r.best_dice,
                r.best_epoch, r.supervised_outputs, m.out_dir.c_str());
  out << buf;
  return kOk;
}

/// Loads the datasets named in a manifest, writes the manifest into the run
/// directory, and trains.
inline int execute_manifest(const RunManifest& m, std::ostream& out) {
  namespace fs = std::filesystem;
  const std::vector<Sample> train = load(m.train_data);
  const std::vector<Sample> val = m.val_data.empty() ? std::vector<Sample>{} : load(m.val_data);
  if (train.empty()) throw std::runtime_error("training set '" + m.train_data + "' is empty");
  const auto& s = train.front();
  if (s.image.dim(0) != m.config.net.in_channels || s.num_classes() != m.config.net.num_classes ||
      s.image.dim(1) != m.config.net.height || s.image.dim(2) != m.config.net.width)
    throw std::runtime_error("dataset geometry does not match the network configuration");
  fs::create_directories(m.out_dir);
  save_manifest(m, (fs::path(m.out_dir) / kManifestFile).string());
  if (m.precision == "f64") return execute_typed<double>(m, train, val, out);
  return execute_typed<float>(m, train, val, out);
}

struct TrainFlags {
  std::string data, val, scheme = "lomix", ops = "add,mult,concat,awf", weights = "learned", out, manifest;
  std::string final_pred = "last", precision = "f32", activation = "softmax";
  std::size_t epochs = 30, batch_size = 8, stages = 4, width = 8, eval_every = 1, corrupt_stage = 0, max_steps = 0;
  double lr = 1e-4, wd = 1e-4, beta = 0.3, alpha_lr_scale = 1.0;
  std::uint64_t seed = 0;
  bool mutation_full_only = false;
  bool no_concat_reactivate = false;
  bool no_fusion_ce_normalize = false;
  bool add_dice_raw = false;

  void add_to(CLI::App& app, bool with_data = true) {
    if (with_data) {
      app.add_option("--data", data, "training set (.lmxd)");
      app.add_option("--val", val, "validation set (.lmxd)");
    }
    app.add_option("--ops", ops, "LoMix fusion operators, comma separated (add,mult,concat,awf)")->capture_default_str();
    app.add_option("--weights", weights, "LoMix loss weights: learned|fixed")->capture_default_str();
    app.add_option("--epochs", epochs)->capture_default_str();
    app.add_option("--batch-size", batch_size)->capture_default_str();
    app.add_option("--lr", lr, "AdamW learning rate")->capture_default_str();
    app.add_option("--wd", wd, "AdamW decoupled weight decay")->capture_default_str();
    app.add_option("--beta", beta, "cross-entropy share; DICE gets 1 - beta")->capture_default_str();
    app.add_option("--stages", stages, "decoder stages L (2..5)")->capture_default_str();
    app.add_option("--width", width, "channels at the finest level")->capture_default_str();
    app.add_option("--eval-every", eval_every)->capture_default_str();
    app.add_option("--final-pred", final_pred, "final prediction: last|sum")->capture_default_str();
    app.add_option("--corrupt-stage", corrupt_stage, "replace this stage's head input with noise (0 = off)");
    app.add_option("--max-steps", max_steps, "stop after this many optimizer steps (0 = no limit)");
    app.add_option("--alpha-lr-scale", alpha_lr_scale, "learning-rate multiplier for loss weights")
        ->capture_default_str();
    app.add_option("--precision", precision, "training arithmetic: f32|f64")->capture_default_str();
    app.add_option("--activation", activation, "softmax|sigmoid")->capture_default_str();
    app.add_flag("--mutation-full-only", mutation_full_only, "MUTATION supervises only the full-set sum");
    app.add_flag("--no-concat-reactivate", no_concat_reactivate);
    app.add_flag("--no-fusion-ce-normalize", no_fusion_ce_normalize);
    app.add_flag("--add-dice-raw", add_dice_raw, "DICE of Add mutants on the raw sum instead of the subset mean");
  }

  /// Resolved training configuration for one scheme name.
  TrainConfig config(const std::string& scheme_name, std::size_t in_channels, std::size_t classes, std::size_t h,
                     std::size_t w) const {
    TrainConfig c;
    try {
      c.scheme = parse_scheme(scheme_name, parse_ops(ops), parse_weight_mode(weights), !mutation_full_only);
      c.final_prediction = detail::parse_final_mode(final_pred);
      c.loss.activation = detail::parse_activation(activation);
    } catch (const UsageError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    c.net.in_channels = in_channels;
    c.net.num_classes = classes;
    c.net.num_stages = stages;
    c.net.base_width = width;
    c.net.height = h;
    c.net.width = w;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.weight_decay = wd;
    c.alpha_lr_scale = alpha_lr_scale;
    c.seed = seed;
    c.loss.beta = beta;
    c.loss.gamma = 1.0 - beta;
    c.loss.fusion_ce_normalize = !no_fusion_ce_normalize;
    c.loss.add_dice_mean = !add_dice_raw;
    c.concat_reactivate = !no_concat_reactivate;
    c.eval_every = eval_every;
    c.corrupt_stage = corrupt_stage;
    c.max_steps = max_steps;
    if (precision != "f32" && precision != "f64") throw UsageError("--precision must be f32 or f64");
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

inline std::vector<Sample> load_or_fail(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  return load(path);
}

inline int cmd_dataset_gen(const SynthConfig& cfg, const std::string& out_path, std::ostream& out) {
  const auto samples = generate(cfg);
  save(samples, out_path);
  out << "wrote " << samples.size() << " samples (" << cfg.height << "x" << cfg.width << ", " << cfg.num_classes
      << " classes, seed " << cfg.seed << ") to " << out_path << "\n";
  return kOk;
}

inline int cmd_compare(const TrainFlags& f, const std::string& schemes_arg, const std::string& seeds_arg,
                       const std::string& out_path, std::size_t jobs, std::ostream& out) {
  const auto names = split_list(schemes_arg);
  if (names.empty()) throw UsageError("--schemes needs at least one scheme");
  std::vector<std::uint64_t> seeds;
  try {
    for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
  } catch (const std::exception&) {
    throw UsageError("--seeds must be a comma-separated list of integers");
  }
  if (seeds.empty()) throw UsageError("--seeds needs at least one seed");
  const auto train = load_or_fail(f.data, "--data");
  if (train.empty()) throw std::runtime_error("training set is empty");
  const auto val = f.val.empty() ? train : load(f.val);
  const auto& s0 = train.front();
  std::vector<SupervisionScheme> schemes;
  TrainConfig base;
  for (const auto& n : names) {
    base = f.config(n, s0.image.dim(0), s0.num_classes(), s0.image.dim(1), s0.image.dim(2));
    schemes.push_back(base.scheme);
  }
  const auto rows = f.precision == "f64" ? compare_schemes<double>(train, val, schemes, seeds, base, jobs)
                                         : compare_schemes<float>(train, val, schemes, seeds, base, jobs);
  out << comparison_table(rows);
  if (!out_path.empty()) {
    csv::write_text(out_path, comparison_csv(rows));
    out << "wrote " << out_path << "\n";
  }
  return kOk;
}

inline int cmd_gradcheck(double tolerance, std::size_t instances, std::uint64_t seed, std::ostream& out) {
  if (tolerance < 0) throw UsageError("--tolerance must be >= 0");
  gradcheck::Options opt;
  opt.instances = instances;
  opt.seed = seed;
  const auto rep = gradcheck::run_all(tolerance, opt);
  out << rep.text();
  if (rep.passed()) {
    out << "all " << rep.results.size() << " checks within " << tolerance << "\n";
    return kOk;
  }
  out << "failing:";
  for (const auto& f : rep.failures()) out << " " << f;
  out << "\n";
  return kFailure;
}

inline int cmd_export_weights(const std::string& run_dir, const std::string& out_dir_arg, std::ostream& out) {
  namespace fs = std::filesystem;
  const fs::path trace_path = fs::path(run_dir) / kTraceFile;
  if (!fs::exists(trace_path))
    throw std::runtime_error("missing trace file '" + trace_path.string() + "'");
  const WeightTrace trace = read_weight_trace(trace_path.string());
  const fs::path out_dir = out_dir_arg.empty() ? fs::path(run_dir) : fs::path(out_dir_arg);
  fs::create_directories(out_dir);
  const auto fams = family_sums(trace);
  csv::write_text((out_dir / kFamilyFile).string(), family_sums_csv(fams));
  csv::write_text((out_dir / kFinalWeightsFile).string(), final_weights_csv(final_weights(trace)));
  out << "wrote " << (out_dir / kFamilyFile).string() << " (" << fams.size() << " rows) and "
      << (out_dir / kFinalWeightsFile).string() << "\n";
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Logits-mixing supervision for multi-scale segmentation networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // dataset gen
  auto* dataset = app.add_subcommand("dataset", "synthetic dataset tools");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "generate a synthetic shapes dataset");
  SynthConfig synth;
  std::size_t size = 64;
  std::string gen_out;
  gen->add_option("--size", size, "square canvas side")->capture_default_str();
  gen->add_option("--classes", synth.num_classes, "classes including background")->capture_default_str();
  gen->add_option("--count", synth.count)->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  gen->add_option("--min-radius", synth.min_radius, "smallest radius, fraction of the side")->capture_default_str();
  gen->add_option("--max-radius", synth.max_radius, "largest radius, fraction of the side")->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // train
  auto* train = app.add_subcommand("train", "train one network");
  TrainFlags tf;
  tf.add_to(*train);
  train->add_option("--scheme", tf.scheme, "last|deep|mutation|lomix")->capture_default_str();
  train->add_option("--seed", tf.seed)->capture_default_str();
  train->add_option("--out", tf.out, "run directory");
  train->add_option("--manifest", tf.manifest, "replay a manifest written by an earlier run");

  // compare
  auto* compare = app.add_subcommand("compare", "train several schemes over several seeds");
  TrainFlags cf;
  std::string schemes = "last,deep,mutation,lomix", seeds = "0,1,2", compare_out;
  std::size_t jobs = 1;
  cf.add_to(*compare);
  compare->add_option("--schemes", schemes)->capture_default_str();
  compare->add_option("--seeds", seeds)->capture_default_str();
  compare->add_option("--out", compare_out, "comparison CSV");
  compare->add_option("--jobs", jobs, "concurrent runs")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every operator and loss");
  double tolerance = 1e-6;
  std::size_t instances = 20;
  std::uint64_t gc_seed = gradcheck::Options{}.seed;
  gc->add_option("--tolerance", tolerance)->capture_default_str();
  gc->add_option("--instances", instances)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();

  // export-weights
  auto* ex = app.add_subcommand("export-weights", "summarise a run's weight trace");
  std::string run_dir, export_out;
  ex->add_option("run_dir", run_dir, "run directory containing weight_trace.csv")->required();
  ex->add_option("--out", export_out, "output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      synth.height = synth.width = size;
      try {
        synth.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      return cmd_dataset_gen(synth, gen_out, out);
    }
    if (train->parsed()) {
      RunManifest m;
      if (!tf.manifest.empty()) {
        m = load_manifest(tf.manifest);
        if (!tf.out.empty()) m.out_dir = tf.out;
        if (m.out_dir.empty()) throw UsageError("manifest has no out_dir; pass --out");
      } else {
        if (tf.out.empty()) throw UsageError("--out is required");
        const auto probe = load_or_fail(tf.data, "--data");
        if (probe.empty()) throw std::runtime_error("training set '" + tf.data + "' is empty");
        const auto& s = probe.front();
        m.train_data = tf.data;
        m.val_data = tf.val;
        m.out_dir = tf.out;
        m.precision = tf.precision;
        m.config = tf.config(tf.scheme, s.image.dim(0), s.num_classes(), s.image.dim(1), s.image.dim(2));
      }
      return execute_manifest(m, out);
    }
    if (compare->parsed()) return cmd_compare(cf, schemes, seeds, compare_out, jobs, out);
    if (gc->parsed()) return cmd_gradcheck(tolerance, instances, gc_seed, out);
    if (ex->parsed()) return cmd_export_weights(run_dir, export_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace lomix::cli
