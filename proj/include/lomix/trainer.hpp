#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <mutex>
#include <exception>
#include <cstdio>
#include <tuple>
#include <vector>

#include "lomix/cmm.hpp"
#include "lomix/csv.hpp"
#include "lomix/data.hpp"
#include "lomix/metrics.hpp"
#include "lomix/network.hpp"
#include "lomix/optimizer.hpp"
#include "lomix/params.hpp"
#include "lomix/supervision.hpp"

namespace lomix {

enum class SchemeKind { LastLayer, DeepSup, Mutation, LoMix };

struct SupervisionScheme {
  SchemeKind kind = SchemeKind::LoMix;
  std::vector<FusionOp> ops{kAllFusionOps.begin(), kAllFusionOps.end()};  // LoMix only
  WeightMode weights = WeightMode::Learned;                               // LoMix only
  bool mutation_all_subsets = true;  // Mutation: every subset, or only the full set

  static SupervisionScheme last_layer() { return {SchemeKind::LastLayer, {}, WeightMode::Fixed}; }
  static SupervisionScheme deep_supervision() { return {SchemeKind::DeepSup, {}, WeightMode::Fixed}; }
  static SupervisionScheme mutation(bool all_subsets = true) {
    return {SchemeKind::Mutation, {FusionOp::Add}, WeightMode::Fixed, all_subsets};
  }
  static SupervisionScheme lomix(std::vector<FusionOp> ops = {kAllFusionOps.begin(), kAllFusionOps.end()},
                                 WeightMode weights = WeightMode::Learned) {
    return {SchemeKind::LoMix, canonical_ops(ops), weights};
  }

  WeightMode weight_mode() const { return kind == SchemeKind::LoMix ? weights : WeightMode::Fixed; }

  /// CLI spelling: last | deep | mutation | lomix.
  std::string name() const {
    switch (kind) {
      case SchemeKind::LastLayer: return "last";
      case SchemeKind::DeepSup: return "deep";
      case SchemeKind::Mutation: return "mutation";
      case SchemeKind::LoMix: return "lomix";
    }
    return "?";
  }

  /// Table label, e.g. "LoMix[add+mult;learned]".
  std::string label() const {
    switch (kind) {
      case SchemeKind::LastLayer: return "LL";
      case SchemeKind::DeepSup: return "DS";
      case SchemeKind::Mutation: return "MUTATION";
      case SchemeKind::LoMix: break;
    }
    std::string s = "LoMix[";
    for (std::size_t i = 0; i < ops.size(); ++i) s += (i ? "+" : "") + to_string(ops[i]);
    return s + (weights == WeightMode::Learned ? ";learned]" : ";fixed]");
  }
};

/// Supervised outputs of a scheme, in loss-accumulation order: originals
/// (coarse to fine) then mutants in generate_mutants order.
inline std::vector<OutputId> supervised_ids(const SupervisionScheme& scheme, std::size_t num_stages) {
  std::vector<OutputId> ids;
  if (scheme.kind == SchemeKind::LastLayer) {
    ids.push_back(OutputId::original(num_stages - 1));
    return ids;
  }
  for (std::size_t i = 0; i < num_stages; ++i) ids.push_back(OutputId::original(i));
  if (scheme.kind == SchemeKind::DeepSup) return ids;
  const auto subsets = enumerate_subsets(num_stages);
  if (scheme.kind == SchemeKind::Mutation) {
    for (const auto& s : subsets) {
      if (scheme.mutation_all_subsets || s.size() == num_stages)
        ids.push_back(OutputId::mutant(FusionOp::Add, s));
    }
    return ids;
  }
  for (FusionOp op : canonical_ops(scheme.ops))
    for (const auto& s : subsets) ids.push_back(OutputId::mutant(op, s));
  return ids;
}

struct TrainConfig {
  UNetConfig net{};
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double alpha_lr_scale = 1.0;
  std::uint64_t seed = 0;
  LossConfig loss{};
  SupervisionScheme scheme{};
  FinalPredictionMode final_prediction = FinalPredictionMode::LastStage;
  std::size_t eval_every = 1;
  bool concat_reactivate = true;
  std::size_t corrupt_stage = 0;  // 1-based stage whose head sees noise; 0 = none
  std::size_t max_steps = 0;      // stop after this many optimizer steps; 0 = no limit

  void validate() const {
    net.validate();
    loss.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (corrupt_stage > net.num_stages) throw std::invalid_argument("corrupt_stage out of range");
    if (scheme.kind == SchemeKind::LoMix && canonical_ops(scheme.ops).empty())
      throw std::invalid_argument("LoMix needs at least one fusion operator");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeightTraceRow {
  std::size_t epoch;
  std::string output_id;
  double weight;
};
using WeightTrace = std::vector<WeightTraceRow>;

struct MetricRow {
  std::size_t epoch;
  std::string split;
  std::string cls;  // class index or "mean"
  double dice;
  double miou;
};

/// A network wrapped with the scheme-specific training extras. The extras
/// (fusion parameters, loss weights) never enter the inference path.
template <std::floating_point T>
class SupervisedModel {
 public:
  SupervisedModel(const TrainConfig& cfg)
      : net_(cfg.net, cfg.seed),
        scheme_(cfg.scheme),
        loss_(cfg.loss),
        ids_(supervised_ids(cfg.scheme, cfg.net.num_stages)),
        alphas_(ids_, cfg.scheme.weight_mode()) {
    cmm_.num_stages = cfg.net.num_stages;
    cmm_.num_classes = cfg.net.num_classes;
    cmm_.activation = cfg.loss.activation;
    cmm_.concat_reactivate = cfg.concat_reactivate;
    if (scheme_.kind == SchemeKind::LoMix) {
      cmm_.ops = canonical_ops(scheme_.ops);
    } else if (scheme_.kind == SchemeKind::Mutation) {
      cmm_.ops = {FusionOp::Add};
    } else {
      cmm_.ops.clear();
    }
    if (!cmm_.ops.empty()) fusion_ = FusionParams<T>(cfg.net.num_stages, cfg.net.num_classes, cmm_.ops);
  }

  UNet<T>& net() { return net_; }
  const UNet<T>& net() const { return net_; }
  FusionParams<T>& fusion() { return fusion_; }
  const FusionParams<T>& fusion() const { return fusion_; }
  AlphaBank<T>& alphas() { return alphas_; }
  const AlphaBank<T>& alphas() const { return alphas_; }
  const SupervisionScheme& scheme() const { return scheme_; }
  const LossConfig& loss_config() const { return loss_; }
  const CmmConfig& cmm_config() const { return cmm_; }
  const std::vector<OutputId>& ids() const { return ids_; }

  std::size_t inference_parameter_count() const { return net_.parameter_count(); }

  bool alphas_trainable() const { return alphas_.mode() == WeightMode::Learned; }

  /// Every supervised map for one image, with everything bound on `tape`.
  struct Graph {
    BoundParameters<T> net, fusion, alphas;
    std::vector<SupervisedOutput<T>> outputs;
  };

  Graph build(Tape<T>& tape, const Array<T>& image, HeadCorruption corruption = {}) const {
    Graph g;
    g.net = bind(tape, net_.parameters());
    g.fusion = bind(tape, fusion_.parameters());
    if (alphas_trainable()) g.alphas = bind(tape, alphas_.parameters());
    const auto logits = net_.forward(tape.constant(image), g.net, corruption);
    const auto maps = to_probability_maps(logits, loss_.activation, net_.config().height,
                                          net_.config().width);
    g.outputs = select_outputs(maps, g.fusion);
    return g;
  }

  std::vector<SupervisedOutput<T>> select_outputs(const std::vector<Var<T>>& maps,
                                                  const BoundParameters<T>& fusion) const {
    std::vector<SupervisedOutput<T>> outs;
    if (scheme_.kind == SchemeKind::LastLayer) {
      outs.push_back({OutputId::original(maps.size() - 1), maps.back()});
      return outs;
    }
    for (std::size_t i = 0; i < maps.size(); ++i) outs.push_back({OutputId::original(i), maps[i]});
    if (cmm_.ops.empty()) return outs;
    for (auto& m : generate_mutants(maps, cmm_, fusion_, fusion)) {
      if (alphas_.contains(m.id)) outs.push_back(std::move(m));
    }
    return outs;
  }

  Var<T> loss(const Graph& g, const Array<T>& label) const {
    return total_loss(g.outputs, label, alphas_, alphas_trainable() ? &g.alphas : nullptr, loss_);
  }

  Array<T> infer(const Array<T>& image, FinalPredictionMode mode) const {
    return lomix::infer(net_, image, loss_.activation, mode);
  }

  std::vector<const ParameterSet<T>*> all_parameter_sets() const {
    return {&net_.parameters(), &fusion_.parameters(), &alphas_.parameters()};
  }

 private:
  UNet<T> net_;
  SupervisionScheme scheme_;
  LossConfig loss_;
  CmmConfig cmm_;
  std::vector<OutputId> ids_;
  FusionParams<T> fusion_;
  AlphaBank<T> alphas_;
};

/// Snapshot of every trainable tensor, for best-checkpoint retention.
template <std::floating_point T>
struct ModelSnapshot {
  ParameterSet<T> net, fusion, alphas;
};

struct EpochReport {
  std::size_t epoch;
  double mean_loss;
  std::optional<ClassScores> validation;
};

template <std::floating_point T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_((cfg.validate(), cfg)),
        model_(cfg_),
        optimizer_(AdamWConfig{cfg_.learning_rate, cfg_.weight_decay}),
        shuffle_rng_(cfg_.seed ^ 0x5DEECE66DULL),
        noise_rng_(cfg_.seed ^ 0xC0FFEE1234ULL) {
    net_grads_ = zero_grads(model_.net().parameters());
    fusion_grads_ = zero_grads(model_.fusion().parameters());
    alpha_grads_ = zero_grads(model_.alphas().parameters());
  }

  const TrainConfig& config() const { return cfg_; }
  SupervisedModel<T>& model() { return model_; }
  const SupervisedModel<T>& model() const { return model_; }
  std::size_t steps() const { return steps_; }

  /// Loss of one sample on a fresh tape (no update). Used by tests and the
  /// scheme-reduction checks.
  T sample_loss(const Sample& s) {
    Tape<T> tape;
    auto g = model_.build(tape, s.image.template cast<T>(), corruption());
    return model_.loss(g, s.label.template cast<T>()).value().item();
  }

  /// Forward, aggregate, backward, and one AdamW update over a batch. The
  /// batch loss is the mean of per-sample total losses.
  double train_step(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    for (auto* g : {&net_grads_, &fusion_grads_, &alpha_grads_})
      for (auto& a : *g) a.fill(T{0});
    const T inv_b = T{1} / static_cast<T>(batch.size());
    double total = 0.0;
    for (const Sample* s : batch) {
      Tape<T> tape;
      typename SupervisedModel<T>::Graph g;
      Var<T> loss;
      try {
        g = model_.build(tape, s->image.template cast<T>(), corruption());
        loss = model_.loss(g, s->label.template cast<T>());
      } catch (const NonFiniteError& e) {
        throw TrainingError("non-finite loss at step " + std::to_string(steps_) + ": " + e.what());
      }
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value))
        throw TrainingError("non-finite loss at step " + std::to_string(steps_));
      total += value;
      tape.backward(scale(loss, inv_b));
      collect(tape, g.net, net_grads_);
      collect(tape, g.fusion, fusion_grads_);
      if (model_.alphas_trainable()) collect(tape, g.alphas, alpha_grads_);
    }
    optimizer_.step(slots());
    ++steps_;
    loss_history_.push_back(total / static_cast<double>(batch.size()));
    return loss_history_.back();
  }

  ClassScores evaluate(const std::vector<Sample>& data) const {
    std::vector<ClassScores> per;
    per.reserve(data.size());
    for (const auto& s : data) {
      const Array<T> pred = model_.infer(s.image.template cast<T>(), cfg_.final_prediction);
      per.push_back(dice_score(argmax_classes(pred, cfg_.loss.activation), s.label));
    }
    return average_scores(per);
  }

  /// One pass over `train` in a seeded shuffled order.
  double train_epoch(const std::vector<Sample>& train) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng_.below(i)]);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      if (cfg_.max_steps && steps_ >= cfg_.max_steps) break;
      std::vector<const Sample*> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + cfg_.batch_size); ++j)
        batch.push_back(&train[order[j]]);
      sum += train_step(batch);
      ++batches;
    }
    return batches ? sum / static_cast<double>(batches) : 0.0;
  }

  /// Current softplus weights (learned mode), one row per supervised output.
  void record_weights(std::size_t epoch, WeightTrace& trace) const {
    if (!model_.alphas_trainable()) return;
    for (const auto& id : model_.ids())
      trace.push_back({epoch, id.str(), static_cast<double>(model_.alphas().weight(id))});
  }

  ModelSnapshot<T> snapshot() const {
    return {model_.net().parameters(), model_.fusion().parameters(), model_.alphas().parameters()};
  }

  const std::vector<double>& loss_history() const { return loss_history_; }

 private:
  HeadCorruption corruption() {
    return cfg_.corrupt_stage ? HeadCorruption{cfg_.corrupt_stage, &noise_rng_} : HeadCorruption{};
  }

  static std::vector<Array<T>> zero_grads(const ParameterSet<T>& set) {
    std::vector<Array<T>> g;
    for (const auto& p : set) g.push_back(Array<T>::zeros_like(p.value));
    return g;
  }

  static void collect(const Tape<T>& tape, const BoundParameters<T>& bound, std::vector<Array<T>>& into) {
    for (std::size_t i = 0; i < bound.vars.size(); ++i) {
      const Array<T> g = tape.grad(bound[i]);
      for (std::size_t j = 0; j < g.size(); ++j) into[i][j] += g[j];
    }
  }

  std::vector<ParamSlot<T>> slots() {
    std::vector<ParamSlot<T>> s;
    auto add_set = [&](ParameterSet<T>& set, std::vector<Array<T>>& grads, double lr_scale) {
      for (std::size_t i = 0; i < set.size(); ++i)
        s.push_back({&set[i].value, &grads[i], set[i].decay, lr_scale});
    };
    add_set(model_.net().parameters(), net_grads_, 1.0);
    add_set(model_.fusion().parameters(), fusion_grads_, 1.0);
    if (model_.alphas_trainable()) add_set(model_.alphas().parameters(), alpha_grads_, cfg_.alpha_lr_scale);
    return s;
  }

  TrainConfig cfg_;
  SupervisedModel<T> model_;
  AdamW<T> optimizer_;
  Xorshift64Star shuffle_rng_;
  Xorshift64Star noise_rng_;
  std::vector<Array<T>> net_grads_, fusion_grads_, alpha_grads_;
  std::size_t steps_ = 0;
  std::vector<double> loss_history_;
};

template <std::floating_point T>
struct TrainResult {
  ModelSnapshot<T> final_params;
  ModelSnapshot<T> best_params;
  double best_dice = -1.0;
  std::size_t best_epoch = 0;
  ClassScores best_scores;
  WeightTrace trace;
  std::vector<MetricRow> metrics;
  std::vector<EpochReport> epochs;
  std::vector<double> loss_history;
  std::size_t supervised_outputs = 0;
};

inline void append_metrics(std::size_t epoch, const std::string& split, const ClassScores& s,
                           std::vector<MetricRow>& rows) {
  for (std::size_t k = 1; k < s.dice.size(); ++k)
    rows.push_back({epoch, split, std::to_string(k), s.dice[k], s.iou[k]});
  rows.push_back({epoch, split, "mean", s.mean_dice, s.mean_iou});
}

/// Fixed epoch budget; validation every `eval_every` epochs and after the
/// last one; the best validation mean DICE (strictly greater wins) is kept.
template <std::floating_point T>
TrainResult<T> run_training(const std::vector<Sample>& train, const std::vector<Sample>& val,
                            const TrainConfig& cfg,
                            const std::function<void(const EpochReport&)>& on_epoch = {},
                            const std::string& split = "val") {
  if (train.empty()) throw std::invalid_argument("run_training: empty training set");
  Trainer<T> trainer(cfg);
  TrainResult<T> result;
  result.supervised_outputs = trainer.model().ids().size();
  result.best_params = trainer.snapshot();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochReport report{epoch, trainer.train_epoch(train), std::nullopt};
    trainer.record_weights(epoch, result.trace);
    if (!val.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const ClassScores s = trainer.evaluate(val);
      append_metrics(epoch, split, s, result.metrics);
      if (s.mean_dice > result.best_dice) {
        result.best_dice = s.mean_dice;
        result.best_epoch = epoch;
        result.best_scores = s;
        result.best_params = trainer.snapshot();
      }
      report.validation = s;
    }
    result.epochs.push_back(report);
    if (on_epoch) on_epoch(report);
    if (cfg.max_steps && trainer.steps() >= cfg.max_steps) break;
  }
  result.final_params = trainer.snapshot();
  if (val.empty()) result.best_params = result.final_params;
  result.loss_history = trainer.loss_history();
  return result;
}

// ---------------------------------------------------------------------------
// Scheme comparison

struct ComparisonRow {
  std::string scheme;
  std::size_t runs = 0;
  double dice_mean = 0, dice_sd = 0, miou_mean = 0, miou_sd = 0;
  std::vector<double> class_dice_mean, class_dice_sd;  // foreground classes 1..C-1
};

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0;
  for (double x : v) m += x;
  m /= n;
  if (v.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0))};
}

/// Trains every (scheme, seed) cell as an isolated run and aggregates the
/// best-checkpoint validation scores per scheme, in the requested order.
template <std::floating_point T>
std::vector<ComparisonRow> compare_schemes(const std::vector<Sample>& train,
                                           const std::vector<Sample>& val,
                                           const std::vector<SupervisionScheme>& schemes,
                                           const std::vector<std::uint64_t>& seeds,
                                           const TrainConfig& base, std::size_t jobs = 1) {
  if (seeds.empty()) throw std::invalid_argument("compare_schemes: at least one seed required");
  const std::size_t cells = schemes.size() * seeds.size();
  std::vector<ClassScores> scores(cells);
  auto run_cell = [&](std::size_t cell) {
    TrainConfig cfg = base;
    cfg.scheme = schemes[cell / seeds.size()];
    cfg.seed = seeds[cell % seeds.size()];
    scores[cell] = run_training<T>(train, val, cfg).best_scores;
  };
  if (jobs <= 1) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c);
  } else {
    std::vector<std::exception_ptr> errors(cells);
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex m;
    for (std::size_t t = 0; t < std::min(jobs, cells); ++t) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t cell;
          {
            std::lock_guard lock(m);
            if (next >= cells) return;
            cell = next++;
          }
          try {
            run_cell(cell);
          } catch (...) {
            errors[cell] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<ComparisonRow> rows;
  for (std::size_t si = 0; si < schemes.size(); ++si) {
    ComparisonRow row;
    row.scheme = schemes[si].label();
    row.runs = seeds.size();
    std::vector<double> dice, miou;
    const std::size_t classes = scores[si * seeds.size()].dice.size();
    std::vector<std::vector<double>> per_class(classes);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const ClassScores& s = scores[si * seeds.size() + k];
      dice.push_back(s.mean_dice);
      miou.push_back(s.mean_iou);
      for (std::size_t c = 1; c < classes; ++c) per_class[c].push_back(s.dice[c]);
    }
    std::tie(row.dice_mean, row.dice_sd) = mean_sd(dice);
    std::tie(row.miou_mean, row.miou_sd) = mean_sd(miou);
    for (std::size_t c = 1; c < classes; ++c) {
      const auto [m, sd] = mean_sd(per_class[c]);
      row.class_dice_mean.push_back(m);
      row.class_dice_sd.push_back(sd);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV / text renderers

inline std::string weight_trace_csv(const WeightTrace& trace) {
  std::string out = "epoch,output_id,weight\n";
  for (const auto& r : trace)
    out += std::to_string(r.epoch) + "," + csv::field(r.output_id) + "," + csv::number(r.weight) + "\n";
  return out;
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "epoch,split,class,dice,miou\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + r.split + "," + r.cls + "," + csv::number(r.dice) + "," +
           csv::number(r.miou) + "\n";
  return out;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "scheme,runs,dice_mean,dice_sd,miou_mean,miou_sd";
  const std::size_t classes = rows.empty() ? 0 : rows.front().class_dice_mean.size();
  for (std::size_t c = 0; c < classes; ++c) {
    out += ",dice_class" + std::to_string(c + 1) + "_mean";
    out += ",dice_class" + std::to_string(c + 1) + "_sd";
  }
  out += "\n";
  for (const auto& r : rows) {
    out += csv::field(r.scheme) + "," + std::to_string(r.runs) + "," + csv::number(r.dice_mean) + "," +
           csv::number(r.dice_sd) + "," + csv::number(r.miou_mean) + "," + csv::number(r.miou_sd);
    for (std::size_t c = 0; c < r.class_dice_mean.size(); ++c)
      out += "," + csv::number(r.class_dice_mean[c]) + "," + csv::number(r.class_dice_sd[c]);
    out += "\n";
  }
  return out;
}

inline std::string comparison_table(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %4s %17s %17s", "scheme", "runs", "DICE (%)", "mIoU (%)");
  out << buf;
  const std::size_t classes = rows.empty() ? 0 : rows.front().class_dice_mean.size();
  for (std::size_t c = 0; c < classes; ++c) {
    std::snprintf(buf, sizeof buf, " %15s", ("class " + std::to_string(c + 1)).c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s %4zu %8.2f +- %5.2f %8.2f +- %5.2f", r.scheme.c_str(), r.runs,
                  100 * r.dice_mean, 100 * r.dice_sd, 100 * r.miou_mean, 100 * r.miou_sd);
    out << buf;
    for (std::size_t c = 0; c < r.class_dice_mean.size(); ++c) {
      std::snprintf(buf, sizeof buf, " %6.2f +- %5.2f", 100 * r.class_dice_mean[c], 100 * r.class_dice_sd[c]);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace lomix
