#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lomix/trainer.hpp"

namespace lomix {

inline constexpr const char* kVersion = "0.1.0";

/// Everything needed to rerun a training job. Doubles are stored with
/// round-trip precision, so a replayed manifest rebuilds the same config.
struct RunManifest {
  std::string version = kVersion;
  std::string train_data;
  std::string val_data;
  std::string out_dir;
  std::string precision = "f32";  // f32 | f64 arithmetic during training
  TrainConfig config;
};

namespace detail {

inline std::string activation_name(Activation a) { return a == Activation::Softmax ? "softmax" : "sigmoid"; }
inline Activation parse_activation(const std::string& s) {
  if (s == "softmax") return Activation::Softmax;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}
inline std::string final_mode_name(FinalPredictionMode m) {
  return m == FinalPredictionMode::LastStage ? "last" : "sum";
}
inline FinalPredictionMode parse_final_mode(const std::string& s) {
  if (s == "last") return FinalPredictionMode::LastStage;
  if (s == "sum") return FinalPredictionMode::SumAll;
  throw std::invalid_argument("unknown final prediction mode '" + s + "' (last|sum)");
}

}  // namespace detail

inline SupervisionScheme parse_scheme(const std::string& name, const std::vector<FusionOp>& ops,
                                      WeightMode weights, bool mutation_all_subsets = true) {
  if (name == "last") return SupervisionScheme::last_layer();
  if (name == "deep") return SupervisionScheme::deep_supervision();
  if (name == "mutation") return SupervisionScheme::mutation(mutation_all_subsets);
  if (name == "lomix") return SupervisionScheme::lomix(ops, weights);
  throw std::invalid_argument("unknown scheme '" + name + "' (last|deep|mutation|lomix)");
}

inline WeightMode parse_weight_mode(const std::string& s) {
  if (s == "learned") return WeightMode::Learned;
  if (s == "fixed") return WeightMode::Fixed;
  throw std::invalid_argument("unknown weight mode '" + s + "' (learned|fixed)");
}

inline std::string to_string(WeightMode m) { return m == WeightMode::Learned ? "learned" : "fixed"; }

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  const TrainConfig& c = m.config;
  nlohmann::ordered_json ops = nlohmann::ordered_json::array();
  for (FusionOp op : c.scheme.ops) ops.push_back(to_string(op));
  return {
      {"version", m.version},
      {"train_data", m.train_data},
      {"val_data", m.val_data},
      {"out_dir", m.out_dir},
      {"precision", m.precision},
      {"seed", c.seed},
      {"scheme",
       {{"name", c.scheme.name()},
        {"ops", ops},
        {"weights", to_string(c.scheme.weights)},
        {"mutation_all_subsets", c.scheme.mutation_all_subsets}}},
      {"network",
       {{"in_channels", c.net.in_channels},
        {"num_classes", c.net.num_classes},
        {"num_stages", c.net.num_stages},
        {"base_width", c.net.base_width},
        {"height", c.net.height},
        {"width", c.net.width}}},
      {"loss",
       {{"beta", c.loss.beta},
        {"gamma", c.loss.gamma},
        {"eps_log", c.loss.eps_log},
        {"dice_smooth", c.loss.dice_smooth},
        {"fusion_ce_normalize", c.loss.fusion_ce_normalize},
        {"add_dice_mean", c.loss.add_dice_mean},
        {"activation", detail::activation_name(c.loss.activation)}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"alpha_lr_scale", c.alpha_lr_scale},
      {"final_prediction", detail::final_mode_name(c.final_prediction)},
      {"eval_every", c.eval_every},
      {"concat_reactivate", c.concat_reactivate},
      {"corrupt_stage", c.corrupt_stage},
      {"max_steps", c.max_steps},
  };
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.version = j.at("version").get<std::string>();
  m.train_data = j.at("train_data").get<std::string>();
  m.val_data = j.value("val_data", std::string{});
  m.out_dir = j.value("out_dir", std::string{});
  m.precision = j.value("precision", std::string{"f32"});
  if (m.precision != "f32" && m.precision != "f64")
    throw std::invalid_argument("precision must be f32 or f64");
  TrainConfig& c = m.config;
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& s = j.at("scheme");
  std::vector<FusionOp> ops;
  for (const auto& o : s.at("ops")) ops.push_back(parse_fusion_op(o.get<std::string>()));
  c.scheme = parse_scheme(s.at("name").get<std::string>(), ops, parse_weight_mode(s.at("weights").get<std::string>()),
                          s.value("mutation_all_subsets", true));
  const auto& n = j.at("network");
  c.net.in_channels = n.at("in_channels").get<std::size_t>();
  c.net.num_classes = n.at("num_classes").get<std::size_t>();
  c.net.num_stages = n.at("num_stages").get<std::size_t>();
  c.net.base_width = n.at("base_width").get<std::size_t>();
  c.net.height = n.at("height").get<std::size_t>();
  c.net.width = n.at("width").get<std::size_t>();
  const auto& l = j.at("loss");
  c.loss.beta = l.at("beta").get<double>();
  c.loss.gamma = l.at("gamma").get<double>();
  c.loss.eps_log = l.at("eps_log").get<double>();
  c.loss.dice_smooth = l.at("dice_smooth").get<double>();
  c.loss.fusion_ce_normalize = l.at("fusion_ce_normalize").get<bool>();
  c.loss.add_dice_mean = l.value("add_dice_mean", true);
  c.loss.activation = detail::parse_activation(l.at("activation").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.alpha_lr_scale = j.value("alpha_lr_scale", 1.0);
  c.final_prediction = detail::parse_final_mode(j.at("final_prediction").get<std::string>());
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.concat_reactivate = j.value("concat_reactivate", true);
  c.corrupt_stage = j.value("corrupt_stage", std::size_t{0});
  c.max_steps = j.value("max_steps", std::size_t{0});
  c.validate();
  return m;
}

inline void save_manifest(const RunManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << to_json(m).dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    return manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid manifest '" + path + "': " + e.what());
  }
}

}  // namespace lomix
