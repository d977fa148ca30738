#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lomix/array.hpp"
#include "lomix/ops.hpp"
#include "lomix/params.hpp"
#include "lomix/rng.hpp"
#include "lomix/tape.hpp"

namespace lomix {

enum class Activation { Softmax, Sigmoid };
enum class FinalPredictionMode { LastStage, SumAll };

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t num_stages = 4;  // L
  std::size_t base_width = 8;
  std::size_t height = 64;
  std::size_t width = 64;

  void validate() const {
    if (num_stages < 2 || num_stages > 5)
      throw std::invalid_argument("num_stages must be in [2, 5], got " + std::to_string(num_stages));
    if (in_channels == 0 || num_classes == 0 || base_width == 0)
      throw std::invalid_argument("channel counts must be positive");
    const std::size_t factor = std::size_t{1} << (num_stages - 1);
    if (height % factor != 0 || width % factor != 0 || height < 2 * factor || width < 2 * factor)
      throw std::invalid_argument("input size " + std::to_string(height) + "x" +
                                  std::to_string(width) + " must be a multiple of " +
                                  std::to_string(factor) + " and at least " +
                                  std::to_string(2 * factor));
  }

  /// Feature width at encoder level k (level 0 is full resolution).
  std::size_t level_width(std::size_t level) const { return base_width << level; }

  /// Spatial size of decoder stage `stage` (1-based, coarse to fine).
  std::size_t stage_height(std::size_t stage) const { return height >> (num_stages - stage); }
  std::size_t stage_width(std::size_t stage) const { return width >> (num_stages - stage); }
};

/// Replaces the input of one stage's prediction head with seeded Gaussian
/// noise, simulating an uninformative decoder stage.
struct HeadCorruption {
  std::size_t stage = 0;  // 1-based; 0 disables
  Xorshift64Star* noise = nullptr;
};

/// Raw logits, one per decoder stage, coarse (stage 1) to fine (stage L).
template <std::floating_point T>
using StageLogits = std::vector<Var<T>>;

/// Small U-shaped encoder-decoder: per level two 3x3 conv + ReLU blocks,
/// 2x max-pool downsampling, bilinear upsampling with skip concatenation in
/// the decoder, and a 1x1 head at every decoder stage.
template <std::floating_point T>
class UNet {
 public:
  explicit UNet(UNetConfig config, std::uint64_t seed = 0, bool zero_heads = false)
      : config_(config) {
    config_.validate();
    Xorshift64Star rng(seed);
    const std::size_t levels = config_.num_stages;
    for (std::size_t k = 0; k < levels; ++k) {
      const std::size_t in = k == 0 ? config_.in_channels : config_.level_width(k - 1);
      add_block("enc." + std::to_string(k), in, config_.level_width(k), rng);
    }
    for (std::size_t stage = 2; stage <= levels; ++stage) {
      const std::size_t level = levels - stage;
      const std::size_t in = config_.level_width(level + 1) + config_.level_width(level);
      add_block("dec." + std::to_string(stage), in, config_.level_width(level), rng);
    }
    for (std::size_t stage = 1; stage <= levels; ++stage) {
      const std::size_t in = config_.level_width(levels - stage);
      const std::string name = "head." + std::to_string(stage);
      Array<T> w(Shape{config_.num_classes, in});
      if (!zero_heads) uniform_fill(w, 1.0 / std::sqrt(static_cast<double>(in)), rng);
      params_.add(name + ".w", std::move(w));
      params_.add(name + ".b", Array<T>(Shape{config_.num_classes}));
    }
  }

  const UNetConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  /// Forward pass with parameters already bound on the image's tape.
  StageLogits<T> forward(const Var<T>& image, const BoundParameters<T>& bound,
                         HeadCorruption corruption = {}) const {
    const Shape expected{config_.in_channels, config_.height, config_.width};
    if (image.shape() != expected)
      throw ShapeError("UNet: image shape " + shape_string(image.shape()) + ", expected " +
                       shape_string(expected));
    const std::size_t levels = config_.num_stages;
    std::size_t cursor = 0;
    auto next = [&]() -> const Var<T>& { return bound[cursor++]; };
    auto block = [&](Var<T> x) {
      const auto& wa = next();
      const auto& ba = next();
      x = relu(conv2d_3x3(x, wa, std::optional<Var<T>>(ba)));
      const auto& wb = next();
      const auto& bb = next();
      return relu(conv2d_3x3(x, wb, std::optional<Var<T>>(bb)));
    };

    std::vector<Var<T>> skips;
    Var<T> x = image;
    for (std::size_t k = 0; k < levels; ++k) {
      if (k > 0) x = maxpool2x2(x);
      x = block(x);
      skips.push_back(x);
    }
    std::vector<Var<T>> features{x};
    for (std::size_t stage = 2; stage <= levels; ++stage) {
      const Var<T>& skip = skips[levels - stage];
      Var<T> up = upsample_bilinear(features.back(), skip.shape()[1], skip.shape()[2]);
      features.push_back(block(concat_channels<T>({up, skip})));
    }
    StageLogits<T> logits;
    for (std::size_t stage = 1; stage <= levels; ++stage) {
      const auto& w = next();
      const auto& b = next();
      Var<T> f = features[stage - 1];
      if (corruption.stage == stage && corruption.noise != nullptr) {
        Array<T> noise(f.shape());
        for (auto& v : noise.data()) v = static_cast<T>(corruption.noise->normal());
        f = image.tape().constant(std::move(noise));
      }
      logits.push_back(conv2d_1x1(f, w, std::optional<Var<T>>(b)));
    }
    return logits;
  }

  /// Inference on a detached tape: logits for every stage.
  std::vector<Array<T>> predict_logits(const Array<T>& image) const {
    Tape<T> tape;
    const auto bound = bind(tape, params_, false);
    const auto logits = forward(tape.constant(image), bound);
    std::vector<Array<T>> out;
    for (const auto& z : logits) out.push_back(z.value());
    return out;
  }

 private:
  void add_block(const std::string& prefix, std::size_t in, std::size_t out, Xorshift64Star& rng) {
    add_conv(prefix + ".conv_a", in, out, rng);
    add_conv(prefix + ".conv_b", out, out, rng);
  }

  void add_conv(const std::string& name, std::size_t in, std::size_t out, Xorshift64Star& rng) {
    Array<T> w(Shape{out, in, 3, 3});
    // He-uniform: bound sqrt(6 / fan_in).
    uniform_fill(w, std::sqrt(6.0 / static_cast<double>(in * 9)), rng);
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Array<T>(Shape{out}));
  }

  static void uniform_fill(Array<T>& a, double bound, Xorshift64Star& rng) {
    for (auto& v : a.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  UNetConfig config_;
  ParameterSet<T> params_;
};

/// Upsamples each stage's logits to full resolution and applies the task
/// activation.
template <std::floating_point T>
std::vector<Var<T>> to_probability_maps(const StageLogits<T>& stages, Activation activation,
                                        std::size_t height, std::size_t width) {
  std::vector<Var<T>> maps;
  maps.reserve(stages.size());
  for (const auto& z : stages) {
    Var<T> up = upsample_bilinear(z, height, width);
    maps.push_back(activation == Activation::Softmax ? channel_softmax(up) : sigmoid(up));
  }
  return maps;
}

template <std::floating_point T>
Array<T> final_prediction(const std::vector<Array<T>>& maps, FinalPredictionMode mode) {
  if (maps.empty()) throw std::invalid_argument("final_prediction: empty map list");
  if (mode == FinalPredictionMode::LastStage) return maps.back();
  Array<T> out = maps.front();
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].shape() != out.shape()) throw ShapeError("final_prediction: shape mismatch");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += maps[i][j];
  }
  return out;
}

/// Full-resolution activated maps for inference (no tape retained).
template <std::floating_point T>
std::vector<Array<T>> probability_maps(const UNet<T>& net, const Array<T>& image,
                                       Activation activation) {
  Tape<T> tape;
  const auto bound = bind(tape, net.parameters(), false);
  const auto logits = net.forward(tape.constant(image), bound);
  const auto maps = to_probability_maps(logits, activation, net.config().height, net.config().width);
  std::vector<Array<T>> out;
  for (const auto& m : maps) out.push_back(m.value());
  return out;
}

/// The deployed prediction path: only the network parameters participate.
template <std::floating_point T>
Array<T> infer(const UNet<T>& net, const Array<T>& image, Activation activation,
               FinalPredictionMode mode = FinalPredictionMode::LastStage) {
  if (mode == FinalPredictionMode::LastStage) {
    Tape<T> tape;
    const auto bound = bind(tape, net.parameters(), false);
    const auto logits = net.forward(tape.constant(image), bound);
    const auto maps =
        to_probability_maps<T>({logits.back()}, activation, net.config().height, net.config().width);
    return maps.front().value();
  }
  return final_prediction(probability_maps(net, image, activation), mode);
}

/// Per-pixel argmax over channels; for a single sigmoid channel, threshold 0.5.
template <std::floating_point T>
std::vector<std::uint8_t> argmax_classes(const Array<T>& prediction, Activation activation) {
  const std::size_t c = prediction.dim(0), plane = prediction.dim(1) * prediction.dim(2);
  std::vector<std::uint8_t> out(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    if (activation == Activation::Sigmoid && c == 1) {
      out[p] = prediction[p] > T(0.5) ? 1 : 0;
      continue;
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (prediction[k * plane + p] > prediction[best * plane + p]) best = k;
    out[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace lomix
