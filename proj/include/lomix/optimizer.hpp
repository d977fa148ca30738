#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lomix/array.hpp"

namespace lomix {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// A parameter tensor as seen by the optimizer.
template <std::floating_point T>
struct ParamSlot {
  Array<T>* value;
  const Array<T>* grad;
  bool decay;       // decoupled weight decay applies
  double lr_scale;  // per-group learning-rate multiplier
};

/// Adam with decoupled weight decay. State is positional: the slot list must
/// describe the same tensors, in the same order, on every step.
template <std::floating_point T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {
    if (!(config_.learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
  }

  const AdamWConfig& config() const { return config_; }
  std::size_t steps() const { return step_; }

  void step(const std::vector<ParamSlot<T>>& slots) {
    if (first_moment_.empty()) {
      for (const auto& s : slots) {
        first_moment_.emplace_back(std::vector<double>(s.value->size(), 0.0));
        second_moment_.emplace_back(std::vector<double>(s.value->size(), 0.0));
      }
    }
    if (slots.size() != first_moment_.size())
      throw std::invalid_argument("AdamW: parameter list changed between steps");
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const ParamSlot<T>& slot = slots[s];
      Array<T>& p = *slot.value;
      const Array<T>& g = *slot.grad;
      auto& m = first_moment_[s];
      auto& v = second_moment_[s];
      if (g.size() != p.size() || m.size() != p.size())
        throw std::invalid_argument("AdamW: state dimensions do not match parameters");
      const double lr = config_.learning_rate * slot.lr_scale;
      const double decay = slot.decay ? lr * config_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        double pi = static_cast<double>(p[i]);
        pi -= decay * pi;
        pi -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        p[i] = static_cast<T>(pi);
      }
    }
  }

 private:
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

}  // namespace lomix
