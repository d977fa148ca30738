#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lomix/cmm.hpp"
#include "lomix/ops.hpp"
#include "lomix/params.hpp"

namespace lomix {

enum class WeightMode { Learned, Fixed };

struct LossConfig {
  double beta = 0.3;   // cross-entropy share
  double gamma = 0.7;  // DICE share
  double eps_log = 1e-7;
  double dice_smooth = 1.0;
  bool fusion_ce_normalize = true;
  bool add_dice_mean = true;  // DICE of an Add mutant uses the subset mean P/|S|
  Activation activation = Activation::Softmax;

  void validate() const {
    if (beta < 0 || gamma < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (std::abs(beta + gamma - 1.0) > 1e-12)
      throw std::invalid_argument("beta + gamma must equal 1");
    if (!(eps_log > 0 && eps_log < 0.5)) throw std::invalid_argument("eps_log must be in (0, 0.5)");
    if (!(dice_smooth >= 0)) throw std::invalid_argument("dice_smooth must be >= 0");
  }
};

/// softplus(alpha): strictly positive, independent per output.
template <std::floating_point T>
T weight_of(T alpha) {
  return detail::softplus_scalar(alpha);
}

template <std::floating_point T>
Var<T> weight_of(const Var<T>& alpha) {
  return softplus(alpha);
}

namespace detail {

// Labels are shared by every loss node of one sample rather than copied.
template <std::floating_point T>
using LabelRef = std::shared_ptr<const Array<T>>;

template <std::floating_point T>
void require_same_shape(const Array<T>& p, const Array<T>& y, const char* op) {
  if (p.shape() != y.shape())
    throw ShapeError(std::string(op) + ": prediction " + shape_string(p.shape()) + " vs label " +
                     shape_string(y.shape()));
  require_rank3(p.shape(), op);
}

template <std::floating_point T>
void require_label(const Array<T>& p, const Array<T>& y, Activation activation, const char* op) {
  require_same_shape(p, y, op);
  const std::size_t c = y.dim(0), plane = y.dim(1) * y.dim(2);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1})
      throw std::invalid_argument(std::string(op) + ": label is not one-hot");
  }
  if (activation == Activation::Softmax) {
    for (std::size_t px = 0; px < plane; ++px) {
      T s{0};
      for (std::size_t k = 0; k < c; ++k) s += y[k * plane + px];
      if (s != T{1}) throw std::invalid_argument(std::string(op) + ": label is not one-hot");
    }
  }
}

/// -(1/N) sum_p sum_c y log(max(q, eps)), N = pixel count.
template <std::floating_point T>
Var<T> nll_clamped(const Var<T>& q, const LabelRef<T>& label, T eps) {
  const Array<T>& qv = q.value();
  const Array<T>& y = *label;
  const std::size_t n = qv.dim(1) * qv.dim(2);
  T acc{0};
  for (std::size_t i = 0; i < qv.size(); ++i) {
    if (y[i] != T{0}) acc -= y[i] * std::log(std::max(qv[i], eps));
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return q.tape().record("cross_entropy", Array<T>::scalar(acc * inv_n), {q},
                         [q, label, eps, inv_n](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
                           T* gq = tape.grad_data(q);
                           const Array<T>& y = *label;
                           const Array<T>& qv = q.value();
                           for (std::size_t i = 0; i < qv.size(); ++i) {
                             if (y[i] != T{0} && qv[i] > eps) gq[i] -= g[0] * inv_n * y[i] / qv[i];
                           }
                         });
}

template <std::floating_point T>
Var<T> binary_nll_clamped(const Var<T>& p, const LabelRef<T>& label, T eps) {
  const Array<T>& pv = p.value();
  const Array<T>& y = *label;
  const std::size_t n = pv.dim(1) * pv.dim(2);
  T acc{0};
  for (std::size_t i = 0; i < pv.size(); ++i) {
    acc -= y[i] * std::log(std::max(pv[i], eps)) +
           (T{1} - y[i]) * std::log(std::max(T{1} - pv[i], eps));
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return p.tape().record(
      "binary_cross_entropy", Array<T>::scalar(acc * inv_n), {p},
      [p, label, eps, inv_n](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        T* gp = tape.grad_data(p);
        const Array<T>& y = *label;
        const Array<T>& pv = p.value();
        for (std::size_t i = 0; i < pv.size(); ++i) {
          T d{0};
          if (pv[i] > eps) d -= y[i] / pv[i];
          if (T{1} - pv[i] > eps) d += (T{1} - y[i]) / (T{1} - pv[i]);
          gp[i] += g[0] * inv_n * d;
        }
      });
}

}  // namespace detail

namespace detail {

template <std::floating_point T>
Var<T> ce_loss(const Var<T>& p, const LabelRef<T>& y, const LossConfig& cfg, bool normalize) {
  require_same_shape(p.value(), *y, "ce_loss");
  const T eps = static_cast<T>(cfg.eps_log);
  if (cfg.activation == Activation::Sigmoid) return binary_nll_clamped(p, y, eps);
  return nll_clamped(normalize ? channel_normalize(p) : p, y, eps);
}

template <std::floating_point T>
Var<T> dice_loss(const Var<T>& p, const LabelRef<T>& label, const LossConfig& cfg) {
  const Array<T>& pv = p.value();
  const Array<T>& y = *label;
  require_same_shape(pv, y, "dice_loss");
  const std::size_t c = pv.dim(0), plane = pv.dim(1) * pv.dim(2);
  const T smooth = static_cast<T>(cfg.dice_smooth);
  std::vector<T> inter(c, T{0}), denom(c, T{0});
  for (std::size_t k = 0; k < c; ++k) {
    T i_acc{0}, p_acc{0}, y_acc{0};
    for (std::size_t px = 0; px < plane; ++px) {
      const T pk = pv[k * plane + px], yk = y[k * plane + px];
      i_acc += pk * yk;
      p_acc += pk;
      y_acc += yk;
    }
    inter[k] = i_acc;
    denom[k] = p_acc + y_acc + smooth;
  }
  T score{0};
  for (std::size_t k = 0; k < c; ++k) score += (T{2} * inter[k] + smooth) / denom[k];
  const T loss = T{1} - score / static_cast<T>(c);
  return p.tape().record(
      "dice_loss", Array<T>::scalar(loss), {p},
      [p, label, inter, denom, c, plane, smooth](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        T* gp = tape.grad_data(p);
        const Array<T>& y = *label;
        const T scale = -g[0] / static_cast<T>(c);
        for (std::size_t k = 0; k < c; ++k) {
          const T d = denom[k];
          const T num = T{2} * inter[k] + smooth;
          for (std::size_t px = 0; px < plane; ++px) {
            gp[k * plane + px] += scale * (T{2} * y[k * plane + px] * d - num) / (d * d);
          }
        }
      });
}

template <std::floating_point T>
Var<T> seg_loss(const Var<T>& p, const LabelRef<T>& y, const LossConfig& cfg, bool normalize) {
  const T beta = static_cast<T>(cfg.beta), gamma = static_cast<T>(cfg.gamma);
  if (gamma == T{0}) return scale(ce_loss(p, y, cfg, normalize), beta);
  if (beta == T{0}) return scale(dice_loss(p, y, cfg), gamma);
  return add(scale(ce_loss(p, y, cfg, normalize), beta), scale(dice_loss(p, y, cfg), gamma));
}

template <std::floating_point T>
LabelRef<T> checked_label(const Array<T>& p, const Array<T>& y, const LossConfig& cfg, const char* op) {
  require_label(p, y, cfg.activation, op);
  return std::make_shared<const Array<T>>(y);
}

}  // namespace detail

/// Pixel-mean cross-entropy. In softmax mode with `normalize`, P is first
/// renormalised over classes (for fused maps whose channels do not sum to 1).
template <std::floating_point T>
Var<T> ce_loss(const Var<T>& p, const Array<T>& y, const LossConfig& cfg, bool normalize = false) {
  return detail::ce_loss(p, detail::checked_label(p.value(), y, cfg, "ce_loss"), cfg, normalize);
}

/// 1 - mean_c (2 sum P Y + s) / (sum P + sum Y + s), over all classes.
template <std::floating_point T>
Var<T> dice_loss(const Var<T>& p, const Array<T>& y, const LossConfig& cfg) {
  return detail::dice_loss(p, detail::checked_label(p.value(), y, cfg, "dice_loss"), cfg);
}

/// beta * CE + gamma * DICE.
template <std::floating_point T>
Var<T> seg_loss(const Var<T>& p, const Array<T>& y, const LossConfig& cfg, bool normalize = false) {
  cfg.validate();
  return detail::seg_loss(p, detail::checked_label(p.value(), y, cfg, "seg_loss"), cfg, normalize);
}

/// Whether a supervised output's cross-entropy consumes class-renormalised
/// values: Add and Mult mutants do not form per-pixel distributions.
inline bool ce_renormalizes(const OutputId& id, const LossConfig& cfg) {
  return cfg.fusion_ce_normalize && !id.is_original() &&
         (id.op() == FusionOp::Add || id.op() == FusionOp::Mult);
}

namespace detail {

template <std::floating_point T>
Var<T> output_loss(const SupervisedOutput<T>& out, const LabelRef<T>& y, const LossConfig& cfg) {
  if (out.id.is_original() || out.id.op() != FusionOp::Add)
    return seg_loss(out.map, y, cfg, ce_renormalizes(out.id, cfg));
  const T beta = static_cast<T>(cfg.beta), gamma = static_cast<T>(cfg.gamma);
  const Var<T> mean_map = scale(out.map, T{1} / static_cast<T>(out.id.subset().size()));
  std::optional<Var<T>> ce, dice;
  if (beta != T{0}) {
    // Sigmoid maps cannot be renormalised over channels; the subset mean
    // plays that role.
    if (cfg.activation == Activation::Sigmoid)
      ce = ce_loss(cfg.fusion_ce_normalize ? mean_map : out.map, y, cfg, false);
    else
      ce = ce_loss(out.map, y, cfg, cfg.fusion_ce_normalize);
  }
  if (gamma != T{0}) dice = dice_loss(cfg.add_dice_mean ? mean_map : out.map, y, cfg);
  if (!dice) return scale(*ce, beta);
  if (!ce) return scale(*dice, gamma);
  return add(scale(*ce, beta), scale(*dice, gamma));
}

}  // namespace detail

/// Per-output loss as used by the aggregate. Add maps sum to |S| per pixel,
/// so cross-entropy renormalises them and DICE sees the subset mean (unless
/// add_dice_mean is off, in which case DICE can go below zero).
template <std::floating_point T>
Var<T> output_loss(const SupervisedOutput<T>& out, const Array<T>& y, const LossConfig& cfg) {
  cfg.validate();
  return detail::output_loss(out, detail::checked_label(out.map.value(), y, cfg, "output_loss"), cfg);
}

/// Raw loss-weight parameters, one per supervised output, in supervision
/// order. Stored as scalar parameters named "alpha.<output id>".
template <std::floating_point T>
class AlphaBank {
 public:
  AlphaBank() = default;
  AlphaBank(const std::vector<OutputId>& ids, WeightMode mode) : mode_(mode) {
    for (const auto& id : ids) {
      ids_.push_back(id);
      params_.add("alpha." + id.str(), Array<T>::scalar(T{0}), /*decay=*/false);
    }
  }

  WeightMode mode() const { return mode_; }
  const std::vector<OutputId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  bool contains(const OutputId& id) const { return params_.contains("alpha." + id.str()); }
  std::size_t index_of(const OutputId& id) const {
    const std::string name = "alpha." + id.str();
    if (!params_.contains(name)) throw std::invalid_argument("no alpha for output " + id.str());
    return params_.index_of(name);
  }
  T alpha(const OutputId& id) const { return params_[index_of(id)].value[0]; }
  void set_alpha(const OutputId& id, T value) { params_[index_of(id)].value[0] = value; }

  /// Effective loss weight: softplus(alpha) when learned, 1 when fixed.
  T weight(const OutputId& id) const {
    return mode_ == WeightMode::Fixed ? T{1} : weight_of(alpha(id));
  }

 private:
  WeightMode mode_ = WeightMode::Learned;
  std::vector<OutputId> ids_;
  ParameterSet<T> params_;
};

/// Weighted sum over supervised outputs, accumulated in output order.
/// `alphas` holds the bank bound on the same tape (learned mode only).
template <std::floating_point T>
Var<T> total_loss(const std::vector<SupervisedOutput<T>>& outputs, const Array<T>& y,
                  const AlphaBank<T>& bank, const std::type_identity_t<BoundParameters<T>>* alphas,
                  const LossConfig& cfg) {
  if (outputs.empty()) throw std::invalid_argument("total_loss: no supervised outputs");
  cfg.validate();
  const auto label = detail::checked_label(outputs.front().map.value(), y, cfg, "total_loss");
  std::optional<Var<T>> acc;
  for (const auto& out : outputs) {
    const std::size_t ai = bank.index_of(out.id);
    Var<T> term = detail::output_loss(out, label, cfg);
    if (bank.mode() == WeightMode::Learned) {
      if (alphas == nullptr) throw std::invalid_argument("total_loss: learned mode needs bound alphas");
      term = mul(weight_of((*alphas)[ai]), term);
    }
    acc = acc ? add(*acc, term) : term;
  }
  return *acc;
}

}  // namespace lomix
