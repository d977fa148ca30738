#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lomix/array.hpp"

namespace lomix {

/// Per-class overlap scores. Means average the foreground classes (1..C-1).
struct ClassScores {
  std::vector<double> dice;
  std::vector<double> iou;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
};

namespace detail {

inline void finish_means(ClassScores& s) {
  const std::size_t c = s.dice.size();
  s.mean_dice = s.mean_iou = 0.0;
  if (c < 2) return;
  for (std::size_t k = 1; k < c; ++k) {
    s.mean_dice += s.dice[k];
    s.mean_iou += s.iou[k];
  }
  s.mean_dice /= static_cast<double>(c - 1);
  s.mean_iou /= static_cast<double>(c - 1);
}

}  // namespace detail

/// Hard DICE / IoU of a class-index prediction against a one-hot label.
/// Both sets empty scores 1.
template <std::floating_point T>
ClassScores dice_score(const std::vector<std::uint8_t>& pred, const Array<T>& label) {
  if (label.rank() != 3) throw ShapeError("dice_score: label must be [C,H,W]");
  const std::size_t c = label.dim(0), plane = label.dim(1) * label.dim(2);
  if (pred.size() != plane)
    throw ShapeError("dice_score: prediction has " + std::to_string(pred.size()) +
                     " pixels, label has " + std::to_string(plane));
  ClassScores s;
  s.dice.resize(c);
  s.iou.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t inter = 0, p_count = 0, y_count = 0;
    for (std::size_t p = 0; p < plane; ++p) {
      const bool in_pred = pred[p] == k;
      const bool in_label = label[k * plane + p] != T{0};
      inter += in_pred && in_label;
      p_count += in_pred;
      y_count += in_label;
    }
    const std::size_t uni = p_count + y_count - inter;
    if (p_count + y_count == 0) {
      s.dice[k] = s.iou[k] = 1.0;
    } else {
      s.dice[k] = 2.0 * static_cast<double>(inter) / static_cast<double>(p_count + y_count);
      s.iou[k] = static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  detail::finish_means(s);
  return s;
}

/// Arithmetic mean of per-sample scores, class by class.
inline ClassScores average_scores(const std::vector<ClassScores>& per_sample) {
  if (per_sample.empty()) throw std::invalid_argument("average_scores: no samples");
  const std::size_t c = per_sample.front().dice.size();
  ClassScores s;
  s.dice.assign(c, 0.0);
  s.iou.assign(c, 0.0);
  for (const auto& x : per_sample) {
    if (x.dice.size() != c) throw ShapeError("average_scores: class count mismatch");
    for (std::size_t k = 0; k < c; ++k) {
      s.dice[k] += x.dice[k];
      s.iou[k] += x.iou[k];
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    s.dice[k] /= static_cast<double>(per_sample.size());
    s.iou[k] /= static_cast<double>(per_sample.size());
  }
  detail::finish_means(s);
  return s;
}

}  // namespace lomix
