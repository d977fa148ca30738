#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lomix/network.hpp"
#include "lomix/ops.hpp"
#include "lomix/params.hpp"

namespace lomix {

// Combinatorial mutation: fused predictions over every stage subset of
// size >= 2. Stage indices in this module are 0-based (0 = coarsest).

enum class FusionOp { Add, Mult, Concat, Awf };

inline constexpr std::array<FusionOp, 4> kAllFusionOps{FusionOp::Add, FusionOp::Mult,
                                                        FusionOp::Concat, FusionOp::Awf};

inline std::string to_string(FusionOp op) {
  switch (op) {
    case FusionOp::Add: return "add";
    case FusionOp::Mult: return "mult";
    case FusionOp::Concat: return "concat";
    case FusionOp::Awf: return "awf";
  }
  return "?";
}

inline FusionOp parse_fusion_op(const std::string& s) {
  if (s == "add") return FusionOp::Add;
  if (s == "mult" || s == "mul") return FusionOp::Mult;
  if (s == "concat" || s == "cat") return FusionOp::Concat;
  if (s == "awf" || s == "wf") return FusionOp::Awf;
  throw std::invalid_argument("unknown fusion operator '" + s + "'");
}

inline bool is_learnable(FusionOp op) { return op == FusionOp::Concat || op == FusionOp::Awf; }

/// Sorted, distinct stage indices; at least two members.
class SubsetSpec {
 public:
  explicit SubsetSpec(std::vector<std::size_t> stages) : stages_(std::move(stages)) {
    if (stages_.size() < 2) throw std::invalid_argument("subset needs at least two stages");
    for (std::size_t i = 1; i < stages_.size(); ++i) {
      if (stages_[i] <= stages_[i - 1])
        throw std::invalid_argument("subset stages must be strictly increasing");
    }
  }

  const std::vector<std::size_t>& stages() const { return stages_; }
  std::size_t size() const { return stages_.size(); }

  /// "0,1,3"
  std::string key() const {
    std::string s;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(stages_[i]);
    }
    return s;
  }

  friend bool operator==(const SubsetSpec&, const SubsetSpec&) = default;
  friend auto operator<=>(const SubsetSpec&, const SubsetSpec&) = default;

 private:
  std::vector<std::size_t> stages_;
};

/// All subsets of {0..L-1} with at least two members, ordered by
/// cardinality and then lexicographically.
inline std::vector<SubsetSpec> enumerate_subsets(std::size_t num_stages) {
  if (num_stages < 2 || num_stages > 5)
    throw std::invalid_argument("enumerate_subsets: L must be in [2, 5], got " +
                                std::to_string(num_stages));
  std::vector<std::vector<std::size_t>> all;
  for (unsigned mask = 0; mask < (1u << num_stages); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < num_stages; ++i)
      if (mask & (1u << i)) s.push_back(i);
    if (s.size() >= 2) all.push_back(std::move(s));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  std::vector<SubsetSpec> out;
  out.reserve(all.size());
  for (auto& s : all) out.emplace_back(std::move(s));
  return out;
}

/// Identity of one supervised prediction.
class OutputId {
 public:
  static OutputId original(std::size_t stage) { return OutputId(stage); }
  static OutputId mutant(FusionOp op, SubsetSpec subset) { return OutputId(op, std::move(subset)); }

  bool is_original() const { return !subset_.has_value(); }
  std::size_t stage() const { return stage_; }
  FusionOp op() const { return op_; }
  const SubsetSpec& subset() const { return *subset_; }

  /// "orig_3" or "awf_0,1,2,3".
  std::string str() const {
    if (is_original()) return "orig_" + std::to_string(stage_);
    return to_string(op_) + "_" + subset_->key();
  }

  /// Operator family label used in weight exports.
  std::string family() const {
    if (is_original()) return "Original";
    switch (op_) {
      case FusionOp::Add: return "Add";
      case FusionOp::Mult: return "Mult";
      case FusionOp::Concat: return "Concat";
      case FusionOp::Awf: return "Awf";
    }
    return "?";
  }

  static OutputId parse(const std::string& s) {
    const auto us = s.find('_');
    if (us == std::string::npos) throw std::invalid_argument("bad output id '" + s + "'");
    const std::string head = s.substr(0, us), tail = s.substr(us + 1);
    std::vector<std::size_t> idx;
    std::stringstream ss(tail);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
        throw std::invalid_argument("bad output id '" + s + "'");
      idx.push_back(std::stoul(item));
    }
    if (head == "orig") {
      if (idx.size() != 1) throw std::invalid_argument("bad output id '" + s + "'");
      return original(idx[0]);
    }
    return mutant(parse_fusion_op(head), SubsetSpec(std::move(idx)));
  }

  friend bool operator==(const OutputId& a, const OutputId& b) { return a.str() == b.str(); }

 private:
  explicit OutputId(std::size_t stage) : stage_(stage) {}
  OutputId(FusionOp op, SubsetSpec subset) : op_(op), subset_(std::move(subset)) {}

  std::size_t stage_ = 0;
  FusionOp op_ = FusionOp::Add;
  std::optional<SubsetSpec> subset_;
};

inline std::size_t subset_count(std::size_t num_stages) {
  return (std::size_t{1} << num_stages) - 1 - num_stages;
}

// ---------------------------------------------------------------------------
// Fusion operators on full-resolution probability maps [C,H,W].

namespace detail {

template <std::floating_point T>
void require_fusable(const std::vector<Var<T>>& maps, const char* op) {
  if (maps.size() < 2)
    throw std::invalid_argument(std::string(op) + ": subset needs at least two maps");
  for (const auto& m : maps) {
    if (m.shape() != maps.front().shape())
      throw ShapeError(std::string(op) + ": map shape mismatch " + shape_string(m.shape()) +
                       " vs " + shape_string(maps.front().shape()));
  }
  require_rank3(maps.front().shape(), op);
}

}  // namespace detail

/// Sum over the subset: the "OR"-like mix.
template <std::floating_point T>
Var<T> fuse_add(const std::vector<Var<T>>& maps) {
  detail::require_fusable(maps, "fuse_add");
  Var<T> out = maps[0];
  for (std::size_t i = 1; i < maps.size(); ++i) out = add(out, maps[i]);
  return out;
}

/// Hadamard product over the subset: the "AND"-like mix.
template <std::floating_point T>
Var<T> fuse_mult(const std::vector<Var<T>>& maps) {
  detail::require_fusable(maps, "fuse_mult");
  Var<T> out = maps[0];
  for (std::size_t i = 1; i < maps.size(); ++i) out = mul(out, maps[i]);
  return out;
}

/// Channel concatenation followed by a 1x1 mix W [C, |S|C] + b [C]. Raw
/// output; callers apply the task activation.
template <std::floating_point T>
Var<T> fuse_concat(const std::vector<Var<T>>& maps, const Var<T>& weight, const Var<T>& bias) {
  detail::require_fusable(maps, "fuse_concat");
  const std::size_t c = maps[0].shape()[0];
  const Shape expected{c, maps.size() * c};
  if (weight.shape() != expected || bias.shape() != Shape{c})
    throw ShapeError("fuse_concat: parameter shapes " + shape_string(weight.shape()) + "/" +
                     shape_string(bias.shape()) + ", expected " + shape_string(expected) + "/" +
                     shape_string(Shape{c}));
  return conv2d_1x1(concat_channels(maps), weight, std::optional<Var<T>>(bias));
}

/// Per-pixel attention weights over the |S| branches: softmax of
/// W' [|S|, |S|C] applied to the concatenated maps, plus bias [|S|].
template <std::floating_point T>
Var<T> awf_attention(const std::vector<Var<T>>& maps, const Var<T>& weight, const Var<T>& bias) {
  detail::require_fusable(maps, "fuse_awf");
  const std::size_t c = maps[0].shape()[0], k = maps.size();
  const Shape expected{k, k * c};
  if (weight.shape() != expected || bias.shape() != Shape{k})
    throw ShapeError("fuse_awf: parameter shapes " + shape_string(weight.shape()) + "/" +
                     shape_string(bias.shape()) + ", expected " + shape_string(expected) + "/" +
                     shape_string(Shape{k}));
  return channel_softmax(conv2d_1x1(concat_channels(maps), weight, std::optional<Var<T>>(bias)));
}

/// Attention-weighted sum of the subset's maps.
template <std::floating_point T>
Var<T> fuse_awf(const std::vector<Var<T>>& maps, const Var<T>& weight, const Var<T>& bias) {
  const Var<T> attention = awf_attention(maps, weight, bias);
  Var<T> out = weight_pixels(maps[0], attention, 0);
  for (std::size_t i = 1; i < maps.size(); ++i) out = add(out, weight_pixels(maps[i], attention, i));
  return out;
}

// ---------------------------------------------------------------------------

struct CmmConfig {
  std::size_t num_stages = 4;
  std::size_t num_classes = 2;
  std::vector<FusionOp> ops{kAllFusionOps.begin(), kAllFusionOps.end()};
  Activation activation = Activation::Softmax;
  bool concat_reactivate = true;  // apply the task activation after the Concat 1x1 mix
};

/// Ops in canonical order (Add, Mult, Concat, Awf), duplicates removed.
inline std::vector<FusionOp> canonical_ops(const std::vector<FusionOp>& ops) {
  std::vector<FusionOp> out;
  for (FusionOp op : kAllFusionOps)
    if (std::find(ops.begin(), ops.end(), op) != ops.end()) out.push_back(op);
  return out;
}

/// Learnable Concat / AWF parameters, one pair per (op, subset). Concat
/// starts as the block average (each C x C block = I / |S|); AWF starts at
/// zero, i.e. uniform attention.
template <std::floating_point T>
class FusionParams {
 public:
  FusionParams() = default;
  FusionParams(std::size_t num_stages, std::size_t num_classes, const std::vector<FusionOp>& ops) {
    const auto subsets = enumerate_subsets(num_stages);
    const std::size_t c = num_classes;
    for (FusionOp op : canonical_ops(ops)) {
      if (!is_learnable(op)) continue;
      for (const auto& s : subsets) {
        const std::string id = OutputId::mutant(op, s).str();
        const std::size_t k = s.size();
        if (op == FusionOp::Concat) {
          Array<T> w(Shape{c, k * c});
          for (std::size_t blk = 0; blk < k; ++blk)
            for (std::size_t i = 0; i < c; ++i) w[i * k * c + blk * c + i] = T{1} / static_cast<T>(k);
          params_.add("fusion." + id + ".w", std::move(w));
          params_.add("fusion." + id + ".b", Array<T>(Shape{c}));
        } else {
          params_.add("fusion." + id + ".w", Array<T>(Shape{k, k * c}));
          params_.add("fusion." + id + ".b", Array<T>(Shape{k}));
        }
      }
    }
  }

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  bool has(FusionOp op, const SubsetSpec& s) const {
    return params_.contains("fusion." + OutputId::mutant(op, s).str() + ".w");
  }
  /// Index of the weight parameter; the bias follows it.
  std::size_t weight_index(FusionOp op, const SubsetSpec& s) const {
    const std::string name = "fusion." + OutputId::mutant(op, s).str() + ".w";
    if (!params_.contains(name))
      throw std::invalid_argument("missing fusion parameters for " + OutputId::mutant(op, s).str());
    return params_.index_of(name);
  }

 private:
  ParameterSet<T> params_;
};

template <std::floating_point T>
struct SupervisedOutput {
  OutputId id;
  Var<T> map;
};

template <std::floating_point T>
Var<T> activate(const Var<T>& x, Activation activation) {
  return activation == Activation::Softmax ? channel_softmax(x) : sigmoid(x);
}

/// One fused map per (enabled op, subset): op order Add, Mult, Concat, Awf;
/// subsets in enumerate_subsets order.
template <std::floating_point T>
std::vector<SupervisedOutput<T>> generate_mutants(const std::vector<Var<T>>& maps,
                                                  const CmmConfig& cfg,
                                                  const FusionParams<T>& params,
                                                  const BoundParameters<T>& bound) {
  if (maps.size() != cfg.num_stages)
    throw std::invalid_argument("generate_mutants: expected " + std::to_string(cfg.num_stages) +
                                " maps, got " + std::to_string(maps.size()));
  const auto ops = canonical_ops(cfg.ops);
  if (ops.empty()) throw std::invalid_argument("generate_mutants: empty operator pool");
  const auto subsets = enumerate_subsets(cfg.num_stages);
  std::vector<SupervisedOutput<T>> out;
  out.reserve(ops.size() * subsets.size());
  for (FusionOp op : ops) {
    for (const auto& s : subsets) {
      std::vector<Var<T>> members;
      for (auto i : s.stages()) members.push_back(maps[i]);
      Var<T> fused;
      switch (op) {
        case FusionOp::Add: fused = fuse_add(members); break;
        case FusionOp::Mult: fused = fuse_mult(members); break;
        case FusionOp::Concat: {
          const std::size_t wi = params.weight_index(op, s);
          fused = fuse_concat(members, bound[wi], bound[wi + 1]);
          if (cfg.concat_reactivate) fused = activate(fused, cfg.activation);
          break;
        }
        case FusionOp::Awf: {
          const std::size_t wi = params.weight_index(op, s);
          fused = fuse_awf(members, bound[wi], bound[wi + 1]);
          break;
        }
      }
      out.push_back({OutputId::mutant(op, s), fused});
    }
  }
  return out;
}

}  // namespace lomix
