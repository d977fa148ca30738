#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lomix/cmm.hpp"
#include "lomix/network.hpp"
#include "lomix/ops.hpp"
#include "lomix/rng.hpp"
#include "lomix/supervision.hpp"

namespace lomix::gradcheck {

/// ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-12)
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, a = 0, n = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    a = std::max(a, std::abs(analytic[i]));
    n = std::max(n, std::abs(numeric[i]));
  }
  return diff / std::max({a, n, 1e-12});
}

using Inputs = std::vector<Array<double>>;
using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct Case {
  std::string name;
  std::function<Inputs(Xorshift64Star&)> sample;
  Builder build;
  std::size_t fixed_tail = 0;  // trailing inputs held constant (labels)
};

struct Options {
  std::size_t instances = 20;
  std::uint64_t seed = 20240601;
  double step = 1e-6;
};

struct Result {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0;
};

namespace detail {

// Scalar objective: the op output itself when scalar, otherwise its inner
// product with a fixed random projection.
inline double evaluate(const Case& c, const Inputs& inputs, std::optional<Array<double>>& projection,
                       Xorshift64Star& rng, std::vector<double>* grad) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    leaves.push_back(tape.leaf(inputs[i], i + c.fixed_tail < inputs.size()));
  Var<double> out = c.build(tape, leaves);
  if (!out.value().is_scalar()) {
    if (!projection) {
      Array<double> r(out.shape());
      for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);
      projection = std::move(r);
    }
    out = sum(mul(out, tape.constant(*projection)));
  }
  if (grad) {
    tape.backward(out);
    grad->clear();
    for (std::size_t i = 0; i + c.fixed_tail < leaves.size(); ++i)
    {
      const Array<double> g = tape.grad(leaves[i]);
      grad->insert(grad->end(), g.raw(), g.raw() + g.size());
    }
  }
  return out.value().item();
}

inline Array<double> uniform(Shape s, double lo, double hi, Xorshift64Star& rng) {
  Array<double> a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(lo, hi);
  return a;
}

// Magnitudes in [lo, hi] with random sign; keeps kinks out of reach of the
// finite-difference stencil.
inline Array<double> signed_away_from_zero(Shape s, double lo, double hi, Xorshift64Star& rng) {
  Array<double> a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return a;
}

// Random per-pixel class distribution [C,H,W].
inline Array<double> distribution(std::size_t c, std::size_t h, std::size_t w, Xorshift64Star& rng) {
  Array<double> a(Shape{c, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double total = 0;
    for (std::size_t k = 0; k < c; ++k) total += (a[k * h * w + p] = rng.uniform(0.05, 1.0));
    for (std::size_t k = 0; k < c; ++k) a[k * h * w + p] /= total;
  }
  return a;
}

inline Array<double> random_one_hot(std::size_t c, std::size_t h, std::size_t w, Xorshift64Star& rng) {
  Array<double> a(Shape{c, h, w});
  for (std::size_t p = 0; p < h * w; ++p) a[rng.below(c) * h * w + p] = 1.0;
  return a;
}

}  // namespace detail

/// Runs `instances` random draws of one case; returns the worst error.
inline Result run_case(const Case& c, const Options& opt) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : c.name) h = (h ^ ch) * 1099511628211ULL;
  Xorshift64Star rng(opt.seed ^ h);
  Result r{c.name, opt.instances, 0.0};
  for (std::size_t n = 0; n < opt.instances; ++n) {
    Inputs x = c.sample(rng);
    std::optional<Array<double>> projection;
    std::vector<double> analytic, numeric;
    detail::evaluate(c, x, projection, rng, &analytic);
    for (std::size_t k = 0; k + c.fixed_tail < x.size(); ++k) {
      auto& a = x[k];
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double saved = a[i];
        a[i] = saved + opt.step;
        const double up = detail::evaluate(c, x, projection, rng, nullptr);
        a[i] = saved - opt.step;
        const double down = detail::evaluate(c, x, projection, rng, nullptr);
        a[i] = saved;
        numeric.push_back((up - down) / (2.0 * opt.step));
      }
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  }
  return r;
}

/// Every differentiable operator, both losses, the softplus weighting and
/// the assembled multi-output objective, on 3 x 8 x 8 maps.
inline std::vector<Case> standard_cases() {
  using detail::distribution;
  using detail::random_one_hot;
  using detail::signed_away_from_zero;
  using detail::uniform;
  using V = std::vector<Var<double>>;
  constexpr std::size_t C = 3, H = 8, W = 8;
  const Shape map{C, H, W};
  std::vector<Case> cases;
  auto two = [map](double lo, double hi) {
    return [=](Xorshift64Star& g) { return Inputs{uniform(map, lo, hi, g), uniform(map, lo, hi, g)}; };
  };
  auto one = [map](double lo, double hi) {
    return [=](Xorshift64Star& g) { return Inputs{uniform(map, lo, hi, g)}; };
  };

  cases.push_back({"add", two(-1, 1), [](Tape<double>&, const V& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", two(-1, 1), [](Tape<double>&, const V& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", two(-1, 1), [](Tape<double>&, const V& v) { return mul(v[0], v[1]); }});
  cases.push_back({"div", two(0.5, 2), [](Tape<double>&, const V& v) { return div(v[0], v[1]); }});
  cases.push_back({"mul_scalar_broadcast",
                   [map](Xorshift64Star& g) { return Inputs{uniform(map, -1, 1, g), uniform({}, 0.5, 2, g)}; },
                   [](Tape<double>&, const V& v) { return mul(v[1], v[0]); }});
  cases.push_back({"scale", one(-1, 1), [](Tape<double>&, const V& v) { return scale(v[0], 1.7); }});
  cases.push_back({"add_scalar", one(-1, 1), [](Tape<double>&, const V& v) { return add_scalar(v[0], 0.3); }});
  cases.push_back({"relu", [map](Xorshift64Star& g) { return Inputs{signed_away_from_zero(map, 0.05, 1, g)}; },
                   [](Tape<double>&, const V& v) { return relu(v[0]); }});
  cases.push_back({"sigmoid", one(-3, 3), [](Tape<double>&, const V& v) { return sigmoid(v[0]); }});
  cases.push_back({"softplus", one(-3, 3), [](Tape<double>&, const V& v) { return softplus(v[0]); }});
  cases.push_back({"exp", one(-2, 2), [](Tape<double>&, const V& v) { return exp(v[0]); }});
  cases.push_back({"log_clamped", one(0.05, 1), [](Tape<double>&, const V& v) { return log_clamped(v[0]); }});
  cases.push_back({"sum", one(-1, 1), [](Tape<double>&, const V& v) { return sum(v[0]); }});
  cases.push_back({"mean", one(-1, 1), [](Tape<double>&, const V& v) { return mean(v[0]); }});
  cases.push_back({"sum_spatial", one(-1, 1), [](Tape<double>&, const V& v) { return sum_spatial(v[0]); }});
  cases.push_back({"channel_softmax", one(-3, 3), [](Tape<double>&, const V& v) { return channel_softmax(v[0]); }});
  cases.push_back({"channel_normalize", one(0.1, 2),
                   [](Tape<double>&, const V& v) { return channel_normalize(v[0]); }});
  cases.push_back({"concat_channels", two(-1, 1),
                   [](Tape<double>&, const V& v) { return concat_channels<double>({v[0], v[1]}); }});
  cases.push_back({"weight_pixels",
                   [map](Xorshift64Star& g) { return Inputs{uniform(map, -1, 1, g), uniform({2, H, W}, 0, 1, g)}; },
                   [](Tape<double>&, const V& v) { return weight_pixels(v[0], v[1], 1); }});
  cases.push_back({"conv2d_1x1",
                   [map](Xorshift64Star& g) {
                     return Inputs{uniform(map, -1, 1, g), uniform({4, C}, -1, 1, g), uniform({4}, -1, 1, g)};
                   },
                   [](Tape<double>&, const V& v) { return conv2d_1x1(v[0], v[1], std::optional(v[2])); }});
  cases.push_back({"conv2d_3x3",
                   [map](Xorshift64Star& g) {
                     return Inputs{uniform(map, -1, 1, g), uniform({2, C, 3, 3}, -1, 1, g), uniform({2}, -1, 1, g)};
                   },
                   [](Tape<double>&, const V& v) { return conv2d_3x3(v[0], v[1], std::optional(v[2])); }});
  cases.push_back({"conv2d_stride2",
                   [map](Xorshift64Star& g) {
                     return Inputs{uniform(map, -1, 1, g), uniform({2, C, 3, 3}, -1, 1, g), uniform({2}, -1, 1, g)};
                   },
                   [](Tape<double>&, const V& v) { return conv2d(v[0], v[1], std::optional(v[2]), 2, 1); }});
  cases.push_back({"maxpool2x2", one(-1, 1), [](Tape<double>&, const V& v) { return maxpool2x2(v[0]); }});
  cases.push_back({"upsample_bilinear",
                   [](Xorshift64Star& g) { return Inputs{uniform({C, 4, 4}, -1, 1, g)}; },
                   [](Tape<double>&, const V& v) { return upsample_bilinear(v[0], 8, 8); }});

  // Fusion operators over a three-member subset.
  auto maps3 = [](Xorshift64Star& g) {
    return Inputs{distribution(C, H, W, g), distribution(C, H, W, g), distribution(C, H, W, g)};
  };
  cases.push_back({"fuse_add", maps3, [](Tape<double>&, const V& v) { return fuse_add<double>({v[0], v[1], v[2]}); }});
  cases.push_back({"fuse_mult", maps3, [](Tape<double>&, const V& v) { return fuse_mult<double>({v[0], v[1], v[2]}); }});
  cases.push_back({"fuse_concat",
                   [maps3](Xorshift64Star& g) {
                     Inputs x = maps3(g);
                     x.push_back(uniform({C, 3 * C}, -1, 1, g));
                     x.push_back(uniform({C}, -1, 1, g));
                     return x;
                   },
                   [](Tape<double>&, const V& v) { return fuse_concat<double>({v[0], v[1], v[2]}, v[3], v[4]); }});
  cases.push_back({"fuse_awf",
                   [maps3](Xorshift64Star& g) {
                     Inputs x = maps3(g);
                     x.push_back(uniform({3, 3 * C}, -1, 1, g));
                     x.push_back(uniform({3}, -1, 1, g));
                     return x;
                   },
                   [](Tape<double>&, const V& v) { return fuse_awf<double>({v[0], v[1], v[2]}, v[3], v[4]); }});

  // Losses. Labels are drawn per instance but held constant.
  auto loss_case = [&](std::string name, std::function<Var<double>(const Var<double>&, const Array<double>&)> f,
                       double lo, double hi, bool normalized_input) {
    cases.push_back(
        {std::move(name),
         [=](Xorshift64Star& g) {
           Inputs x{normalized_input ? distribution(C, H, W, g) : uniform(Shape{C, H, W}, lo, hi, g)};
           x.push_back(random_one_hot(C, H, W, g));
           return x;
         },
         [f](Tape<double>&, const V& v) { return f(v[0], v[1].value()); }, 1});
  };
  LossConfig softmax_cfg;
  LossConfig sigmoid_cfg;
  sigmoid_cfg.activation = Activation::Sigmoid;
  loss_case("ce_loss", [=](const Var<double>& p, const Array<double>& y) { return ce_loss(p, y, softmax_cfg); },
            0, 1, true);
  loss_case("ce_loss_normalized",
            [=](const Var<double>& p, const Array<double>& y) { return ce_loss(p, y, softmax_cfg, true); }, 0.1, 2,
            false);
  loss_case("ce_loss_binary",
            [=](const Var<double>& p, const Array<double>& y) { return ce_loss(p, y, sigmoid_cfg); }, 0.05, 0.95,
            false);
  loss_case("dice_loss", [=](const Var<double>& p, const Array<double>& y) { return dice_loss(p, y, softmax_cfg); },
            0, 1, true);
  loss_case("seg_loss", [=](const Var<double>& p, const Array<double>& y) { return seg_loss(p, y, softmax_cfg); },
            0, 1, true);

  cases.push_back({"softplus_weighted_loss",
                   [](Xorshift64Star& g) {
                     return Inputs{uniform({}, -3, 3, g), distribution(C, H, W, g), random_one_hot(C, H, W, g)};
                   },
                   [softmax_cfg](Tape<double>&, const V& v) {
                     return mul(weight_of(v[0]), seg_loss(v[1], v[2].value(), softmax_cfg));
                   },
                   1});

  // Full objective: four stage logits -> softmax -> every mutant of every
  // operator -> learned softplus weighting.
  constexpr std::size_t L = 4;
  cases.push_back(
      {"total_loss",
       [](Xorshift64Star& g) {
         Inputs x;
         for (std::size_t i = 0; i < L; ++i) x.push_back(uniform({C, H, W}, -2, 2, g));
         FusionParams<double> fp(L, C, {kAllFusionOps.begin(), kAllFusionOps.end()});
         for (const auto& p : fp.parameters()) x.push_back(uniform(p.value.shape(), -0.5, 0.5, g));
         for (std::size_t i = 0; i < L + 4 * subset_count(L); ++i) x.push_back(uniform({}, -1, 1, g));
         x.push_back(random_one_hot(C, H, W, g));
         return x;
       },
       [](Tape<double>&, const V& v) {
         CmmConfig cmm;
         cmm.num_stages = L;
         cmm.num_classes = C;
         FusionParams<double> fp(L, C, cmm.ops);
         std::size_t at = 0;
         std::vector<Var<double>> maps;
         for (std::size_t i = 0; i < L; ++i) maps.push_back(channel_softmax(v[at++]));
         BoundParameters<double> fusion;
         for (std::size_t i = 0; i < fp.parameters().size(); ++i) fusion.vars.push_back(v[at++]);
         std::vector<SupervisedOutput<double>> outs;
         std::vector<OutputId> ids;
         for (std::size_t i = 0; i < L; ++i) outs.push_back({OutputId::original(i), maps[i]});
         for (auto& m : generate_mutants(maps, cmm, fp, fusion)) outs.push_back(std::move(m));
         for (const auto& o : outs) ids.push_back(o.id);
         AlphaBank<double> bank(ids, WeightMode::Learned);
         BoundParameters<double> alphas;
         for (std::size_t i = 0; i < ids.size(); ++i) alphas.vars.push_back(v[at++]);
         return total_loss(outs, v[at].value(), bank, &alphas, LossConfig{});
       },
       1});
  return cases;
}

struct Report {
  std::vector<Result> results;
  double tolerance = 1e-6;

  bool passed() const {
    return std::all_of(results.begin(), results.end(),
                       [&](const Result& r) { return r.max_rel_error < tolerance; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& r : results)
      if (!(r.max_rel_error < tolerance)) out.push_back(r.name);
    return out;
  }
  std::string text() const {
    std::string out;
    char buf[160];
    for (const auto& r : results) {
      std::snprintf(buf, sizeof buf, "%-24s instances=%-3zu max_rel_error=%.3e  %s\n", r.name.c_str(),
                    r.instances, r.max_rel_error, r.max_rel_error < tolerance ? "ok" : "FAIL");
      out += buf;
    }
    return out;
  }
};

inline Report run_all(double tolerance = 1e-6, const Options& opt = {}) {
  Report rep;
  rep.tolerance = tolerance;
  for (const auto& c : standard_cases()) rep.results.push_back(run_case(c, opt));
  return rep;
}

}  // namespace lomix::gradcheck
