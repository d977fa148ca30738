#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lomix/array.hpp"
#include "lomix/tape.hpp"

namespace lomix {

namespace detail {

template <std::floating_point T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <std::floating_point T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <std::floating_point T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// The message expression is evaluated only on failure.
#define LOMIX_REQUIRE(cond, message)                        \
  do {                                                      \
    if (!(cond)) throw ::lomix::ShapeError(message);        \
  } while (false)

inline void require_rank3(const Shape& s, const char* op) {
  LOMIX_REQUIRE(s.size() == 3, std::string(op) + ": expected [C,H,W], got " + shape_string(s));
}

template <std::floating_point T>
T softplus_scalar(T x) {
  // ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <std::floating_point T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

enum class BinaryKind { Add, Sub, Mul, Div };

template <std::floating_point T>
Var<T> binary(BinaryKind kind, const Var<T>& a, const Var<T>& b) {
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool a_scalar = !same && av.rank() == 0;
  const bool b_scalar = !same && bv.rank() == 0;
  LOMIX_REQUIRE(same || a_scalar || b_scalar,
          "elementwise: shape mismatch " + shape_string(av.shape()) + " vs " +
              shape_string(bv.shape()));
  const Shape& out_shape = a_scalar ? bv.shape() : av.shape();
  const std::size_t n = shape_size(out_shape);
  Array<T> out(out_shape);
  auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  const char* name = "add";
  switch (kind) {
    case BinaryKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) + bi(i);
      break;
    case BinaryKind::Sub:
      name = "sub";
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) - bi(i);
      break;
    case BinaryKind::Mul:
      name = "mul";
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) * bi(i);
      break;
    case BinaryKind::Div:
      name = "div";
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) / bi(i);
      break;
  }
  return a.tape().record(
      name, std::move(out), {a, b},
      [a, b, kind, a_scalar, b_scalar](Tape<T>& tape, const Array<T>& y, const Array<T>& g) {
        const Array<T>& av = a.value();
        const Array<T>& bv = b.value();
        const std::size_t n = g.size();
        auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
        auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
        if (T* ga = tape.grad_data(a)) {
          for (std::size_t i = 0; i < n; ++i) {
            T d = g[i];
            if (kind == BinaryKind::Mul) d *= bi(i);
            if (kind == BinaryKind::Div) d /= bi(i);
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (T* gb = tape.grad_data(b)) {
          for (std::size_t i = 0; i < n; ++i) {
            T d = g[i];
            if (kind == BinaryKind::Sub) d = -d;
            if (kind == BinaryKind::Mul) d *= ai(i);
            if (kind == BinaryKind::Div) d *= -y[i] / bi(i);
            gb[b_scalar ? 0 : i] += d;
          }
        }
      });
}

/// Unary op with derivative expressed through input and output values.
template <std::floating_point T, typename Fwd, typename Deriv>
Var<T> unary(const char* name, const Var<T>& x, Fwd fwd, Deriv deriv) {
  const Array<T>& xv = x.value();
  Array<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape().record(name, std::move(out), {x},
                         [x, deriv](Tape<T>& tape, const Array<T>& y, const Array<T>& g) {
                           T* gx = tape.grad_data(x);
                           const Array<T>& xv = x.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             gx[i] += g[i] * deriv(xv[i], y[i]);
                           }
                         });
}

// Unfolds 3-D input patches into a [Cin*k*k, Ho*Wo] matrix (zero padding).
// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_columns(std::size_t w, std::size_t k_off, std::size_t stride,
                                                         std::size_t pad, std::size_t wo) {
  std::size_t lo = 0;
  if (k_off < pad) lo = (pad - k_off + stride - 1) / stride;
  if (w + pad <= k_off) return {0, 0};
  std::size_t hi = std::min(wo, (w - 1 + pad - k_off) / stride + 1);
  return {std::min(lo, hi), hi};
}

template <std::floating_point T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * plane;
        const auto [lo, hi] = valid_columns(w, kx, stride, pad, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          std::fill(dst, dst + lo, T{0});
          if (stride == 1) {
            if (hi > lo) std::copy(src + (lo + kx - pad), src + (hi + kx - pad), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + kx - pad];
          }
          std::fill(dst + hi, dst + wo, T{0});
        }
      }
    }
  }
}

template <std::floating_point T>
void col2im_add(const T* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* dx) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * plane;
        const auto [lo, hi] = valid_columns(w, kx, stride, pad, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = dx + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + kx - pad] += src[ox];
        }
      }
    }
  }
}

struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-centre sampling positions (align_corners = false).
inline LinearTaps linear_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic. Operands must share a shape, except that either
// side may be a rank-0 scalar.

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(detail::BinaryKind::Add, a, b);
}
template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(detail::BinaryKind::Sub, a, b);
}
template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(detail::BinaryKind::Mul, a, b);
}
template <std::floating_point T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary(detail::BinaryKind::Div, a, b);
}

template <std::floating_point T>
Var<T> scale(const Var<T>& x, T factor) {
  return detail::unary(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  return detail::unary(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T{1}; });
}

template <std::floating_point T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      "relu", x, [](T v) { return v > 0 ? v : T{0}; },
      [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      "sigmoid", x, [](T v) { return detail::sigmoid_scalar(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <std::floating_point T>
Var<T> softplus(const Var<T>& x) {
  return detail::unary(
      "softplus", x, [](T v) { return detail::softplus_scalar(v); },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// log(max(x, eps)); the gradient is zero where the clamp is active.
template <std::floating_point T>
Var<T> log_clamped(const Var<T>& x, T eps = T(1e-7)) {
  if (!(eps > 0 && eps < T(0.5))) throw std::invalid_argument("log_clamped: eps must be in (0, 0.5)");
  return detail::unary(
      "log_clamped", x, [eps](T v) { return std::log(std::max(v, eps)); },
      [eps](T v, T) { return v > eps ? T{1} / v : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions (fixed sequential order).

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
  const Array<T>& xv = x.value();
  T acc{0};
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return x.tape().record("sum", Array<T>::scalar(acc), {x},
                         [x](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
                           T* gx = tape.grad_data(x);
                           const std::size_t n = x.value().size();
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                         });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// [C,H,W] -> [C], summing each channel plane.
template <std::floating_point T>
Var<T> sum_spatial(const Var<T>& x) {
  const Array<T>& xv = x.value();
  detail::require_rank3(xv.shape(), "sum_spatial");
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Array<T> out(Shape{c});
  for (std::size_t k = 0; k < c; ++k) {
    T acc{0};
    for (std::size_t p = 0; p < plane; ++p) acc += xv[k * plane + p];
    out[k] = acc;
  }
  return x.tape().record("sum_spatial", std::move(out), {x},
                         [x, c, plane](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
                           T* gx = tape.grad_data(x);
                           for (std::size_t k = 0; k < c; ++k)
                             for (std::size_t p = 0; p < plane; ++p) gx[k * plane + p] += g[k];
                         });
}

// ---------------------------------------------------------------------------
// Channel-axis operations on [C,H,W] maps.

/// Softmax over the channel axis at every pixel.
template <std::floating_point T>
Var<T> channel_softmax(const Var<T>& x) {
  const Array<T>& xv = x.value();
  detail::require_rank3(xv.shape(), "channel_softmax");
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Array<T> out(xv.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    T m = xv[p];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, xv[k * plane + p]);
    T denom{0};
    for (std::size_t k = 0; k < c; ++k) {
      const T e = std::exp(xv[k * plane + p] - m);
      out[k * plane + p] = e;
      denom += e;
    }
    for (std::size_t k = 0; k < c; ++k) out[k * plane + p] /= denom;
  }
  return x.tape().record("channel_softmax", std::move(out), {x},
                         [x, c, plane](Tape<T>& tape, const Array<T>& y, const Array<T>& g) {
                           T* gx = tape.grad_data(x);
                           for (std::size_t p = 0; p < plane; ++p) {
                             T dot{0};
                             for (std::size_t k = 0; k < c; ++k)
                               dot += g[k * plane + p] * y[k * plane + p];
                             for (std::size_t k = 0; k < c; ++k)
                               gx[k * plane + p] += y[k * plane + p] * (g[k * plane + p] - dot);
                           }
                         });
}

/// x_c / sum_k x_k per pixel. The denominator is floored at the smallest
/// normal value so all-zero pixels stay finite.
template <std::floating_point T>
Var<T> channel_normalize(const Var<T>& x) {
  const Array<T>& xv = x.value();
  detail::require_rank3(xv.shape(), "channel_normalize");
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  constexpr T floor = std::numeric_limits<T>::min();
  Array<T> out(xv.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    T s{0};
    for (std::size_t k = 0; k < c; ++k) s += xv[k * plane + p];
    s = std::max(s, floor);
    for (std::size_t k = 0; k < c; ++k) out[k * plane + p] = xv[k * plane + p] / s;
  }
  return x.tape().record(
      "channel_normalize", std::move(out), {x},
      [x, c, plane](Tape<T>& tape, const Array<T>& y, const Array<T>& g) {
        T* gx = tape.grad_data(x);
        const Array<T>& xv = x.value();
        for (std::size_t p = 0; p < plane; ++p) {
          T s{0};
          for (std::size_t k = 0; k < c; ++k) s += xv[k * plane + p];
          if (s < floor) continue;
          T dot{0};
          for (std::size_t k = 0; k < c; ++k) dot += g[k * plane + p] * y[k * plane + p];
          for (std::size_t k = 0; k < c; ++k) gx[k * plane + p] += (g[k * plane + p] - dot) / s;
        }
      });
}

/// Stacks [C_i,H,W] maps along the channel axis in argument order.
template <std::floating_point T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  LOMIX_REQUIRE(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  detail::require_rank3(first, "concat_channels");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    LOMIX_REQUIRE(s.size() == 3 && s[1] == first[1] && s[2] == first[2],
                    "concat_channels: spatial mismatch " + shape_string(s) + " vs " +
                        shape_string(first));
    total += s[0];
  }
  Array<T> out(Shape{total, first[1], first[2]});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Array<T>& v = p.value();
    std::copy(v.raw(), v.raw() + v.size(), out.raw() + offset);
    offset += v.size();
  }
  return parts.front().tape().record(
      "concat_channels", std::move(out), parts,
      [parts](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t n = p.value().size();
          if (T* gp = tape.grad_data(p)) {
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
          }
          offset += n;
        }
      });
}

/// out[c,p] = x[c,p] * weights[k,p]: scales a [C,H,W] map by one channel of a
/// [K,H,W] per-pixel weight map.
template <std::floating_point T>
Var<T> weight_pixels(const Var<T>& x, const Var<T>& weights, std::size_t k) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = weights.value();
  detail::require_rank3(xv.shape(), "weight_pixels");
  detail::require_rank3(wv.shape(), "weight_pixels");
  LOMIX_REQUIRE(wv.dim(1) == xv.dim(1) && wv.dim(2) == xv.dim(2) && k < wv.dim(0),
                  "weight_pixels: weight map " + shape_string(wv.shape()) +
                      " incompatible with " + shape_string(xv.shape()));
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Array<T> out(xv.shape());
  const T* w = wv.raw() + k * plane;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = xv[ch * plane + p] * w[p];
  return x.tape().record(
      "weight_pixels", std::move(out), {x, weights},
      [x, weights, k, c, plane](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        const T* xv = x.value().raw();
        const T* w = weights.value().raw() + k * plane;
        if (T* gx = tape.grad_data(x)) {
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) gx[ch * plane + p] += g[ch * plane + p] * w[p];
        }
        if (T* gw = tape.grad_data(weights)) {
          T* gwk = gw + k * plane;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) gwk[p] += g[ch * plane + p] * xv[ch * plane + p];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution, pooling, resampling.

/// Pointwise channel mixing: out[c,p] = sum_k w[c,k] x[k,p] + b[c].
template <std::floating_point T>
Var<T> conv2d_1x1(const Var<T>& x, const Var<T>& w, std::optional<Var<T>> b = std::nullopt) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = w.value();
  detail::require_rank3(xv.shape(), "conv2d_1x1");
  LOMIX_REQUIRE(wv.rank() == 2 && wv.dim(1) == xv.dim(0),
                  "conv2d_1x1: weight " + shape_string(wv.shape()) + " incompatible with input " +
                      shape_string(xv.shape()));
  const std::size_t cin = xv.dim(0), cout = wv.dim(0), plane = xv.dim(1) * xv.dim(2);
  if (b) {
    LOMIX_REQUIRE(b->value().rank() == 1 && b->value().dim(0) == cout,
                    "conv2d_1x1: bias shape " + shape_string(b->value().shape()));
  }
  Array<T> out(Shape{cout, xv.dim(1), xv.dim(2)});
  {
    detail::MatrixMap<T> o(out.raw(), cout, plane);
    o.noalias() = detail::ConstMatrixMap<T>(wv.raw(), cout, cin) *
                  detail::ConstMatrixMap<T>(xv.raw(), cin, plane);
    if (b) {
      for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += b->value()[c];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  return x.tape().record(
      "conv2d_1x1", std::move(out), parents,
      [x, w, b, cin, cout, plane](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        detail::ConstMatrixMap<T> gm(g.raw(), cout, plane);
        if (T* gx = tape.grad_data(x)) {
          detail::MatrixMap<T>(gx, cin, plane).noalias() +=
              detail::ConstMatrixMap<T>(w.value().raw(), cout, cin).transpose() * gm;
        }
        if (T* gw = tape.grad_data(w)) {
          detail::MatrixMap<T>(gw, cout, cin).noalias() +=
              gm * detail::ConstMatrixMap<T>(x.value().raw(), cin, plane).transpose();
        }
        if (b) {
          if (T* gb = tape.grad_data(*b)) {
            for (std::size_t c = 0; c < cout; ++c) {
              T acc{0};
              for (std::size_t p = 0; p < plane; ++p) acc += g[c * plane + p];
              gb[c] += acc;
            }
          }
        }
      });
}

/// Square-kernel cross-correlation with zero padding; w is [Cout,Cin,k,k].
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::optional<Var<T>> b, std::size_t stride,
              std::size_t padding) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = w.value();
  detail::require_rank3(xv.shape(), "conv2d");
  LOMIX_REQUIRE(wv.rank() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3),
                  "conv2d: weight " + shape_string(wv.shape()) + " incompatible with input " +
                      shape_string(xv.shape()));
  LOMIX_REQUIRE(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  LOMIX_REQUIRE(h + 2 * padding >= k && wd + 2 * padding >= k, "conv2d: kernel larger than input");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;
  const std::size_t patch = cin * k * k, plane = ho * wo;
  if (b) {
    LOMIX_REQUIRE(b->value().rank() == 1 && b->value().dim(0) == cout,
                    "conv2d: bias shape " + shape_string(b->value().shape()));
  }
  std::shared_ptr<T[]> cols(new T[patch * plane]);
  detail::im2col(xv.raw(), cin, h, wd, k, stride, padding, ho, wo, cols.get());
  Array<T> out(Shape{cout, ho, wo});
  {
    detail::MatrixMap<T> o(out.raw(), cout, plane);
    o.noalias() = detail::ConstMatrixMap<T>(wv.raw(), cout, patch) *
                  detail::ConstMatrixMap<T>(cols.get(), patch, plane);
    if (b) {
      for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += b->value()[c];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  return x.tape().record(
      "conv2d", std::move(out), parents,
      [=](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        detail::ConstMatrixMap<T> gm(g.raw(), cout, plane);
        if (T* gw = tape.grad_data(w)) {
          detail::MatrixMap<T>(gw, cout, patch).noalias() +=
              gm * detail::ConstMatrixMap<T>(cols.get(), patch, plane).transpose();
        }
        if (T* gx = tape.grad_data(x)) {
          // The forward columns are no longer needed; reuse them for dcols.
          detail::MatrixMap<T>(cols.get(), patch, plane).noalias() =
              detail::ConstMatrixMap<T>(w.value().raw(), cout, patch).transpose() * gm;
          detail::col2im_add(cols.get(), cin, h, wd, k, stride, padding, ho, wo, gx);
        }
        if (b) {
          if (T* gb = tape.grad_data(*b)) {
            for (std::size_t c = 0; c < cout; ++c) {
              T acc{0};
              for (std::size_t p = 0; p < plane; ++p) acc += g[c * plane + p];
              gb[c] += acc;
            }
          }
        }
      });
}

template <std::floating_point T>
Var<T> conv2d_3x3(const Var<T>& x, const Var<T>& w, std::optional<Var<T>> b = std::nullopt,
                  std::size_t stride = 1, std::size_t padding = 1) {
  LOMIX_REQUIRE(w.value().rank() == 4 && w.value().dim(2) == 3 && w.value().dim(3) == 3,
                  "conv2d_3x3: weight must be [Cout,Cin,3,3], got " + shape_string(w.shape()));
  return conv2d(x, w, b, stride, padding);
}

/// 2x2 max pooling with stride 2; H and W must be even.
template <std::floating_point T>
Var<T> maxpool2x2(const Var<T>& x) {
  const Array<T>& xv = x.value();
  detail::require_rank3(xv.shape(), "maxpool2x2");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  LOMIX_REQUIRE(h % 2 == 0 && w % 2 == 0, "maxpool2x2: odd spatial size " + shape_string(xv.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Array<T> out(Shape{c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * xx;
        std::size_t best = base;
        for (std::size_t idx : {base + 1, base + w, base + w + 1})
          if (xv[idx] > xv[best]) best = idx;
        const std::size_t o = (ch * ho + y) * wo + xx;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return x.tape().record("maxpool2x2", std::move(out), {x},
                         [x, argmax = std::move(argmax)](Tape<T>& tape, const Array<T>&,
                                                         const Array<T>& g) {
                           T* gx = tape.grad_data(x);
                           for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                         });
}

/// Bilinear resize to [C,H,W] with half-pixel centres (align_corners = false).
template <std::floating_point T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  const Array<T>& xv = x.value();
  detail::require_rank3(xv.shape(), "upsample_bilinear");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  LOMIX_REQUIRE(out_h >= h && out_w >= w, "upsample_bilinear: target " + std::to_string(out_h) +
                                                "x" + std::to_string(out_w) +
                                                " smaller than source " + shape_string(xv.shape()));
  if (out_h == h && out_w == w) {
    return detail::unary(
        "upsample_bilinear", x, [](T v) { return v; }, [](T, T) { return T{1}; });
  }
  const detail::LinearTaps ty = detail::linear_taps(h, out_h);
  const detail::LinearTaps tx = detail::linear_taps(w, out_w);
  Array<T> out(Shape{c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = xv.raw() + ch * h * w;
    T* dst = out.raw() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = src + ty.lo[oy] * w;
      const T* r1 = src + ty.hi[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T top = (T{1} - fx) * r0[tx.lo[ox]] + fx * r0[tx.hi[ox]];
        const T bottom = (T{1} - fx) * r1[tx.lo[ox]] + fx * r1[tx.hi[ox]];
        dst[oy * out_w + ox] = (T{1} - fy) * top + fy * bottom;
      }
    }
  }
  return x.tape().record(
      "upsample_bilinear", std::move(out), {x},
      [x, c, h, w, out_h, out_w, ty, tx](Tape<T>& tape, const Array<T>&, const Array<T>& g) {
        T* gx = tape.grad_data(x);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T* dsrc = gx + ch * h * w;
          const T* gd = g.raw() + ch * out_h * out_w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            T* r0 = dsrc + ty.lo[oy] * w;
            T* r1 = dsrc + ty.hi[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const T fx = static_cast<T>(tx.frac[ox]);
              const T v = gd[oy * out_w + ox];
              r0[tx.lo[ox]] += (T{1} - fy) * (T{1} - fx) * v;
              r0[tx.hi[ox]] += (T{1} - fy) * fx * v;
              r1[tx.lo[ox]] += fy * (T{1} - fx) * v;
              r1[tx.hi[ox]] += fy * fx * v;
            }
          }
        }
      });
}

}  // namespace lomix
