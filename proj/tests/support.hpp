#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lomix/array.hpp"
#include "lomix/ops.hpp"
#include "lomix/rng.hpp"
#include "lomix/tape.hpp"

namespace lomix::test {

template <std::floating_point T>
Array<T> random_array(Shape s, double lo, double hi, Xorshift64Star& rng) {
  Array<T> a(std::move(s));
  for (auto& v : a.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return a;
}

/// Random per-pixel class distributions [C,H,W], entries bounded away from 0.
template <std::floating_point T>
Array<T> random_distribution(std::size_t c, std::size_t h, std::size_t w, Xorshift64Star& rng) {
  Array<T> a(Shape{c, h, w});
  const std::size_t plane = h * w;
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += (a[k * plane + p] = static_cast<T>(rng.uniform(0.05, 1.0)));
    for (std::size_t k = 0; k < c; ++k) a[k * plane + p] = static_cast<T>(a[k * plane + p] / s);
  }
  return a;
}

template <std::floating_point T>
Array<T> random_one_hot(std::size_t c, std::size_t h, std::size_t w, Xorshift64Star& rng) {
  Array<T> a(Shape{c, h, w});
  for (std::size_t p = 0; p < h * w; ++p) a[rng.below(c) * h * w + p] = T{1};
  return a;
}

/// Scalar function of one array, rebuilt on a fresh tape for every call.
template <std::floating_point T>
using ScalarFn = std::function<Var<T>(Tape<T>&, const Var<T>&)>;

template <std::floating_point T>
Array<T> analytic_grad(const ScalarFn<T>& f, const Array<T>& x) {
  Tape<T> tape;
  Var<T> v = tape.leaf(x);
  tape.backward(f(tape, v));
  return tape.grad(v);
}

template <std::floating_point T>
Array<T> numeric_grad(const ScalarFn<T>& f, const Array<T>& x, double h) {
  Array<T> g(x.shape());
  Array<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + h);
    Tape<T> t1;
    const double up = static_cast<double>(f(t1, t1.constant(probe)).value().item());
    probe[i] = static_cast<T>(orig - h);
    Tape<T> t2;
    const double down = static_cast<double>(f(t2, t2.constant(probe)).value().item());
    probe[i] = orig;
    g[i] = static_cast<T>((up - down) / (2 * h));
  }
  return g;
}

/// max |a - n| / max(max|a|, max|n|, tiny)
template <std::floating_point T>
double rel_error(const Array<T>& a, const Array<T>& n) {
  double diff = 0, am = 0, nm = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(n[i])));
    am = std::max(am, std::abs(static_cast<double>(a[i])));
    nm = std::max(nm, std::abs(static_cast<double>(n[i])));
  }
  return diff / std::max({am, nm, 1e-12});
}

/// Fixed random projection turning an array-valued op into a scalar loss.
template <std::floating_point T>
Var<T> project(Tape<T>& tape, const Var<T>& y, std::uint64_t seed) {
  Xorshift64Star rng(seed);
  Array<T> r = random_array<T>(y.shape(), -1.0, 1.0, rng);
  return sum(mul(y, tape.constant(std::move(r))));
}

}  // namespace lomix::test
