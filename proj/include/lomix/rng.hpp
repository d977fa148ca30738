#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lomix {

/// xorshift64* generator (Vigna 2016): shifts 12/25/27, output multiplier
/// 0x2545F4914F6CDD1D. Integer-only state transitions, so sequences are
/// identical on every platform for a given seed.
class Xorshift64Star {
 public:
  static constexpr std::uint64_t kMultiplier = 0x2545F4914F6CDD1DULL;

  explicit Xorshift64Star(std::uint64_t seed) : state_(mix(seed)) {}

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * kMultiplier;
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t state() const { return state_; }

 private:
  // splitmix64 finalizer; keeps seed 0 (and nearby seeds) away from the
  // all-zero fixed point.
  static std::uint64_t mix(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z == 0 ? 0x9E3779B97F4A7C15ULL : z;
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lomix
