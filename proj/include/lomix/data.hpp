#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lomix/array.hpp"
#include "lomix/params.hpp"
#include "lomix/rng.hpp"

namespace lomix {

/// Image [Din,H,W] in [0,1] plus one-hot label [C,H,W]. Images hold
/// float-representable values so the on-disk f32 format round-trips exactly.
struct Sample {
  Array<double> image;
  Array<double> label;

  std::size_t num_classes() const { return label.dim(0); }

  /// Class index per pixel.
  std::vector<std::uint8_t> class_map() const {
    const std::size_t c = label.dim(0), plane = label.dim(1) * label.dim(2);
    std::vector<std::uint8_t> out(plane, 0);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t p = 0; p < plane; ++p)
        if (label[k * plane + p] != 0.0) out[p] = static_cast<std::uint8_t>(k);
    return out;
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

inline Array<double> one_hot(const std::vector<std::uint8_t>& classes, std::size_t num_classes,
                             std::size_t h, std::size_t w) {
  Array<double> label(Shape{num_classes, h, w});
  const std::size_t plane = h * w;
  for (std::size_t p = 0; p < plane; ++p) {
    if (classes[p] >= num_classes) throw std::invalid_argument("class index out of range");
    label[classes[p] * plane + p] = 1.0;
  }
  return label;
}

enum class ShapeKind { Disk, Rectangle, Ring };

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 3;  // class 0 is background
  std::size_t count = 200;
  std::vector<ShapeKind> kinds{ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Ring};
  // Radius range as a fraction of H; split into C-1 consecutive bands so
  // class 1 is the smallest structure and class C-1 the largest.
  double min_radius = 0.08;
  double max_radius = 0.25;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (num_classes > 255) throw std::invalid_argument("num_classes must be <= 255");
    if (height == 0 || width == 0) throw std::invalid_argument("canvas must be non-empty");
    if (!(min_radius > 0 && min_radius <= max_radius && max_radius <= 0.5))
      throw std::invalid_argument("radius fractions must satisfy 0 < min <= max <= 0.5");
    if (kinds.empty()) throw std::invalid_argument("at least one shape kind required");
    if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
  }

  /// Radius band [lo, hi] (fraction of H) for foreground class c >= 1.
  std::pair<double, double> radius_band(std::size_t c) const {
    const double step = (max_radius - min_radius) / static_cast<double>(num_classes - 1);
    return {min_radius + step * static_cast<double>(c - 1), min_radius + step * static_cast<double>(c)};
  }

  /// Mean intensity of class c; evenly spaced in [0.15, 0.85].
  double intensity(std::size_t c) const {
    return 0.15 + 0.7 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
  }
};

namespace detail {

// Squares use the side that matches the disk area pi r^2.
inline double square_half_side(double r) { return 0.5 * r * std::sqrt(std::numbers::pi); }

// Bounding radius around the shape centre.
inline double reach(ShapeKind kind, double r) {
  return kind == ShapeKind::Rectangle ? square_half_side(r) * std::sqrt(2.0) : r;
}

inline bool inside(ShapeKind kind, double dy, double dx, double r) {
  switch (kind) {
    case ShapeKind::Disk: return dy * dy + dx * dx <= r * r;
    case ShapeKind::Rectangle: {
      const double half = square_half_side(r);
      return std::abs(dy) <= half && std::abs(dx) <= half;
    }
    case ShapeKind::Ring: {
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 > 0.25 * r * r;
    }
  }
  return false;
}

}  // namespace detail

/// One shape per foreground class at a seeded position and size, with no
/// overlap between shapes. Image = class intensity + Gaussian noise clamped
/// to [0,1].
inline std::vector<Sample> generate(const SynthConfig& cfg) {
  cfg.validate();
  Xorshift64Star rng(cfg.seed);
  const std::size_t h = cfg.height, w = cfg.width, plane = h * w;
  std::vector<Sample> out;
  out.reserve(cfg.count);
  // Sizes and kinds are drawn once and only positions are retried, so a
  // rejected layout does not bias the size distribution toward small shapes.
  constexpr int kSizeDraws = 20;
  constexpr int kPositionTries = 200;
  for (std::size_t n = 0; n < cfg.count; ++n) {
    struct Placed {
      double cy, cx, r;
      ShapeKind kind;
    };
    std::vector<Placed> placed;
    bool ok = false;
    for (int draw = 0; draw < kSizeDraws && !ok; ++draw) {
      std::vector<Placed> shapes;
      bool fits = true;
      for (std::size_t c = 1; c < cfg.num_classes; ++c) {
        const auto [lo, hi] = cfg.radius_band(c);
        const double r = rng.uniform(lo, hi) * static_cast<double>(h);
        const ShapeKind kind = cfg.kinds[rng.below(cfg.kinds.size())];
        const double reach = detail::reach(kind, r);
        fits = fits && 2 * reach + 1.0 <= static_cast<double>(std::min(h, w));
        shapes.push_back({0, 0, r, kind});
      }
      if (!fits) continue;
      for (int attempt = 0; attempt < kPositionTries && !ok; ++attempt) {
        placed.clear();
        ok = true;
        for (const auto& s : shapes) {
          const double reach = detail::reach(s.kind, s.r);
          const double cy = rng.uniform(reach + 0.5, static_cast<double>(h) - reach - 0.5);
          const double cx = rng.uniform(reach + 0.5, static_cast<double>(w) - reach - 0.5);
          for (const auto& p : placed) {
            const double dy = cy - p.cy, dx = cx - p.cx;
            if (std::sqrt(dy * dy + dx * dx) < reach + detail::reach(p.kind, p.r) + 1.0) ok = false;
          }
          if (!ok) break;
          placed.push_back({cy, cx, s.r, s.kind});
        }
      }
    }
    if (!ok)
      throw std::runtime_error("generate: infeasible placement after " + std::to_string(kSizeDraws) +
                               " size draws (shapes too large for canvas)");
    std::vector<std::uint8_t> classes(plane, 0);
    for (std::size_t c = 1; c < cfg.num_classes; ++c) {
      const auto& p = placed[c - 1];
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - p.cy;
          const double dx = static_cast<double>(x) + 0.5 - p.cx;
          if (detail::inside(p.kind, dy, dx, p.r)) classes[y * w + x] = static_cast<std::uint8_t>(c);
        }
      }
    }
    Array<double> image(Shape{1, h, w});
    for (std::size_t p = 0; p < plane; ++p) {
      double v = cfg.intensity(classes[p]);
      if (cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
      image[p] = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
    out.push_back(Sample{std::move(image), one_hot(classes, cfg.num_classes, h, w)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// "LMXD" files: magic, u32 version, u32 N, then per sample u32 Din, C, H, W,
// f32 image payload, u8 class-index map. Little-endian.

inline constexpr char kDatasetMagic[4] = {'L', 'M', 'X', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& out, const std::vector<Sample>& samples) {
  out.write(kDatasetMagic, 4);
  io::write_u32(out, kDatasetVersion);
  io::write_u32(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    io::write_u32(out, static_cast<std::uint32_t>(s.image.dim(0)));
    io::write_u32(out, static_cast<std::uint32_t>(s.label.dim(0)));
    io::write_u32(out, static_cast<std::uint32_t>(s.image.dim(1)));
    io::write_u32(out, static_cast<std::uint32_t>(s.image.dim(2)));
    for (double v : s.image.data()) io::write_f32(out, static_cast<float>(v));
    const auto classes = s.class_map();
    out.write(reinterpret_cast<const char*>(classes.data()), static_cast<std::streamsize>(classes.size()));
  }
}

inline std::vector<Sample> read_dataset(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("bad magic");
  const auto version = io::read_exact<std::uint32_t>(in, "version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version));
  const auto n = io::read_exact<std::uint32_t>(in, "sample count");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto din = io::read_exact<std::uint32_t>(in, "Din");
    const auto c = io::read_exact<std::uint32_t>(in, "C");
    const auto h = io::read_exact<std::uint32_t>(in, "H");
    const auto w = io::read_exact<std::uint32_t>(in, "W");
    Array<double> image(Shape{din, h, w});
    for (auto& v : image.data()) v = static_cast<double>(io::read_exact<float>(in, "image"));
    std::vector<std::uint8_t> classes(static_cast<std::size_t>(h) * w);
    in.read(reinterpret_cast<char*>(classes.data()), static_cast<std::streamsize>(classes.size()));
    if (static_cast<std::size_t>(in.gcount()) != classes.size()) throw FormatError("truncated file while reading labels");
    for (auto k : classes)
      if (k >= c) throw FormatError("label class index out of range");
    out.push_back(Sample{std::move(image), one_hot(classes, c, h, w)});
  }
  return out;
}

inline void save(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(out, samples);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::vector<Sample> load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset(in);
}

}  // namespace lomix
