#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "lomix/data.hpp"

using namespace lomix;

namespace {

SynthConfig toy(std::size_t count, std::uint64_t seed) {
  SynthConfig c;
  c.height = c.width = 64;
  c.num_classes = 3;
  c.count = count;
  c.seed = seed;
  return c;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Generate, ShapesAndCount) {
  const auto data = generate(toy(5, 1));
  ASSERT_EQ(data.size(), 5u);
  for (const auto& s : data) {
    EXPECT_EQ(s.image.shape(), (Shape{1, 64, 64}));
    EXPECT_EQ(s.label.shape(), (Shape{3, 64, 64}));
  }
}

TEST(Generate, SameSeedIsBitwiseIdentical) {
  const auto a = generate(toy(10, 42)), b = generate(toy(10, 42)), c = generate(toy(10, 43));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Generate, NoiselessImagesArePiecewiseConstant) {
  auto cfg = toy(10, 2);
  cfg.noise_sigma = 0;
  for (const auto& s : generate(cfg)) {
    const auto cls = s.class_map();
    for (std::size_t p = 0; p < cls.size(); ++p)
      EXPECT_EQ(s.image[p], static_cast<double>(static_cast<float>(cfg.intensity(cls[p]))));
  }
}

TEST(Generate, ImagesInUnitIntervalAndLabelsOneHot) {
  auto cfg = toy(20, 3);
  cfg.noise_sigma = 0.5;
  for (const auto& s : generate(cfg)) {
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const std::size_t plane = 64 * 64;
    for (std::size_t p = 0; p < plane; ++p) {
      double sum = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double y = s.label[k * plane + p];
        EXPECT_TRUE(y == 0.0 || y == 1.0);
        sum += y;
      }
      EXPECT_EQ(sum, 1.0);
    }
  }
}

TEST(Generate, EveryForegroundClassPresent) {
  for (const auto& s : generate(toy(50, 4))) {
    const auto cls = s.class_map();
    for (std::uint8_t k = 1; k < 3; ++k) EXPECT_NE(std::find(cls.begin(), cls.end(), k), cls.end());
  }
}

// Monte-Carlo area oracle: with r ~ U[lo, hi] * H and kinds drawn uniformly,
// E[area] = pi E[r^2] * mean(1, 1, 3/4) since squares match the disk area
// and rings remove the inner quarter.
TEST(Generate, ForegroundFractionMatchesAnalyticArea) {
  const auto cfg = toy(100, 5);
  const auto data = generate(cfg);
  const double h = static_cast<double>(cfg.height), hw = h * static_cast<double>(cfg.width);
  for (std::size_t c = 1; c < cfg.num_classes; ++c) {
    const auto [lo, hi] = cfg.radius_band(c);
    const double er2 = h * h * (hi * hi * hi - lo * lo * lo) / (3 * (hi - lo));
    const double expected = std::numbers::pi * er2 * (1.0 + 1.0 + 0.75) / 3.0 / hw;
    double frac = 0;
    for (const auto& s : data) {
      const auto cls = s.class_map();
      frac += static_cast<double>(std::count(cls.begin(), cls.end(), static_cast<std::uint8_t>(c))) / hw;
    }
    frac /= static_cast<double>(data.size());
    EXPECT_NEAR(frac, expected, 0.10 * expected) << "class " << c;
  }
}

TEST(Generate, SmallClassIsSmallerThanLargeClass) {
  std::size_t small = 0, large = 0;
  for (const auto& s : generate(toy(30, 6))) {
    const auto cls = s.class_map();
    small += std::count(cls.begin(), cls.end(), 1);
    large += std::count(cls.begin(), cls.end(), 2);
  }
  EXPECT_LT(small, large);
}

TEST(Generate, InfeasiblePlacementFails) {
  SynthConfig cfg = toy(1, 7);
  cfg.height = cfg.width = 16;
  cfg.num_classes = 6;
  cfg.min_radius = 0.45;
  cfg.max_radius = 0.5;
  EXPECT_THROW(generate(cfg), std::runtime_error);
}

TEST(SynthConfig, Validation) {
  SynthConfig c = toy(1, 0);
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy(1, 0);
  c.max_radius = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy(1, 0);
  c.min_radius = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy(1, 0);
  c.kinds.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Rng, KnownSequenceAndRanges) {
  Xorshift64Star a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Xorshift64Star r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
  Xorshift64Star z(0);
  EXPECT_NE(z.next_u64(), 0u);
}

TEST(Format, RoundTripIsBitwise) {
  const auto data = generate(toy(4, 8));
  const auto path = temp_file("lomix_test_roundtrip.lmxd");
  save(data, path.string());
  const auto back = load(path.string());
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].image, data[i].image);
    EXPECT_EQ(back[i].label, data[i].label);
  }
  std::filesystem::remove(path);
}

TEST(Format, Layout) {
  std::ostringstream out;
  write_dataset(out, generate(toy(1, 9)));
  const std::string bytes = out.str();
  EXPECT_EQ(bytes.substr(0, 4), "LMXD");
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 16 + 64 * 64 * 4 + 64 * 64);
}

TEST(Format, BadMagic) {
  std::istringstream in(std::string("LMXW\x01\0\0\0\0\0\0\0", 12));
  try {
    read_dataset(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_STREQ(e.what(), "bad magic");
  }
}

TEST(Format, TruncatedAndVersion) {
  std::ostringstream out;
  write_dataset(out, generate(toy(2, 10)));
  std::string bytes = out.str();
  std::istringstream cut(bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(read_dataset(cut), FormatError);
  bytes[4] = 9;
  std::istringstream ver(bytes);
  EXPECT_THROW(read_dataset(ver), FormatError);
}

TEST(Format, EmptyDataset) {
  const auto path = temp_file("lomix_test_empty.lmxd");
  save({}, path.string());
  EXPECT_TRUE(load(path.string()).empty());
  std::filesystem::remove(path);
}

TEST(Format, MissingFile) { EXPECT_THROW(load("/nonexistent/lomix.lmxd"), std::runtime_error); }
