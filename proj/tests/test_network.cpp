#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lomix/network.hpp"
#include "support.hpp"

using namespace lomix;

namespace {

UNetConfig small(std::size_t L, std::size_t hw, std::size_t classes = 2) {
  UNetConfig c;
  c.in_channels = 1;
  c.num_classes = classes;
  c.num_stages = L;
  c.base_width = 4;
  c.height = c.width = hw;
  return c;
}

Array<double> image_for(const UNetConfig& c, std::uint64_t seed) {
  Xorshift64Star rng(seed);
  return test::random_array<double>({c.in_channels, c.height, c.width}, 0, 1, rng);
}

}  // namespace

TEST(UNetConfig, StageBounds) {
  EXPECT_THROW(small(1, 64).validate(), std::invalid_argument);
  EXPECT_THROW(small(6, 64).validate(), std::invalid_argument);
  EXPECT_NO_THROW(small(5, 32).validate());
}

TEST(UNetConfig, SizeMustDivide) {
  EXPECT_THROW(small(4, 60).validate(), std::invalid_argument);
  EXPECT_THROW(small(4, 8).validate(), std::invalid_argument);
  EXPECT_NO_THROW(small(4, 16).validate());
}

TEST(UNet, FourStageShapes) {
  const auto cfg = small(4, 64);
  UNet<double> net(cfg, 1);
  const auto z = net.predict_logits(image_for(cfg, 2));
  ASSERT_EQ(z.size(), 4u);
  EXPECT_EQ(z[0].shape(), (Shape{2, 8, 8}));
  EXPECT_EQ(z[1].shape(), (Shape{2, 16, 16}));
  EXPECT_EQ(z[2].shape(), (Shape{2, 32, 32}));
  EXPECT_EQ(z[3].shape(), (Shape{2, 64, 64}));
}

TEST(UNet, TwoStageShapes) {
  const auto cfg = small(2, 8, 3);
  UNet<double> net(cfg, 1);
  const auto z = net.predict_logits(image_for(cfg, 2));
  ASSERT_EQ(z.size(), 2u);
  EXPECT_EQ(z[0].shape(), (Shape{3, 4, 4}));
  EXPECT_EQ(z[1].shape(), (Shape{3, 8, 8}));
}

TEST(UNet, ZeroHeadsGiveUniformMaps) {
  const auto cfg = small(3, 16, 4);
  UNet<double> net(cfg, 5, /*zero_heads=*/true);
  for (const auto& z : net.predict_logits(image_for(cfg, 3)))
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
  for (const auto& p : probability_maps(net, image_for(cfg, 3), Activation::Softmax)) {
    EXPECT_EQ(p.shape(), (Shape{4, 16, 16}));
    for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  }
}

TEST(UNet, RejectsWrongImageShape) {
  const auto cfg = small(3, 16);
  UNet<double> net(cfg, 1);
  Tape<double> t;
  const auto bound = bind(t, net.parameters(), false);
  EXPECT_THROW(net.forward(t.constant(Array<double>(Shape{1, 8, 16})), bound), ShapeError);
  EXPECT_THROW(net.forward(t.constant(Array<double>(Shape{2, 16, 16})), bound), ShapeError);
}

TEST(UNet, ForwardIsDeterministic) {
  const auto cfg = small(4, 32);
  UNet<double> a(cfg, 9), b(cfg, 9), c(cfg, 10);
  const auto img = image_for(cfg, 4);
  EXPECT_EQ(a.predict_logits(img), b.predict_logits(img));
  EXPECT_EQ(a.predict_logits(img), a.predict_logits(img));
  EXPECT_NE(a.predict_logits(img), c.predict_logits(img));
}

TEST(UNet, EveryParameterReceivesGradient) {
  const auto cfg = small(3, 16, 3);
  UNet<double> net(cfg, 2);
  Tape<double> t;
  const auto bound = bind(t, net.parameters());
  const auto z = net.forward(t.constant(image_for(cfg, 8)), bound);
  Var<double> loss = test::project(t, z[0], 1);
  for (std::size_t i = 1; i < z.size(); ++i) loss = add(loss, test::project(t, z[i], 1 + i));
  t.backward(loss);
  for (std::size_t i = 0; i < bound.vars.size(); ++i) {
    const auto g = t.grad(bound[i]);
    double mag = 0;
    for (double v : g.data()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << net.parameters()[i].name;
  }
}

TEST(ProbabilityMaps, UniformLogits) {
  Tape<double> t;
  std::vector<Var<double>> z{t.constant(Array<double>(Shape{3, 2, 2}, 1.5)),
                             t.constant(Array<double>(Shape{3, 4, 4}, -0.5))};
  for (const auto& m : to_probability_maps(z, Activation::Softmax, 4, 4)) {
    EXPECT_EQ(m.shape(), (Shape{3, 4, 4}));
    for (double v : m.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(ProbabilityMaps, SingleMapPassthrough) {
  Xorshift64Star rng(11);
  const auto z = test::random_array<double>({2, 4, 4}, -3, 3, rng);
  Tape<double> t;
  const auto maps = to_probability_maps<double>({t.constant(z)}, Activation::Sigmoid, 4, 4);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0].value(), sigmoid(t.constant(z)).value());
}

TEST(ProbabilityMaps, SoftmaxSumsToOne) {
  Xorshift64Star rng(12);
  Tape<double> t;
  std::vector<Var<double>> z;
  for (std::size_t s : {2u, 4u, 8u}) z.push_back(t.constant(test::random_array<double>({3, s, s}, -6, 6, rng)));
  for (const auto& m : to_probability_maps(z, Activation::Softmax, 8, 8)) {
    const auto& v = m.value();
    for (std::size_t p = 0; p < 64; ++p) EXPECT_NEAR(v[p] + v[64 + p] + v[128 + p], 1.0, 1e-6);
  }
}

TEST(FinalPrediction, LastStageIsUnchanged) {
  Xorshift64Star rng(13);
  std::vector<Array<double>> maps;
  for (int i = 0; i < 4; ++i) maps.push_back(test::random_distribution<double>(3, 4, 4, rng));
  EXPECT_EQ(final_prediction(maps, FinalPredictionMode::LastStage), maps[3]);
}

TEST(FinalPrediction, SumOfIdenticalMapsKeepsArgmax) {
  Xorshift64Star rng(14);
  const auto m = test::random_distribution<double>(3, 4, 4, rng);
  const std::vector<Array<double>> maps(4, m);
  const auto s = final_prediction(maps, FinalPredictionMode::SumAll);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_DOUBLE_EQ(s[i], 4 * m[i]);
  EXPECT_EQ(argmax_classes(s, Activation::Softmax), argmax_classes(m, Activation::Softmax));
}

TEST(FinalPrediction, SingleStageBothModesAgree) {
  Xorshift64Star rng(15);
  const std::vector<Array<double>> maps{test::random_distribution<double>(2, 3, 3, rng)};
  EXPECT_EQ(final_prediction(maps, FinalPredictionMode::LastStage),
            final_prediction(maps, FinalPredictionMode::SumAll));
}

TEST(FinalPrediction, EmptyListThrows) {
  EXPECT_THROW(final_prediction(std::vector<Array<double>>{}, FinalPredictionMode::LastStage),
               std::invalid_argument);
}

TEST(Infer, LastStageMatchesFullMapPath) {
  const auto cfg = small(4, 32, 3);
  UNet<double> net(cfg, 21);
  const auto img = image_for(cfg, 22);
  const auto maps = probability_maps(net, img, Activation::Softmax);
  EXPECT_EQ(infer(net, img, Activation::Softmax), maps.back());
  EXPECT_EQ(infer(net, img, Activation::Softmax, FinalPredictionMode::SumAll),
            final_prediction(maps, FinalPredictionMode::SumAll));
}

TEST(Argmax, SigmoidSingleChannelThresholds) {
  const Array<double> p(Shape{1, 1, 3}, std::vector<double>{0.2, 0.5, 0.9});
  EXPECT_EQ(argmax_classes(p, Activation::Sigmoid), (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Checkpoint, RoundTrip) {
  const auto cfg = small(3, 16);
  UNet<double> net(cfg, 31);
  const auto path = std::filesystem::temp_directory_path() / "lomix_test_net.lmxw";
  save_checkpoint<double>(path.string(), {&net.parameters()});
  UNet<double> other(cfg, 32);
  ASSERT_FALSE(other.parameters() == net.parameters());
  assign_from(other.parameters(), load_checkpoint(path.string()));
  EXPECT_TRUE(other.parameters() == net.parameters());
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  ParameterSet<double> set;
  set.add("w", Array<double>(Shape{2}, std::vector<double>{1.5, -2.0}));
  std::ostringstream out;
  write_checkpoint<double>(out, {&set});
  const std::string bytes = out.str();
  EXPECT_EQ(bytes.substr(0, 4), "LMXW");
  // magic, version, name length, name, rank, extent, two f64 values
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 1 + 4 + 4 + 16);
}

TEST(Checkpoint, BadMagicAndTruncation) {
  std::istringstream bad("XXXX");
  EXPECT_THROW(read_checkpoint(bad), FormatError);
  ParameterSet<double> set;
  set.add("w", Array<double>(Shape{3}, 1.0));
  std::ostringstream out;
  write_checkpoint<double>(out, {&set});
  std::string bytes = out.str();
  bytes.resize(bytes.size() - 3);
  std::istringstream cut(bytes);
  EXPECT_THROW(read_checkpoint(cut), FormatError);
}

TEST(Checkpoint, MissingParameterRejected) {
  ParameterSet<double> set;
  set.add("a", Array<double>(Shape{1}));
  EXPECT_THROW(assign_from(set, {}), FormatError);
}
