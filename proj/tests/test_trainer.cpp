#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "lomix/trainer.hpp"

using namespace lomix;

namespace {

std::vector<FusionOp> all_ops() { return {kAllFusionOps.begin(), kAllFusionOps.end()}; }

TrainConfig tiny(SupervisionScheme scheme, std::uint64_t seed = 1) {
  TrainConfig c;
  c.net.in_channels = 1;
  c.net.num_classes = 3;
  c.net.num_stages = 4;
  c.net.base_width = 4;
  c.net.height = c.net.width = 32;
  c.epochs = 2;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.scheme = std::move(scheme);
  c.seed = seed;
  return c;
}

std::vector<Sample> toy_data(std::size_t n, std::uint64_t seed) {
  SynthConfig s;
  s.height = s.width = 32;
  s.count = n;
  s.seed = seed;
  return generate(s);
}

std::vector<const Sample*> batch_of(const std::vector<Sample>& d) {
  std::vector<const Sample*> b;
  for (const auto& s : d) b.push_back(&s);
  return b;
}

}  // namespace

// Hand-rolled reference: with a constant gradient g the bias-corrected moments
// are exactly g and g^2 at every step.
TEST(AdamW, ConstantGradientOracle) {
  AdamWConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  AdamW<double> opt(cfg);
  Array<double> p(Shape{2}, std::vector<double>{1.0, -2.0}), q(Shape{1}, 3.0);
  const Array<double> gp(Shape{2}, std::vector<double>{0.5, -4.0}), gq(Shape{1}, 2.0);
  double ref_p0 = 1.0, ref_p1 = -2.0, ref_q = 3.0;
  for (int k = 0; k < 5; ++k) {
    opt.step({{&p, &gp, true, 1.0}, {&q, &gq, false, 0.5}});
    ref_p0 = ref_p0 * (1 - 0.01 * 0.1) - 0.01 * 0.5 / (0.5 + 1e-8);
    ref_p1 = ref_p1 * (1 - 0.01 * 0.1) - 0.01 * -4.0 / (4.0 + 1e-8);
    ref_q = ref_q - 0.005 * 2.0 / (2.0 + 1e-8);
  }
  EXPECT_NEAR(p[0], ref_p0, 1e-14);
  EXPECT_NEAR(p[1], ref_p1, 1e-14);
  EXPECT_NEAR(q[0], ref_q, 1e-14);
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(AdamW, FirstStepMagnitudeIsLearningRate) {
  AdamW<double> opt(AdamWConfig{0.1, 0.0});
  Array<double> p(Shape{3}, 0.0);
  const Array<double> g(Shape{3}, std::vector<double>{1e-3, -7.0, 250.0});
  opt.step({{&p, &g, true, 1.0}});
  EXPECT_NEAR(p[0], -0.1, 1e-5);
  EXPECT_NEAR(p[1], 0.1, 1e-9);
  EXPECT_NEAR(p[2], -0.1, 1e-9);
}

TEST(AdamW, RejectsChangedSlotsAndBadRate) {
  EXPECT_THROW(AdamW<double>(AdamWConfig{0.0}), std::invalid_argument);
  AdamW<double> opt;
  Array<double> p(Shape{1}), g(Shape{1});
  opt.step({{&p, &g, true, 1.0}});
  EXPECT_THROW(opt.step({{&p, &g, true, 1.0}, {&p, &g, true, 1.0}}), std::invalid_argument);
}

TEST(Schemes, SupervisedOutputCounts) {
  for (std::size_t L : {2u, 3u, 4u, 5u}) {
    const std::size_t subsets = (std::size_t{1} << L) - L - 1;
    EXPECT_EQ(supervised_ids(SupervisionScheme::last_layer(), L).size(), 1u);
    EXPECT_EQ(supervised_ids(SupervisionScheme::deep_supervision(), L).size(), L);
    EXPECT_EQ(supervised_ids(SupervisionScheme::mutation(), L).size(), L + subsets);
    EXPECT_EQ(supervised_ids(SupervisionScheme::mutation(false), L).size(), L + 1);
    EXPECT_EQ(supervised_ids(SupervisionScheme::lomix(), L).size(), L + 4 * subsets);
    EXPECT_EQ(supervised_ids(SupervisionScheme::lomix({FusionOp::Mult, FusionOp::Add}), L).size(),
              L + 2 * subsets);
  }
  EXPECT_EQ(supervised_ids(SupervisionScheme::last_layer(), 4)[0].str(), "orig_3");
}

TEST(Schemes, Labels) {
  EXPECT_EQ(SupervisionScheme::last_layer().label(), "LL");
  EXPECT_EQ(SupervisionScheme::deep_supervision().label(), "DS");
  EXPECT_EQ(SupervisionScheme::mutation().label(), "MUTATION");
  EXPECT_EQ(SupervisionScheme::lomix({FusionOp::Mult, FusionOp::Add}).label(), "LoMix[add+mult;learned]");
  EXPECT_EQ(SupervisionScheme::lomix({FusionOp::Add}, WeightMode::Fixed).label(), "LoMix[add;fixed]");
}

TEST(Schemes, FixedAndLearnedShareOutputs) {
  const SupervisedModel<double> a(tiny(SupervisionScheme::lomix(all_ops(), WeightMode::Learned)));
  const SupervisedModel<double> b(tiny(SupervisionScheme::lomix(all_ops(), WeightMode::Fixed)));
  EXPECT_EQ(a.ids().size(), 48u);
  EXPECT_EQ(a.ids(), b.ids());
  EXPECT_TRUE(a.alphas_trainable());
  EXPECT_FALSE(b.alphas_trainable());
}

TEST(SupervisedModel, InferenceParametersIndependentOfScheme) {
  const std::size_t base = SupervisedModel<float>(tiny(SupervisionScheme::last_layer())).inference_parameter_count();
  for (const auto& s : {SupervisionScheme::deep_supervision(), SupervisionScheme::mutation(),
                        SupervisionScheme::lomix()}) {
    const SupervisedModel<float> m(tiny(s));
    EXPECT_EQ(m.inference_parameter_count(), base) << s.label();
  }
}

TEST(SupervisedModel, GraphHasOneOutputPerId) {
  const auto data = toy_data(1, 3);
  const SupervisedModel<double> m(tiny(SupervisionScheme::lomix()));
  Tape<double> t;
  const auto g = m.build(t, data[0].image);
  ASSERT_EQ(g.outputs.size(), m.ids().size());
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    EXPECT_EQ(g.outputs[i].id, m.ids()[i]);
    EXPECT_EQ(g.outputs[i].map.shape(), (Shape{3, 32, 32}));
  }
}

TEST(Trainer, MutationLossEqualsFixedAddLoMix) {
  const auto data = toy_data(3, 4);
  Trainer<double> mut(tiny(SupervisionScheme::mutation()));
  Trainer<double> lmx(tiny(SupervisionScheme::lomix({FusionOp::Add}, WeightMode::Fixed)));
  for (const auto& s : data) EXPECT_EQ(mut.sample_loss(s), lmx.sample_loss(s));
}

TEST(Trainer, StepsAreDeterministic) {
  const auto data = toy_data(8, 5);
  Trainer<float> a(tiny(SupervisionScheme::lomix(), 7)), b(tiny(SupervisionScheme::lomix(), 7));
  for (int k = 0; k < 3; ++k) EXPECT_EQ(a.train_step(batch_of(data)), b.train_step(batch_of(data)));
  EXPECT_TRUE(a.model().net().parameters() == b.model().net().parameters());
  EXPECT_TRUE(a.model().fusion().parameters() == b.model().fusion().parameters());
  EXPECT_TRUE(a.model().alphas().parameters() == b.model().alphas().parameters());
}

TEST(Trainer, LossDecreasesOnFixedBatch) {
  const auto data = toy_data(4, 6);
  for (const auto& scheme : {SupervisionScheme::last_layer(), SupervisionScheme::lomix()}) {
    Trainer<float> t(tiny(scheme, 2));
    const double first = t.train_step(batch_of(data));
    double last = first;
    for (int k = 0; k < 40; ++k) last = t.train_step(batch_of(data));
    EXPECT_LT(last, first) << scheme.label();
  }
}

TEST(Trainer, FixedWeightsStayPut) {
  const auto data = toy_data(4, 7);
  Trainer<double> t(tiny(SupervisionScheme::deep_supervision()));
  const auto before = t.model().alphas().parameters();
  t.train_step(batch_of(data));
  EXPECT_TRUE(t.model().alphas().parameters() == before);
}

TEST(Trainer, AlphasMoveInLearnedMode) {
  const auto data = toy_data(4, 8);
  Trainer<double> t(tiny(SupervisionScheme::lomix({FusionOp::Add})));
  const auto before = t.model().alphas().parameters();
  t.train_step(batch_of(data));
  EXPECT_FALSE(t.model().alphas().parameters() == before);
}

TEST(Trainer, NonFiniteInputRaisesTrainingError) {
  auto data = toy_data(1, 9);
  data[0].image[5] = std::numeric_limits<double>::quiet_NaN();
  Trainer<float> t(tiny(SupervisionScheme::deep_supervision()));
  EXPECT_THROW(t.train_step(batch_of(data)), TrainingError);
  EXPECT_THROW(t.train_step({}), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  auto c = tiny(SupervisionScheme::lomix());
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny(SupervisionScheme::lomix());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny(SupervisionScheme::lomix());
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny(SupervisionScheme::lomix());
  c.corrupt_stage = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny(SupervisionScheme::lomix());
  c.scheme.ops.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunTraining, BestCheckpointDominatesEvaluations) {
  const auto train = toy_data(8, 10), val = toy_data(4, 11);
  auto cfg = tiny(SupervisionScheme::lomix({FusionOp::Add, FusionOp::Awf}));
  cfg.epochs = 3;
  const auto r = run_training<float>(train, val, cfg);
  ASSERT_EQ(r.epochs.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& row : r.metrics) {
    if (row.cls != "mean") continue;
    seen.insert(row.epoch);
    EXPECT_LE(row.dice, r.best_dice);
    if (row.epoch == r.best_epoch) {
      EXPECT_EQ(row.dice, r.best_dice);
    }
  }
  EXPECT_EQ(seen, (std::set<std::size_t>{1, 2, 3}));
  EXPECT_EQ(r.trace.size(), 3 * r.supervised_outputs);
  EXPECT_EQ(r.supervised_outputs, 4u + 2 * 11);
  EXPECT_EQ(r.loss_history.size(), 3 * 2u);
}

TEST(RunTraining, FixedSchemesWriteNoTrace) {
  const auto train = toy_data(4, 12);
  auto cfg = tiny(SupervisionScheme::deep_supervision());
  cfg.epochs = 1;
  const auto r = run_training<float>(train, {}, cfg);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_TRUE(r.best_params.net == r.final_params.net);
}

TEST(RunTraining, EvalEveryAndMaxSteps) {
  const auto train = toy_data(8, 13), val = toy_data(2, 14);
  auto cfg = tiny(SupervisionScheme::last_layer());
  cfg.epochs = 5;
  cfg.eval_every = 2;
  auto r = run_training<float>(train, val, cfg);
  std::set<std::size_t> evals;
  for (const auto& row : r.metrics) evals.insert(row.epoch);
  EXPECT_EQ(evals, (std::set<std::size_t>{2, 4, 5}));
  cfg.max_steps = 3;
  r = run_training<float>(train, val, cfg);
  EXPECT_EQ(r.loss_history.size(), 3u);
  EXPECT_EQ(r.epochs.size(), 2u);
}

TEST(CompareSchemes, AggregatesAndParallelMatchesSerial) {
  const auto train = toy_data(4, 15), val = toy_data(2, 16);
  auto cfg = tiny(SupervisionScheme::last_layer());
  cfg.epochs = 1;
  const std::vector<SupervisionScheme> schemes{SupervisionScheme::last_layer(), SupervisionScheme::mutation()};
  const auto serial = compare_schemes<float>(train, val, schemes, {1, 2}, cfg, 1);
  const auto parallel = compare_schemes<float>(train, val, schemes, {1, 2}, cfg, 4);
  ASSERT_EQ(serial.size(), 2u);
  EXPECT_EQ(serial[0].scheme, "LL");
  EXPECT_EQ(serial[1].scheme, "MUTATION");
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(serial[i].runs, 2u);
    EXPECT_EQ(serial[i].dice_mean, parallel[i].dice_mean);
    EXPECT_EQ(serial[i].miou_sd, parallel[i].miou_sd);
    EXPECT_EQ(serial[i].class_dice_mean.size(), 2u);
  }
  const auto a = run_training<float>(train, val, [&] {
                   auto c = cfg;
                   c.seed = 1;
                   return c;
                 }()).best_scores.mean_dice;
  const auto b = run_training<float>(train, val, [&] {
                   auto c = cfg;
                   c.seed = 2;
                   return c;
                 }()).best_scores.mean_dice;
  EXPECT_DOUBLE_EQ(serial[0].dice_mean, (a + b) / 2);
  EXPECT_NEAR(serial[0].dice_sd, std::abs(a - b) / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(compare_schemes<float>(train, val, schemes, {}, cfg), std::invalid_argument);
}

TEST(MeanSd, SampleStandardDeviation) {
  const auto [m, sd] = mean_sd({2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(m, 5.0);
  EXPECT_NEAR(sd, std::sqrt(32.0 / 7.0), 1e-15);
  EXPECT_EQ(mean_sd({3}).second, 0.0);
}

TEST(Render, CsvFormats) {
  const WeightTrace trace{{1, "add_0,1", 0.5}, {1, "orig_0", 0.25}};
  EXPECT_EQ(weight_trace_csv(trace), "epoch,output_id,weight\n1,\"add_0,1\",0.5\n1,orig_0,0.25\n");
  const std::vector<MetricRow> rows{{3, "val", "mean", 0.75, 0.5}};
  EXPECT_EQ(metrics_csv(rows), "epoch,split,class,dice,miou\n3,val,mean,0.75,0.5\n");
  ComparisonRow r;
  r.scheme = "LL";
  r.runs = 3;
  r.dice_mean = 0.9;
  r.class_dice_mean = {0.8};
  r.class_dice_sd = {0.1};
  EXPECT_EQ(comparison_csv({r}),
            "scheme,runs,dice_mean,dice_sd,miou_mean,miou_sd,dice_class1_mean,dice_class1_sd\n"
            "LL,3,0.9,0,0,0,0.8,0.1\n");
  const std::string table = comparison_table({r});
  EXPECT_NE(table.find("90.00 +-  0.00"), std::string::npos);
  EXPECT_NE(table.find("class 1"), std::string::npos);
}
