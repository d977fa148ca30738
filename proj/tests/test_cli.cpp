#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "lomix/csv.hpp"
#include "lomix/data.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string output;  // stdout and stderr interleaved
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lomix_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const fs::path log = dir_ / "cli.log";
    const std::string cmd = std::string(LOMIX_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small 32x32 training and validation sets.
  void make_toy_data() const {
    ASSERT_EQ(run("dataset gen --size 32 --count 8 --seed 1 --out " + path("train.lmxd")).code, 0);
    ASSERT_EQ(run("dataset gen --size 32 --count 4 --seed 2 --out " + path("val.lmxd")).code, 0);
  }

  std::string train_args(const std::string& scheme, const std::string& out, int epochs = 2) const {
    return "train --data " + path("train.lmxd") + " --val " + path("val.lmxd") + " --scheme " + scheme +
           " --epochs " + std::to_string(epochs) + " --batch-size 4 --width 4 --lr 1e-3 --seed 3 --out " + path(out);
  }

  fs::path dir_;
};

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, DatasetGenWritesRequestedSamples) {
  const auto r = run("dataset gen --size 64 --classes 3 --count 200 --seed 7 --out " + path("train.lmxd"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("wrote 200 samples"), std::string::npos);
  const auto d = lomix::load(path("train.lmxd"));
  ASSERT_EQ(d.size(), 200u);
  EXPECT_EQ(d[0].image.shape(), (lomix::Shape{1, 64, 64}));
}

TEST_F(Cli, DatasetGenIsByteIdentical) {
  ASSERT_EQ(run("dataset gen --size 32 --count 10 --seed 5 --out " + path("a.lmxd")).code, 0);
  ASSERT_EQ(run("dataset gen --size 32 --count 10 --seed 5 --out " + path("b.lmxd")).code, 0);
  EXPECT_EQ(slurp(path("a.lmxd")), slurp(path("b.lmxd")));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("dataset gen --classes 1 --out " + path("x.lmxd")).code, 2);
  EXPECT_EQ(run("dataset gen --bogus 3 --out " + path("x.lmxd")).code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --scheme lomix").code, 2);
  make_toy_data();
  EXPECT_EQ(run(train_args("nonsense", "r")).code, 2);
  EXPECT_EQ(run(train_args("lomix", "r") + " --ops add,pow").code, 2);
  EXPECT_EQ(run(train_args("lomix", "r") + " --stages 7").code, 2);
  EXPECT_EQ(run("gradcheck --tolerance -1").code, 2);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  EXPECT_EQ(run("dataset gen --size 32 --count 2 --out /nonexistent/dir/x.lmxd").code, 1);
  EXPECT_EQ(run("train --data " + path("missing.lmxd") + " --out " + path("r")).code, 1);
  EXPECT_EQ(run("export-weights " + path("no_run")).code, 1);
}

TEST_F(Cli, NonFiniteLossReportsStep) {
  auto data = lomix::generate([] {
    lomix::SynthConfig c;
    c.height = c.width = 32;
    c.count = 2;
    return c;
  }());
  data[1].image[0] = std::numeric_limits<double>::quiet_NaN();
  lomix::save(data, path("bad.lmxd"));
  const auto r = run("train --data " + path("bad.lmxd") + " --width 4 --batch-size 1 --epochs 1 --out " + path("r"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("non-finite loss at step"), std::string::npos) << r.output;
}

TEST_F(Cli, LastLayerRunWritesNoTrace) {
  make_toy_data();
  const auto r = run(train_args("last", "ll"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"manifest.json", "checkpoint.lmxw", "metrics.csv", "loss.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "ll" / f)) << f;
  EXPECT_FALSE(fs::exists(dir_ / "ll" / "weight_trace.csv"));
  EXPECT_NE(r.output.find("1 supervised outputs"), std::string::npos);
}

TEST_F(Cli, FullLoMixTraceAndExport) {
  make_toy_data();
  const auto r = run(train_args("lomix", "lm") + " --ops add,mult,concat,awf --weights learned");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("48 supervised outputs"), std::string::npos);
  const auto trace = lomix::csv::read(path("lm/weight_trace.csv"));
  EXPECT_EQ(trace.rows.size(), 2u * 48);
  ASSERT_EQ(run("export-weights " + path("lm")).code, 0);
  const auto fams = lomix::csv::read(path("lm/family_sums.csv"));
  EXPECT_EQ(fams.header, (std::vector<std::string>{"epoch", "family", "weight_sum"}));
  EXPECT_EQ(fams.rows.size(), 2u * 5);
  const auto last = lomix::csv::read(path("lm/final_weights.csv"));
  EXPECT_EQ(last.rows.size(), 48u);
}

TEST_F(Cli, ExportToSeparateDirectoryAndSingleEpoch) {
  make_toy_data();
  ASSERT_EQ(run(train_args("lomix", "lm", 1)).code, 0);
  ASSERT_EQ(run("export-weights " + path("lm") + " --out " + path("figs")).code, 0);
  EXPECT_EQ(lomix::csv::read(path("figs/family_sums.csv")).rows.size(), 5u);
}

TEST_F(Cli, FixedAddLoMixMatchesMutation) {
  make_toy_data();
  ASSERT_EQ(run(train_args("mutation", "mut")).code, 0);
  ASSERT_EQ(run(train_args("lomix", "add") + " --ops add --weights fixed").code, 0);
  EXPECT_EQ(slurp(path("mut/loss.csv")), slurp(path("add/loss.csv")));
  EXPECT_EQ(slurp(path("mut/metrics.csv")), slurp(path("add/metrics.csv")));
  EXPECT_FALSE(fs::exists(dir_ / "add" / "weight_trace.csv"));
}

TEST_F(Cli, ManifestReplayIsBitwise) {
  make_toy_data();
  ASSERT_EQ(run(train_args("lomix", "first")).code, 0);
  const auto r = run("train --manifest " + path("first/manifest.json") + " --out " + path("second"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"checkpoint.lmxw", "final.lmxw", "metrics.csv", "weight_trace.csv", "loss.csv"})
    EXPECT_EQ(slurp(dir_ / "first" / f), slurp(dir_ / "second" / f)) << f;
}

TEST_F(Cli, CompareRowsFollowRequestedOrder) {
  make_toy_data();
  const auto r = run("compare --data " + path("train.lmxd") + " --val " + path("val.lmxd") +
                     " --schemes deep,last --seeds 4 --epochs 1 --width 4 --out " + path("cmp.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto t = lomix::csv::read(path("cmp.csv"));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "DS");
  EXPECT_EQ(t.rows[1][0], "LL");
  EXPECT_EQ(t.rows[0][1], "1");
  EXPECT_EQ(t.rows[0][3], "0");
  EXPECT_EQ(t.header.size(), 6u + 2 * 2);
  EXPECT_EQ(run("compare --data " + path("train.lmxd") + " --seeds x").code, 2);
}

TEST_F(Cli, GradcheckToleranceAndDeterminism) {
  const auto a = run("gradcheck --instances 2 --seed 11");
  const auto b = run("gradcheck --instances 2 --seed 11");
  EXPECT_EQ(a.code, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  const auto z = run("gradcheck --instances 2 --tolerance 0");
  EXPECT_EQ(z.code, 1);
  EXPECT_NE(z.output.find("failing:"), std::string::npos);
  EXPECT_GT(line_count(z.output), 5u);
}

TEST_F(Cli, HelpAndVersion) {
  EXPECT_EQ(run("--help").code, 0);
  const auto v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find("0.1.0"), std::string::npos);
}
