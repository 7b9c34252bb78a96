#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "qmetro/agents.hpp"
#include "qmetro/cli.hpp"
#include "qmetro/config.hpp"

namespace qmetro {
namespace {

namespace fs = std::filesystem;

constexpr const char* kQuickDc = R"(seed = 3

[model]
name = "nv_dc"

[model.prior]
omega = [0.0, 1.0]

[budget]
kind = "measurements"
amount = 4

[training]
batch_size = 4
steps = 2
pretrain_steps = 20

[particles]
count = 40

[eval]
episodes = 10
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("qmetro_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    setenv("QMETRO_LOG", "warn", 1);
  }

  fs::path write(const std::string& name, const std::string& text) const {
    const auto path = root_ / name;
    std::ofstream(path) << text;
    return path;
  }

  static int run(std::initializer_list<std::string> args) {
    std::vector<std::string> storage{"qmetro"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : storage) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }

  static std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  fs::path root_;
};

TEST(Grid, ParsesListsAndRanges) {
  EXPECT_EQ(parse_grid("1,2,5"), (std::vector<double>{1, 2, 5}));
  EXPECT_EQ(parse_grid("1:4"), (std::vector<double>{1, 2, 3, 4}));
  const auto stepped = parse_grid("0.1:0.5:0.1");
  ASSERT_EQ(stepped.size(), 5u);
  EXPECT_NEAR(stepped.back(), 0.5, 1e-12);
  EXPECT_THROW(parse_grid("a,b"), ConfigError);
  EXPECT_THROW(parse_grid("5:1"), ConfigError);
}

TEST(Bounds, DcMeasurementRegimeHasThirtyRows) {
  auto c = default_config("nv_dc");
  const auto grid = parse_grid("1:30");
  const auto rows = compute_bounds(c, grid);
  ASSERT_EQ(rows.size(), 30u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].resource, static_cast<double>(i + 1));
    EXPECT_EQ(rows[i].task, "nv_dc");
    EXPECT_EQ(rows[i].case_name, "t2_inf");
    EXPECT_EQ(rows[i].regime, "measurements");
  }
  std::ostringstream out;
  write_bounds_header(out);
  EXPECT_EQ(out.str(), "resource,bound,task,case,regime\n");
}

TEST(Bounds, PhotonicModelsHaveReferenceRows) {
  for (const std::string model : {"dolinar", "multiphase", "bs_classifier"}) {
    const auto c = default_config(model);
    const auto rows = compute_bounds(c, {});
    EXPECT_FALSE(rows.empty()) << model;
    for (const auto& r : rows) EXPECT_TRUE(r.bound >= 0.0 && r.bound <= 1.0) << model;
  }
}

TEST_F(CliTest, CompareJoinsOnResource) {
  const auto a = write("a.csv", "resource,precision_mean,precision_stderr,strategy\n1,0.5,0.1,pgh\n2,0.25,0.05,pgh\n");
  const auto b = write("b.csv", "resource,precision_mean,precision_stderr,strategy\n2,0.2,0.02,sigma\n3,0.1,0.01,sigma\n");
  const std::vector<fs::path> inputs{a, b};
  const auto table = compare_runs(inputs);
  ASSERT_EQ(table.header.size(), 5u);
  EXPECT_EQ(table.header[0], "resource");
  ASSERT_EQ(table.rows.size(), 3u);
  EXPECT_EQ(table.rows[0][0], "1");
  EXPECT_EQ(table.rows[2][0], "3");
  EXPECT_EQ(table.rows[0][3], "");
  EXPECT_EQ(table.rows[1][1], "0.25");
  EXPECT_EQ(table.rows[1][3], "0.2");
}

TEST_F(CliTest, TrainEvalAndHashGuard) {
  const auto config = write("dc.toml", kQuickDc);
  const auto run_dir = root_ / "run";
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", run_dir.string(), "--seed", "7"}), 0);
  for (const char* name : {"metrics.csv", "checkpoint.bin", "checkpoint.bin.meta", "config.toml", "eval.csv"})
    EXPECT_TRUE(fs::exists(run_dir / name)) << name;
  const auto metrics = slurp(run_dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("step,loss,grad_norm,lr,ess_min,aborted_episodes\n", 0), 0u);
  EXPECT_EQ(parse_config(slurp(run_dir / "config.toml")).seed, 7u);

  const auto eval_dir = root_ / "eval";
  ASSERT_EQ(run({"eval", "--config", config.string(), "--out", eval_dir.string(), "--agent", "pgh"}), 0);
  const auto eval = slurp(eval_dir / "eval.csv");
  EXPECT_EQ(eval.rfind("resource,precision_mean,precision_stderr,strategy\n", 0), 0u);
  EXPECT_NE(eval.find(",pgh\n"), std::string::npos);

  EXPECT_EQ(run({"eval", "--config", config.string(), "--out", (root_ / "agent").string(), "--agent", run_dir.string()}),
            0);

  std::string changed = kQuickDc;
  changed.replace(changed.find("count = 40"), 10, "count = 41");
  const auto other = write("other.toml", changed);
  EXPECT_EQ(run({"eval", "--config", other.string(), "--out", (root_ / "refused").string(), "--agent", run_dir.string()}),
            1);
  EXPECT_EQ(run({"eval", "--config", other.string(), "--out", (root_ / "forced").string(), "--agent", run_dir.string(),
                 "--force"}),
            0);
}

TEST_F(CliTest, ZeroStepsWritesThePretrainedInitialization) {
  std::string text = kQuickDc;
  text.replace(text.find("steps = 2"), 9, "steps = 0");
  const auto config = write("zero.toml", text);
  const auto a = root_ / "a";
  const auto b = root_ / "b";
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", a.string()}), 0);
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", b.string()}), 0);
  const auto ca = load_checkpoint(a / "checkpoint.bin");
  const auto cb = load_checkpoint(b / "checkpoint.bin");
  EXPECT_EQ(ca.info.step, 0u);
  EXPECT_TRUE(std::equal(ca.agent->parameters().begin(), ca.agent->parameters().end(),
                         cb.agent->parameters().begin(), cb.agent->parameters().end()));
}

TEST_F(CliTest, RepeatedRunsGiveIdenticalMetrics) {
  const auto config = write("dc.toml", kQuickDc);
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", (root_ / "x").string(), "--workers", "1"}), 0);
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", (root_ / "y").string(), "--workers", "1"}), 0);
  EXPECT_EQ(slurp(root_ / "x" / "metrics.csv"), slurp(root_ / "y" / "metrics.csv"));
}

TEST_F(CliTest, BoundsAndCompareCommands) {
  const auto config = write("dc.toml", kQuickDc);
  const auto csv = root_ / "bounds.csv";
  ASSERT_EQ(run({"bounds", "--config", config.string(), "--out", csv.string(), "--grid", "1:30"}), 0);
  const auto text = slurp(csv);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 31);
  const auto merged = root_ / "merged.csv";
  ASSERT_EQ(run({"compare", csv.string(), csv.string(), "--out", merged.string()}), 0);
  EXPECT_EQ(slurp(merged).rfind("resource,", 0), 0u);
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  const auto bad = write("bad.toml", "[model]\nname = \"nv_dc\"\nunknown_key = 1\n");
  EXPECT_EQ(run({"train", "--config", bad.string(), "--out", (root_ / "bad").string()}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_NE(run({"train", "--out", (root_ / "nothing").string()}), 0);
  const auto config = write("dc.toml", kQuickDc);
  EXPECT_EQ(run({"eval", "--config", config.string(), "--out", (root_ / "e").string(), "--agent", "oracle"}), 1);
}

TEST_F(CliTest, LogLevelFromEnvironment) {
  const auto config = write("dc.toml", kQuickDc);
  setenv("QMETRO_LOG", "debug", 1);
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", (root_ / "debug").string()}), 0);
  const auto verbose = slurp(root_ / "debug" / "train.log");
  setenv("QMETRO_LOG", "error", 1);
  ASSERT_EQ(run({"train", "--config", config.string(), "--out", (root_ / "quiet").string()}), 0);
  const auto quiet = slurp(root_ / "quiet" / "train.log");
  EXPECT_NE(verbose.find("[debug]"), std::string::npos);
  EXPECT_EQ(quiet.find("[info]"), std::string::npos);
  EXPECT_LT(quiet.size(), verbose.size());
}

}  // namespace
}  // namespace qmetro
