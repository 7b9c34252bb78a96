#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <vector>

#include "qmetro/config.hpp"
#include "qmetro/tasks.hpp"

namespace qmetro {
namespace {

RunConfig small_config(const std::string& model) {
  auto c = default_config(model);
  c.nv.particles = 64;
  c.dolinar.particles = 64;
  c.qml.particles = 64;
  c.qml.copies = 2;
  c.multiphase.measurements = 4;
  return c;
}

TEST(Tasks, EveryModelRunsEveryBaselineAndAgent) {
  for (const auto& name : model_names()) {
    const auto task = make_task(small_config(name));
    for (const auto& baseline : task->baselines()) {
      const auto record = task->run_episode({nullptr, baseline}, {1, false, std::nullopt});
      EXPECT_FALSE(record.aborted) << name << ' ' << baseline;
      EXPECT_GT(record.steps(), 0u) << name << ' ' << baseline;
      EXPECT_EQ(record.precision.size(), record.resource.size());
      EXPECT_EQ(record.controls.size(), record.steps());
      for (double p : record.precision) EXPECT_TRUE(std::isfinite(p));
    }
    Rng rng = make_stream(2);
    for (const auto& kind : task->agent_kinds()) {
      if (kind == "tree" && name != "qml3") continue;
      const auto agent = task->make_agent(kind, rng);
      const auto record = task->run_episode({agent.get(), {}}, {3, true, std::nullopt});
      EXPECT_EQ(record.step_loss.size(), record.steps()) << name << ' ' << kind;
      EXPECT_EQ(record.score.size(), record.score_step.size());
    }
  }
}

TEST(Tasks, EvaluationRowsFollowTheGrid) {
  const auto task = make_task(small_config("nv_dc"));
  const std::vector<double> grid{1, 5, 10};
  const auto rows = task->evaluate({nullptr, "sigma"}, grid, 40, 3, 1);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i].resource, grid[i]);
    EXPECT_EQ(rows[i].strategy, "sigma");
    EXPECT_GT(rows[i].precision_stderr, 0.0);
  }
  EXPECT_LT(rows[2].precision_mean, rows[0].precision_mean);
}

TEST(Tasks, PrecisionAtUsesTheLatestAffordableEstimate) {
  EpisodeRecord r;
  r.prior_precision = 1.0;
  r.precision = {0.5, 0.25, 0.125};
  r.resource = {1.0, 3.0, 6.0};
  EXPECT_DOUBLE_EQ(precision_at(r, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(precision_at(r, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(precision_at(r, 5.0), 0.25);
  EXPECT_DOUBLE_EQ(precision_at(r, 100.0), 0.125);
}

TEST(Tasks, QmlResourceMatchesConsumedPhotons) {
  QmlSettings s;
  s.copies = 2;
  s.particles = 64;
  const QmlTask task(s);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto record = task.run_episode({nullptr, "nonoptimized"}, {seed, false, std::nullopt});
    ASSERT_EQ(record.steps(), task.measurements());
    double consumed = 0.0;
    for (const auto& o : record.outcomes) consumed += o[1];
    EXPECT_NEAR(consumed, record.key, 1e-9 * (1.0 + record.key));
  }
}

TEST(Tasks, DolinarRecordsCountsAndBayesGuesses) {
  DolinarSettings s;
  s.particles = 128;
  const DolinarTask task(s);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto record = task.run_episode({nullptr, "balanced"}, {seed, false, std::nullopt});
    ASSERT_EQ(record.outcomes.size(), s.references);
    for (const auto& o : record.outcomes) {
      ASSERT_EQ(o.size(), 2u);
      EXPECT_GE(o[0], 0.0);
      EXPECT_GE(o[1], 0.0);
    }
    for (double p : record.precision) EXPECT_TRUE(p == 0.0 || p == 1.0);
  }
}

TEST(Tasks, DolinarConditionedEvaluation) {
  DolinarSettings s;
  s.particles = 64;
  s.references = 2;
  const DolinarTask task(s);
  const std::vector<double> grid{0.3, 1.2};
  const auto rows = task.evaluate({nullptr, "balanced"}, grid, 200, 5, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[0].precision_mean, rows[1].precision_mean);
  for (const auto& r : rows) EXPECT_GE(r.precision_mean, helstrom_error(r.resource) - 3.0 * r.precision_stderr);
}

TEST(Tasks, MultiphaseHypothesesCoverTheCube) {
  std::vector<std::array<double, 3>> seen;
  for (std::size_t h = 0; h < 8; ++h) {
    const auto p = MultiphaseTask::hypothesis_phases(h);
    for (double x : p) EXPECT_TRUE(x == 0.0 || x == 1.0);
    for (const auto& q : seen) EXPECT_NE(q, p);
    seen.push_back(p);
  }
}

TEST(Tasks, ClassifierRegisterUsesRootsOfUnity) {
  BsClassifierSettings s;
  s.classes = 3;
  s.amplitude = 0.8;
  const BsClassifierTask task(s);
  const auto reg = task.input_register(1);
  ASSERT_EQ(reg.modes(), 4u);
  EXPECT_NEAR(std::abs(reg.amplitudes[0] - reg.amplitudes[2]), 0.0, 1e-15);
  for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(std::abs(reg.amplitudes[j]), 0.8, 1e-15);
  EXPECT_NEAR(std::arg(reg.amplitudes[2] / reg.amplitudes[1]), 2.0 * std::numbers::pi / 3.0, 1e-12);
}

TEST(Tasks, NvTaskValidatesItsSettings) {
  NvTaskSettings s;
  s.kind = NvKind::Dc;
  s.priors = {{"beta", 1.0, 2.0}};
  s.budget = {BudgetKind::Measurements, 5.0, 5};
  EXPECT_ANY_THROW(NvTask{s});
  s.priors = {{"omega", 0.0, 1.0}};
  s.budget = {BudgetKind::Photons, 5.0, 5};
  EXPECT_ANY_THROW(NvTask{s});
}

TEST(Tasks, HyperfinePriorRespectsTheOrdering) {
  const auto task = make_task(small_config("nv_hyperfine"));
  const auto& nv = dynamic_cast<const NvTask&>(*task);
  const auto ens = init_from_prior(nv.space(), 500, 3);
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto p = nv.to_params(ens.particle(i));
    EXPECT_GT(p.omega1, p.omega0);
  }
}

}  // namespace
}  // namespace qmetro
