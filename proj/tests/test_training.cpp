#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <vector>

#include "qmetro/tasks.hpp"
#include "qmetro/training.hpp"

namespace qmetro {
namespace {

NvTaskSettings dc_settings(BudgetKind kind, double amount, std::size_t max_steps, std::size_t particles = 200) {
  NvTaskSettings s;
  s.kind = NvKind::Dc;
  s.priors = {{"omega", 0.0, 1.0}};
  s.budget = {kind, amount, max_steps};
  s.loss.mode = LossMode::Terminal;
  s.particles = particles;
  return s;
}

std::vector<EpisodeOptions> seeds(std::uint64_t base, std::size_t count, bool differentiable = false) {
  std::vector<EpisodeOptions> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = {derive_seed(base, k), differentiable, std::nullopt};
  return out;
}

// Deterministic outcomes: every step loss is (f_t - target)^2 and every score term is log 1.
class DeterministicTask final : public Task {
 public:
  DeterministicTask() : budget_{BudgetKind::Measurements, 3.0, 3} {}
  std::string name() const override { return "deterministic"; }
  const ResourceBudget& budget() const override { return budget_; }
  std::vector<std::string> baselines() const override { return {}; }
  std::size_t agent_inputs() const override { return 0; }
  std::size_t agent_outputs() const override { return 1; }
  std::vector<std::string> agent_kinds() const override { return {"table"}; }
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override {
    EpisodeRecord record;
    Rng rng(options.seed);
    const double target = uniform01(rng);
    for (std::size_t t = 0; t < 3; ++t) {
      const auto out = policy.agent->forward({{}, t, 0});
      const ad::Real certain = ad::Real(1.0) + 0.0 * out[0];
      record.score.push_back(ad::log(certain));
      record.score_step.push_back(t);
      const ad::Real err = ad::square(out[0] - target);
      record.step_loss.push_back(err);
      record.precision.push_back(err.value());
      record.resource.push_back(static_cast<double>(t + 1));
    }
    return record;
  }

 private:
  ResourceBudget budget_;
};

TEST(Schedule, InverseSquareRootDecay) {
  EXPECT_DOUBLE_EQ(learning_rate(1e-3, 100.0, 0), 1e-3);
  EXPECT_NEAR(learning_rate(1e-3, 100.0, 300), 5e-4, 1e-18);
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
  AdamState adam;
  std::vector<double> params{1.0, -2.0};
  const std::vector<double> grad{0.3, -40.0};
  adam.step(params, grad, 0.01);
  EXPECT_NEAR(params[0], 0.99, 1e-6);
  EXPECT_NEAR(params[1], -1.99, 1e-6);
}

TEST(Loss, CumulativeArithmetic) {
  const std::vector<std::vector<double>> single{{0.5 / 0.25}};
  EXPECT_DOUBLE_EQ(cumulative_loss(single, 1), 2.0);
  const std::vector<std::vector<double>> zeros{{0.0, 0.0}, {0.0, 0.0}};
  EXPECT_DOUBLE_EQ(cumulative_loss(zeros, 2), 0.0);
  const std::vector<double> weights{1.0};
  const std::vector<double> widths{1.0};
  EXPECT_NEAR(eta_normalizer(weights, widths, EtaForm::Linear, 6.0).value(), 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(eta_normalizer(weights, widths, EtaForm::Linear, 20.0).value(), 1.0 / 20.0, 1e-15);
  const std::vector<double> wide{2.0};
  EXPECT_NEAR(eta_normalizer(weights, wide, EtaForm::Linear, 1.0).value(), 2.0 / 12.0, 1e-15);
  EXPECT_NEAR(eta_normalizer(weights, wide, EtaForm::Variance, 1.0).value(), 4.0 / 12.0, 1e-15);
}

TEST(Loss, LogArithmetic) {
  const std::vector<std::vector<double>> ones{{1.0, 1.0}, {1.0, 1.0}};
  EXPECT_DOUBLE_EQ(log_loss(ones, 2), 0.0);
  const double e = std::numbers::e;
  const std::vector<std::vector<double>> exps{{e, e * e}};
  EXPECT_NEAR(log_loss(exps, 2), 1.5, 1e-15);
  bool clamped = false;
  const std::vector<std::vector<double>> zero{{0.0}};
  EXPECT_NEAR(log_loss(zero, 1, &clamped), std::log(kLossFloor), 1e-12);
  EXPECT_TRUE(clamped);
}

TEST(Loss, BatchInvariances) {
  const std::vector<std::vector<double>> batch{{0.3, 0.1, 0.05}, {0.2, 0.4, 0.01}, {0.5, 0.2, 0.3}};
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  auto permuted = batch;
  std::rotate(permuted.begin(), permuted.begin() + 1, permuted.end());
  EXPECT_NEAR(log_loss(doubled, 3), log_loss(batch, 3), 1e-14);
  EXPECT_NEAR(log_loss(permuted, 3), log_loss(batch, 3), 1e-14);
  EXPECT_NEAR(cumulative_loss(doubled, 3), cumulative_loss(batch, 3), 1e-14);
  EXPECT_NEAR(cumulative_loss(permuted, 3), cumulative_loss(batch, 3), 1e-14);
}

TEST(Loss, DolinarVariants) {
  EXPECT_DOUBLE_EQ(dolinar_loss({0.9, 1, 3}, 0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(dolinar_loss({0.9, -1, 3}, 0, 0.1), 1.0);
  EXPECT_NEAR(dolinar_loss({0.9, -1, 3}, 1, 0.1), 0.9, 1e-15);
  EXPECT_NEAR(dolinar_loss({0.9, 1, 3}, 1, 0.1), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(dolinar_loss({0.2, 1, 2}, 2, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(dolinar_loss({0.2, 1, 3}, 2, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(dolinar_loss({0.2, -1, 3}, 2, 0.1), 0.0);
  EXPECT_NEAR(dolinar_loss({0.9, -1, 3}, 3, 0.1), 0.9, 1e-15);
  EXPECT_NEAR(dolinar_loss({0.9, -1, 3}, 6, 0.1), 10.0, 1e-12);
  const ad::Real p(0.9);
  EXPECT_NEAR(dolinar_loss(p, -1, 3, 4, 0.1).value(), dolinar_loss({0.9, -1, 3}, 4, 0.1), 1e-15);
}

TEST(Loss, ClassificationTieBreak) {
  const std::vector<double> w{0.4, 0.4, 0.2};
  EXPECT_DOUBLE_EQ(classification_loss(w, 0), 0.0);
  EXPECT_DOUBLE_EQ(classification_loss(w, 1), 1.0);
  EXPECT_DOUBLE_EQ(classification_loss(w, 2), 1.0);
}

TEST(Budget, TimeBudgetStopsOnCompletion) {
  const ResourceBudget budget{BudgetKind::TotalTime, 10.0, 100};
  double tally = 0.0;
  std::size_t steps = 0;
  while (!budget.exhausted(tally, steps)) {
    tally += 3.0;
    ++steps;
  }
  EXPECT_EQ(steps, 4u);
}

TEST(Episode, ConstantTauUnderTimeBudget) {
  const NvTask task(dc_settings(BudgetKind::TotalTime, 10.0, 50));
  ControlTable table(50, 1, 2.0 / task.prefactor());
  const auto record = task.run_episode({&table, {}}, {3, false, std::nullopt});
  ASSERT_EQ(record.steps(), 4u);
  for (const auto& c : record.controls) EXPECT_NEAR(c[0], 3.0, 1e-12);
  EXPECT_NEAR(record.resource.back(), 12.0, 1e-12);
}

TEST(Episode, TimeBudgetTallyEndsWithinOneStep) {
  const NvTask task(dc_settings(BudgetKind::TotalTime, 200.0, 500));
  for (const auto& baseline : task.baselines()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto record = task.run_episode({nullptr, baseline}, {seed, false, std::nullopt});
      ASSERT_FALSE(record.resource.empty());
      const double last_tau = record.controls.back()[0];
      EXPECT_GE(record.resource.back(), 200.0) << baseline;
      EXPECT_LT(record.resource.back() - last_tau, 200.0) << baseline;
      for (std::size_t t = 1; t < record.resource.size(); ++t) EXPECT_GE(record.resource[t], record.resource[t - 1]);
    }
  }
}

TEST(Episode, MeasurementBudgetCounts) {
  const NvTask five(dc_settings(BudgetKind::Measurements, 5.0, 5));
  const auto record = five.run_episode({nullptr, "sigma"}, {1, false, std::nullopt});
  EXPECT_EQ(record.outcomes.size(), 5u);
  EXPECT_EQ(record.steps(), 5u);
  const NvTask none(dc_settings(BudgetKind::Measurements, 0.0, 0));
  const auto empty = none.run_episode({nullptr, "sigma"}, {1, false, std::nullopt});
  EXPECT_EQ(empty.steps(), 0u);
  EXPECT_TRUE(empty.outcomes.empty());
  EXPECT_NEAR(precision_at(empty, 0.0), empty.prior_precision, 0.0);
}

TEST(Episode, PriorMeanEstimatorError) {
  const NvTask none(dc_settings(BudgetKind::Measurements, 0.0, 0));
  double total = 0.0;
  const int episodes = 20000;
  for (int k = 0; k < episodes; ++k) total += none.run_episode({nullptr, "sigma"}, {derive_seed(4, k), false, {}}).prior_precision;
  EXPECT_NEAR(total / episodes, 1.0 / 12.0, 0.003);
}

TEST(Episode, SeededRunsReproduce) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 10.0, 10));
  Rng rng = make_stream(9);
  const auto agent = task.make_agent("mlp", rng);
  const auto a = task.run_episode({agent.get(), {}}, {77, false, std::nullopt});
  const auto b = task.run_episode({agent.get(), {}}, {77, false, std::nullopt});
  EXPECT_EQ(a.precision, b.precision);
  EXPECT_EQ(a.controls, b.controls);
}

TEST(Gradient, ZeroMeasurementsGiveZeroGradient) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 0.0, 0));
  Rng rng = make_stream(1);
  const auto agent = task.make_agent("mlp", rng);
  const auto g = estimate_gradient(task, *agent, {LossMode::Terminal}, seeds(1, 8), 1);
  for (double x : g.gradient) EXPECT_EQ(x, 0.0);
}

TEST(Gradient, ReducesToPathwiseWhenOutcomesAreCertain) {
  const DeterministicTask task;
  ControlTable table(3, 1, 0.0);
  table.at(0, 0) = 0.1;
  table.at(1, 0) = 0.7;
  table.at(2, 0) = -0.4;
  const auto episodes = seeds(2, 16);
  const auto g = estimate_gradient(task, table, {LossMode::Cumulative}, episodes, 1);
  std::vector<double> expected(3, 0.0);
  for (const auto& e : episodes) {
    Rng rng(e.seed);
    const double target = uniform01(rng);
    for (std::size_t t = 0; t < 3; ++t) expected[t] += 2.0 * (table.at(t, 0) - target) / (3.0 * episodes.size());
  }
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(g.gradient[t], expected[t], 1e-14);
}

TEST(Gradient, IdenticalAcrossWorkerCounts) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 6.0, 6, 100));
  Rng rng = make_stream(3);
  const auto agent = task.make_agent("mlp", rng);
  const auto episodes = seeds(3, 24);
  const auto one = estimate_gradient(task, *agent, {LossMode::Log}, episodes, 1);
  const auto three = estimate_gradient(task, *agent, {LossMode::Log}, episodes, 3);
  EXPECT_EQ(one.loss, three.loss);
  EXPECT_EQ(one.gradient, three.gradient);
}

TEST(Training, ZeroStepsKeepTheInitialization) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 4.0, 4, 50));
  Rng rng = make_stream(4);
  auto agent = task.make_agent("mlp", rng);
  const std::vector<double> before(agent->parameters().begin(), agent->parameters().end());
  const auto dir = std::filesystem::temp_directory_path() / "qmetro_training_zero";
  std::filesystem::remove_all(dir);
  TrainerOptions opt;
  opt.steps = 0;
  opt.out_dir = dir;
  opt.config_hash = 17;
  const auto result = train(task, *agent, {LossMode::Log}, opt);
  EXPECT_TRUE(result.metrics.empty());
  const auto loaded = load_checkpoint(dir / "checkpoint.bin");
  EXPECT_EQ(std::vector<double>(loaded.agent->parameters().begin(), loaded.agent->parameters().end()), before);
  EXPECT_EQ(loaded.info.config_hash, 17u);
}

TEST(Training, MetricsCsvLayoutAndBitReproducibility) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 4.0, 4, 50));
  TrainerOptions opt;
  opt.steps = 3;
  opt.batch_size = 8;
  opt.seed = 5;
  Rng rng_a = make_stream(5);
  Rng rng_b = make_stream(5);
  auto a = task.make_agent("mlp", rng_a);
  auto b = task.make_agent("mlp", rng_b);
  const auto ra = train(task, *a, {LossMode::Log}, opt);
  const auto rb = train(task, *b, {LossMode::Log}, opt);
  ASSERT_EQ(ra.metrics.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(ra.metrics[s].loss, rb.metrics[s].loss);
  EXPECT_TRUE(std::equal(a->parameters().begin(), a->parameters().end(), b->parameters().begin()));
  std::ostringstream out;
  write_metrics_header(out);
  EXPECT_EQ(out.str(), "step,loss,grad_norm,lr,ess_min,aborted_episodes\n");
  std::ostringstream eval;
  write_eval_header(eval);
  EXPECT_EQ(eval.str(), "resource,precision_mean,precision_stderr,strategy\n");
}

TEST(Training, SupervisedFitReducesError) {
  Rng rng = make_stream(6);
  MlpAgent mlp({2, 16, 1}, rng);
  std::vector<PretrainSample> samples;
  for (int i = 0; i < 200; ++i) {
    const double x = uniform(rng, -1, 1);
    const double y = uniform(rng, -1, 1);
    samples.push_back({{x, y}, {0.5 * x - 0.25 * y}});
  }
  auto mse = [&] {
    double total = 0.0;
    for (const auto& s : samples) total += std::pow(mlp.evaluate(s.features)[0] - s.target[0], 2);
    return total / samples.size();
  };
  const double before = mse();
  fit_supervised(mlp, samples, 500, 1e-2, 7);
  EXPECT_LT(mse(), 0.1 * before);
}

TEST(Training, PretrainingFollowsTheRamp) {
  const NvTask task(dc_settings(BudgetKind::Measurements, 8.0, 8, 100));
  Rng rng = make_stream(8);
  auto table = task.make_agent("table", rng);
  task.pretrain(*table, 0, 1);
  const auto record = task.run_episode({table.get(), {}}, {1, false, std::nullopt});
  for (std::size_t t = 0; t < record.steps(); ++t) EXPECT_NEAR(record.controls[t][0], task.ramp_tau(t), 1e-9);
  EXPECT_DOUBLE_EQ(task.ramp_tau(0), 1.0);
  EXPECT_DOUBLE_EQ(task.ramp_tau(7), task.prefactor());
}

TEST(Training, ToyLossImprovesOverFiftySteps) {
  auto settings = dc_settings(BudgetKind::Measurements, 2.0, 2, 8);
  const NvTask task(settings);
  const auto eval_set = seeds(0xE7A1, 4000);
  auto eval_loss = [&](const Agent& agent) {
    const auto batch = run_batch(task, {&agent, {}}, eval_set, 1);
    return batch_loss(batch, {LossMode::Terminal}, task.max_steps());
  };
  int improved = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    AffineAgent agent(1, 0.05, 0.0);
    const double before = eval_loss(agent);
    TrainerOptions opt;
    opt.steps = 50;
    opt.batch_size = 64;
    opt.learning_rate = 0.02;
    opt.seed = derive_seed(0x70E, trial);
    train(task, agent, {LossMode::Terminal}, opt);
    if (eval_loss(agent) <= before) ++improved;
  }
  EXPECT_GE(improved, 45);
}

}  // namespace
}  // namespace qmetro
