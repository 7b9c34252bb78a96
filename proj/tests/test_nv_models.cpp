#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "qmetro/nv_models.hpp"
#include "qmetro/random.hpp"

namespace qmetro {
namespace {

constexpr double kPi = std::numbers::pi;

double& field_of(NvParams& params, const std::string& name) {
  if (name == "omega") return params.omega;
  if (name == "field") return params.field;
  if (name == "inv_t2" || name == "inv_t") return params.inv_t2;
  if (name == "beta") return params.beta;
  if (name == "omega0") return params.omega0;
  return params.omega1;
}

NvParams random_point(NvKind kind, Rng& rng) {
  NvParams p;
  p.omega = uniform(rng, 0.0, 1.0);
  p.field = uniform(rng, 0.1, 1.0);
  p.inv_t2 = kind == NvKind::Decoherence ? uniform(rng, 0.01, 0.1) : uniform(rng, 0.0, 0.2);
  p.beta = uniform(rng, 1.5, 4.0);
  p.omega0 = uniform(rng, 0.0, 0.5);
  p.omega1 = uniform(rng, 0.5, 1.0);
  return p;
}

TEST(DcLikelihood, Examples) {
  NvParams p;
  EXPECT_DOUBLE_EQ(dc_likelihood(1, p, {3.7, 0.0}), 1.0 - 1e-12);
  p.omega = kPi / 2.0;
  EXPECT_NEAR(dc_likelihood(1, p, {2.0, 0.0}), 0.0, 1e-12);
  p.omega = 0.0;
  p.inv_t2 = 0.25;
  EXPECT_NEAR(dc_likelihood(1, p, {4.0, 0.0}), 0.683940, 1e-6);
  EXPECT_NEAR(dc_likelihood(1, p, {4.0, 0.0}) + dc_likelihood(-1, p, {4.0, 0.0}), 1.0, 1e-15);
}

TEST(DcLikelihood, SquaredDephasingExponent) {
  NvParams p;
  p.inv_t2 = 0.5;
  EXPECT_NEAR(dc_likelihood(1, p, {4.0, 0.0}, 2), 0.5 * (1.0 + std::exp(-4.0)), 1e-15);
}

TEST(DcLikelihood, PeriodicInPhase) {
  NvParams p;
  p.omega = 0.37;
  const NvControls a{2.0, 0.3};
  const NvControls b{2.0, 0.3 + 2.0 * kPi};
  EXPECT_NEAR(dc_likelihood(1, p, a), dc_likelihood(1, p, b), 1e-12);
}

TEST(AcLikelihood, Examples) {
  NvParams p;
  p.inv_t2 = 0.1;
  EXPECT_NEAR(ac_likelihood(1, p, {3.0, 0.0}, 0.2), 0.5 * (1.0 + std::exp(-0.3)), 1e-15);
  p.field = 0.8;
  EXPECT_NEAR(ac_likelihood(1, p, {kPi / 0.2, 0.0}, 0.2), 0.5 * (1.0 + std::exp(-0.1 * kPi / 0.2)), 1e-12);
  p.field = 0.5;
  p.inv_t2 = 0.0;
  EXPECT_NEAR(ac_likelihood(1, p, {2.0, 0.0}, 0.2), 0.5 + 0.5 * std::cos(2.5 * std::sin(0.4)), 1e-15);
  EXPECT_NEAR(ac_likelihood(1, p, {2.0, 0.0}, 0.2), 0.781, 1e-3);
}

TEST(DecoherenceLikelihood, Examples) {
  NvParams p;
  p.inv_t2 = 0.05;
  p.beta = 3.1;
  EXPECT_NEAR(decoherence_likelihood(1, p, {20.0, 0.0}), 0.683940, 1e-6);
  EXPECT_NEAR(decoherence_likelihood(1, p, {1e-9, 0.0}), 1.0, 1e-12);
  p.beta = 2.0;
  EXPECT_NEAR(decoherence_likelihood(1, p, {40.0, 0.0}), 0.509158, 1e-6);
}

TEST(HyperfineLikelihood, Examples) {
  NvParams p;
  p.omega0 = 0.2;
  p.omega1 = 0.8;
  EXPECT_NEAR(hyperfine_likelihood(1, p, {5.0, 0.0}), 0.4716647, 1e-6);
  p.omega0 = p.omega1 = 0.43;
  p.inv_t2 = 0.07;
  NvParams dc;
  dc.omega = 0.43;
  dc.inv_t2 = 0.07;
  EXPECT_NEAR(hyperfine_likelihood(1, p, {3.3, 0.0}), dc_likelihood(1, dc, {3.3, 0.0}), 1e-15);
  p.omega0 = 0.1;
  p.omega1 = kPi / 2.0 - 0.1;
  p.inv_t2 = 0.0;
  EXPECT_NEAR(hyperfine_likelihood(1, p, {2.0, 0.0}), 0.5, 1e-12);
}

TEST(HyperfineLikelihood, SymmetricAndPhaseSwitch) {
  NvParams p;
  p.omega0 = 0.21;
  p.omega1 = 0.64;
  p.inv_t2 = 0.03;
  NvParams swapped = p;
  std::swap(swapped.omega0, swapped.omega1);
  const NvControls c{4.2, 0.9};
  EXPECT_NEAR(hyperfine_likelihood(1, p, c), hyperfine_likelihood(1, swapped, c), 1e-15);
  EXPECT_NE(hyperfine_likelihood(1, p, c, true), hyperfine_likelihood(1, p, c, false));
  EXPECT_NEAR(hyperfine_likelihood(1, p, c, false), hyperfine_likelihood(1, p, {4.2, 0.0}, true), 1e-15);
  const NvModel with_phase(NvKind::Hyperfine, {1, true, 0.2});
  const NvModel without_phase(NvKind::Hyperfine, {1, false, 0.2});
  EXPECT_NEAR(with_phase.probability(1, p, c), hyperfine_likelihood(1, p, c, true), 1e-15);
  EXPECT_NEAR(without_phase.probability(1, p, c), hyperfine_likelihood(1, p, c, false), 1e-15);
}

TEST(NvModel, OutcomesSumToOne) {
  Rng rng = make_stream(1);
  for (NvKind kind : {NvKind::Dc, NvKind::Ac, NvKind::Decoherence, NvKind::Hyperfine}) {
    const NvModel model(kind);
    for (int i = 0; i < 100; ++i) {
      const NvParams p = random_point(kind, rng);
      const NvControls c{uniform(rng, 0.5, 30.0), uniform(rng, 0.0, kPi)};
      EXPECT_NEAR(model.probability(1, p, c) + model.probability(-1, p, c), 1.0, 1e-15);
    }
  }
}

TEST(NvModel, DifferentiableProbabilityMatchesValue) {
  Rng rng = make_stream(2);
  for (NvKind kind : {NvKind::Dc, NvKind::Ac, NvKind::Decoherence, NvKind::Hyperfine}) {
    const NvModel model(kind);
    const NvParams p = random_point(kind, rng);
    const double tau = 3.7;
    const double phi = 0.4;
    ad::Tape tape;
    ad::ScopedTape scope(&tape);
    const ad::Real t = ad::variable(tau);
    const ad::Real f = ad::variable(phi);
    const ad::Real prob = model.probability(1, p, t, f);
    EXPECT_NEAR(prob.value(), model.probability(1, p, {tau, phi}), 1e-15);
    tape.seed(prob, 1.0);
    tape.backward({});
    const double h = 1e-6;
    EXPECT_NEAR(tape.adjoint(t.id()),
                (model.probability(1, p, {tau + h, phi}) - model.probability(1, p, {tau - h, phi})) / (2 * h), 1e-7);
    EXPECT_NEAR(tape.adjoint(f.id()),
                (model.probability(1, p, {tau, phi + h}) - model.probability(1, p, {tau, phi - h})) / (2 * h), 1e-7);
  }
}

TEST(FisherInformation, DcWithoutDephasingIsTauSquared) {
  const NvModel model(NvKind::Dc);
  NvParams p;
  p.omega = 0.31;
  for (double tau : {0.5, 1.0, 2.0, 7.0}) {
    const auto fi = model.fisher_information(p, {tau, 0.2});
    ASSERT_FALSE(fi.saturated);
    EXPECT_NEAR(fi.values[0], tau * tau, 1e-9 * tau * tau);
  }
}

TEST(FisherInformation, AcVanishesAtSineNode) {
  const NvModel model(NvKind::Ac, {1, true, 0.2});
  NvParams p;
  p.field = 0.6;
  p.inv_t2 = 0.05;
  const auto fi = model.fisher_information(p, {kPi / 0.2, 0.0});
  EXPECT_NEAR(fi.values[0], 0.0, 1e-20);
}

TEST(FisherInformation, SaturatedAtCertainOutcome) {
  const NvModel model(NvKind::Dc);
  NvParams p;
  EXPECT_TRUE(model.fisher_information(p, {1.0, 0.0}).saturated);
}

TEST(FisherInformation, MatchesFiniteDifferencesForEveryModel) {
  Rng rng = make_stream(3);
  for (NvKind kind : {NvKind::Dc, NvKind::Ac, NvKind::Decoherence, NvKind::Hyperfine}) {
    const NvModel model(kind);
    const auto& names = model.parameter_names();
    int checked = 0;
    while (checked < 100) {
      NvParams p = random_point(kind, rng);
      const NvControls c{uniform(rng, 0.5, 20.0), uniform(rng, 0.0, kPi)};
      const double prob = model.probability(1, p, c);
      if (prob < 1e-3 || prob > 1.0 - 1e-3) continue;
      const auto fi = model.fisher_information(p, c);
      ASSERT_FALSE(fi.saturated);
      for (std::size_t j = 0; j < names.size(); ++j) {
        NvParams plus = p;
        NvParams minus = p;
        const double h = 1e-6 * std::max(1.0, std::abs(field_of(p, names[j])));
        field_of(plus, names[j]) += h;
        field_of(minus, names[j]) -= h;
        const double dp = (model.probability(1, plus, c) - model.probability(1, minus, c)) / (2 * h);
        const double expected = dp * dp / (prob * (1.0 - prob));
        EXPECT_NEAR(fi.values[j], expected, 1e-6 * std::max(expected, 1e-3))
            << names[j] << " kind " << static_cast<int>(kind);
      }
      ++checked;
    }
  }
}

TEST(FisherInformation, DecoherenceMatchesLogLikelihoodDifferences) {
  const NvModel model(NvKind::Decoherence);
  NvParams p;
  p.inv_t2 = 0.04;
  p.beta = 2.3;
  const NvControls c{18.0, 0.0};
  const auto fi = model.fisher_information(p, c);
  for (std::size_t j = 0; j < 2; ++j) {
    const std::string& name = model.parameter_names()[j];
    double expected = 0.0;
    for (int y : {1, -1}) {
      NvParams plus = p;
      NvParams minus = p;
      const double h = 1e-6;
      field_of(plus, name) += h;
      field_of(minus, name) -= h;
      const double score = (model.log_likelihood(y, plus, c) - model.log_likelihood(y, minus, c)) / (2 * h);
      expected += model.probability(y, p, c) * score * score;
    }
    EXPECT_NEAR(fi.values[j], expected, 1e-6 * expected) << name;
  }
}

TEST(SampleOutcome, DeterministicEdgesAndFrequency) {
  const NvModel model(NvKind::Dc);
  Rng rng = make_stream(4);
  NvParams certain;
  NvParams impossible;
  impossible.omega = kPi;
  int plus = 0;
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(model.sample_outcome(certain, {1.0, 0.0}, rng), 1);
    EXPECT_EQ(model.sample_outcome(impossible, {1.0, 0.0}, rng), -1);
  }
  NvParams p;
  const double target = 0.7;
  const double angle = std::acos(2.0 * target - 1.0);
  p.omega = angle;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) plus += model.sample_outcome(p, {1.0, 0.0}, rng) == 1 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(plus) / draws, target, 0.005);
}

TEST(NvModel, ParameterNames) {
  EXPECT_EQ(NvModel(NvKind::Dc).parameter_names(), (std::vector<std::string>{"omega", "inv_t2"}));
  EXPECT_EQ(NvModel(NvKind::Ac).parameter_names(), (std::vector<std::string>{"field", "inv_t2"}));
  EXPECT_EQ(NvModel(NvKind::Decoherence).parameter_names(), (std::vector<std::string>{"inv_t", "beta"}));
  EXPECT_EQ(NvModel(NvKind::Hyperfine).parameter_names(),
            (std::vector<std::string>{"omega0", "omega1", "inv_t2"}));
  EXPECT_EQ(parse_nv_kind("nv_dec"), NvKind::Decoherence);
}

}  // namespace
}  // namespace qmetro
