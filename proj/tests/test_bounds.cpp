#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "qmetro/bounds.hpp"
#include "qmetro/random.hpp"

namespace qmetro {
namespace {

double relative(double value, double reference) { return std::abs(value - reference) / std::abs(reference); }

TEST(Constants, ReproducePrintedValues) {
  const auto& k = bound_constants();
  EXPECT_LT(relative(k.mu, 0.16190), 1e-3);
  EXPECT_LT(relative(k.gamma, 0.724611), 1e-3);
  EXPECT_NEAR(k.gamma, 0.724611, 1e-4);
  EXPECT_LT(relative(k.delta, 0.24429), 1e-3);
  EXPECT_LT(relative(k.chi, 0.23966), 1e-3);
  EXPECT_LT(relative(k.epsilon, 0.20687), 1e-3);
  EXPECT_LT(relative(k.eta, 0.10582), 1e-3);
  EXPECT_LT(relative(k.psi, 2.43013), 1e-3);
}

TEST(Constants, PriorTerms) {
  const CrbSettings s;
  EXPECT_NEAR(s.omega.prior_fisher(), 12.0, 1e-12);
  EXPECT_NEAR((UniformInterval{0.09, 0.11}.prior_fisher()), 3e4, 1e-6);
  EXPECT_NEAR(s.dec_inv_t.prior_fisher(), 1481.48, 1e-2);
  EXPECT_NEAR(s.dec_beta.prior_fisher(), 1.92, 1e-12);
  EXPECT_NEAR(s.dec_inv_t.mean_inverse_square(), 1000.0, 1e-9);
  EXPECT_NEAR(s.dec_inv_t.mean_inverse(), 25.5848, 1e-3);
  EXPECT_NEAR(s.dec_beta.mean_square(), 8.08332, 1e-3);
  EXPECT_NEAR(s.dec_beta.mean_inverse_square(), 0.16666, 1e-5);
}

TEST(Maximize, FindsInteriorMaximum) {
  const auto m = maximize_scalar([](double x) { return -(x - 0.3) * (x - 0.3) + 2.0; }, -1.0, 1.0, 50);
  EXPECT_NEAR(m.argmax, 0.3, 1e-7);
  EXPECT_NEAR(m.value, 2.0, 1e-12);
  EXPECT_THROW(maximize_scalar([](double x) { return x; }, 1.0, 0.0), std::invalid_argument);
}

TEST(Crb, TableExamples) {
  const std::vector<double> t{10.0};
  EXPECT_NEAR(crb_curve("nv_dc", "t2_inf", Regime::Time, t).bound[0], 1.0 / 112.0, 1e-12);
  EXPECT_NEAR(crb_curve("nv_dc", "t2_inf", Regime::Time, t).bound[0], 8.9286e-3, 1e-7);
  const std::vector<double> m{10.0};
  EXPECT_NEAR(crb_curve("nv_dc", "t2_inf", Regime::Measurements, m).bound[0], std::exp2(-22.0) / 3.0, 1e-20);
  EXPECT_NEAR(crb_curve("nv_dc", "t2_inf", Regime::Measurements, m).bound[0], 7.9473e-8, 1e-11);
  EXPECT_NEAR(crb_curve("nv_hyperfine", "t2_inf", Regime::Measurements, m).bound[0], std::exp2(-10.0) / 24.0, 1e-15);
  EXPECT_NEAR(bit_floor(10.0), std::exp2(-22.0) / 3.0, 1e-20);
}

TEST(Crb, EveryCaseIsFiniteAndNonincreasing) {
  const std::vector<double> grid{1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  for (const std::string task : {"nv_dc", "nv_ac", "nv_dec", "nv_hyperfine"}) {
    for (const auto& c : crb_cases(task)) {
      for (Regime regime : {Regime::Time, Regime::Measurements}) {
        const auto curve = crb_curve(task, c, regime, grid);
        ASSERT_EQ(curve.bound.size(), grid.size());
        EXPECT_EQ(curve.resource, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
          EXPECT_TRUE(std::isfinite(curve.bound[i]) && curve.bound[i] > 0.0) << task << ' ' << c;
          if (i > 0) EXPECT_LE(curve.bound[i], curve.bound[i - 1]) << task << ' ' << c;
        }
      }
    }
  }
}

TEST(Crb, UnknownCase) {
  const std::vector<double> grid{1.0};
  EXPECT_THROW(crb_curve("nv_dc", "beta_2", Regime::Time, grid), std::invalid_argument);
  EXPECT_THROW(crb_cases("dolinar"), std::invalid_argument);
}

TEST(Helstrom, Values) {
  EXPECT_DOUBLE_EQ(helstrom_error(0.0), 0.5);
  EXPECT_NEAR(helstrom_error(0.5), 0.5 * (1.0 - std::sqrt(1.0 - std::exp(-1.0))), 1e-15);
  EXPECT_NEAR(helstrom_error(0.5), 0.102470, 1e-6);
  EXPECT_NEAR(helstrom_error(0.0, 4), 0.5, 1e-12);
}

TEST(Helstrom, MonotoneInAmplitudeAndReferences) {
  for (double alpha : {0.2, 0.5, 1.0}) {
    double previous = 1.0;
    for (std::size_t n : {1, 2, 4, 8, 16, 64, 256, 1000}) {
      const double value = helstrom_error(alpha, n);
      EXPECT_LE(value, previous + 1e-15);
      EXPECT_GE(value, helstrom_error(alpha) - 1e-15);
      previous = value;
    }
  }
  for (std::size_t n : {1, 4, 100}) {
    double previous = 0.5;
    for (double alpha = 0.05; alpha < 1.5; alpha += 0.05) {
      EXPECT_LE(helstrom_error(alpha, n), previous + 1e-15);
      previous = helstrom_error(alpha, n);
    }
  }
}

TEST(Pgm, OrthogonalAndIdenticalStates) {
  const std::vector<double> priors{0.5, 0.5};
  const std::vector<std::vector<cplx>> orthogonal{{cplx(40.0, 0.0)}, {cplx(-40.0, 0.0)}};
  EXPECT_NEAR(pgm_error(orthogonal, priors), 0.0, 1e-12);
  const std::vector<std::vector<cplx>> identical{{cplx(0.3, 0.1)}, {cplx(0.3, 0.1)}};
  EXPECT_NEAR(pgm_error(identical, priors), 0.5, 1e-12);
}

TEST(Pgm, EqualsHelstromForTwoPureStates) {
  Rng rng = make_stream(1);
  const std::vector<double> priors{0.5, 0.5};
  for (int i = 0; i < 50; ++i) {
    const double alpha = uniform(rng, 1e-3, 1.5);
    const std::vector<std::vector<cplx>> states{{cplx(alpha, 0.0)}, {cplx(-alpha, 0.0)}};
    EXPECT_NEAR(pgm_error(states, priors), helstrom_error(alpha), 1e-9);
  }
}

TEST(Pgm, InvariantUnderCommonRotationAndRelabeling) {
  const std::vector<double> priors{0.2, 0.3, 0.5};
  const std::vector<std::vector<cplx>> states{{cplx(0.4, 0.1), cplx(0.2, 0.0)},
                                              {cplx(-0.3, 0.5), cplx(0.1, 0.3)},
                                              {cplx(0.0, -0.6), cplx(-0.2, 0.2)}};
  const double base = pgm_error(states, priors);
  auto rotated = states;
  for (auto& state : rotated)
    for (auto& z : state) z *= std::polar(1.0, 1.1);
  EXPECT_NEAR(pgm_error(rotated, priors), base, 1e-12);
  const std::vector<std::vector<cplx>> swapped{states[2], states[0], states[1]};
  const std::vector<double> swapped_priors{0.5, 0.2, 0.3};
  EXPECT_NEAR(pgm_error(swapped, swapped_priors), base, 1e-12);
}

TEST(CoherentOverlap, Formula) {
  const std::vector<cplx> a{cplx(0.3, 0.2)};
  const std::vector<cplx> b{cplx(-0.1, 0.4)};
  const cplx expected = std::exp(-0.5 * (std::norm(a[0]) + std::norm(b[0])) + std::conj(a[0]) * b[0]);
  EXPECT_NEAR(std::abs(coherent_overlap(a, b) - expected), 0.0, 1e-15);
}

TEST(Adder, Amplitude) { EXPECT_DOUBLE_EQ(adder_amplitude(4, 0.5), 1.0); }

TEST(ReferenceCurves, MultiphaseStrictlyDecreasing) {
  const std::vector<cplx> input{1.0, 0.0, 0.0, 0.0};
  double previous = multiphase_pgm_error(input, 1);
  EXPECT_GT(previous, 0.0);
  EXPECT_LT(previous, 7.0 / 8.0);
  for (std::size_t n = 2; n <= 16; ++n) {
    const double value = multiphase_pgm_error(input, n);
    EXPECT_LT(value, previous) << "copies " << n;
    previous = value;
  }
}

TEST(ReferenceCurves, ClassifierVanishesForManyCopies) {
  EXPECT_NEAR(classifier_pgm_error(3, 1.0, 0), 2.0 / 3.0, 1e-12);
  EXPECT_GT(classifier_pgm_error(3, 1.0, 1), classifier_pgm_error(3, 1.0, 4));
  EXPECT_LT(classifier_pgm_error(3, 1.0, 200), 1e-12);
}

TEST(ReferenceCurves, QmlReferenceIsAProbability) {
  const std::vector<double> edges{4.0, 8.0, 16.0, 40.0};
  const auto points = qml_reference(0.75, 4, 2000, edges, 3);
  ASSERT_FALSE(points.empty());
  for (const auto& p : points) {
    EXPECT_GE(p.error, 0.0);
    EXPECT_LE(p.error, 2.0 / 3.0 + 1e-12);
  }
}

TEST(Ramp, SlopeAndKStar) {
  const auto d = analytic_ramp(100);
  EXPECT_NEAR(d.slope, 2.0 / std::log2(1.66), 1e-12);
  EXPECT_NEAR(d.slope, 2.7353, 1e-4);
  EXPECT_NEAR(d.k_star, 8.551, 1e-3);
  EXPECT_GE(d.stages, 1u);
  for (int nu : d.nu) EXPECT_GE(nu, 1);
  int total = 0;
  for (int nu : d.nu) total += nu;
  EXPECT_LE(2 * total, 100);
  EXPECT_DOUBLE_EQ(d.bit_floor, bit_floor(100.0));
}

TEST(Ramp, BoundIsMonotoneAndRoundingIsMild) {
  double previous = INFINITY;
  for (std::size_t m = 16; m <= 1024; ++m) {
    const auto d = analytic_ramp(m);
    EXPECT_LE(d.bound, previous) << "M = " << m;
    previous = d.bound;
    if (m >= 64) EXPECT_LT(relative(d.bound, d.bound_continuous), 0.1) << "M = " << m;
  }
}

TEST(Ramp, InfeasibleBudgetFallsBackToOneStage) {
  const auto d = analytic_ramp(4);
  EXPECT_GE(d.stages, 1u);
  EXPECT_TRUE(std::isfinite(d.bound));
}

}  // namespace
}  // namespace qmetro
