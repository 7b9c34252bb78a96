#include "qmetro/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "qmetro/photonic.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

Maximum maximize_scalar(const std::function<double(double)>& f, double lower, double upper, std::size_t grid) {
  if (!(upper > lower) || grid < 3) throw std::invalid_argument("invalid maximization bracket");
  const double step = (upper - lower) / static_cast<double>(grid - 1);
  std::size_t best = 0;
  double best_value = -INFINITY;
  for (std::size_t i = 0; i < grid; ++i) {
    const double v = f(lower + step * static_cast<double>(i));
    if (std::isfinite(v) && v > best_value) {
      best_value = v;
      best = i;
    }
  }
  if (!std::isfinite(best_value)) throw std::runtime_error("objective is not finite anywhere in the bracket");
  double a = lower + step * static_cast<double>(best > 0 ? best - 1 : 0);
  double b = lower + step * static_cast<double>(std::min(best + 1, grid - 1));
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a);
  double d = a + ratio * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 200 && (b - a) > 1e-14 * (1.0 + std::abs(a)); ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = f(d);
    }
  }
  Maximum out{0.5 * (a + b), f(0.5 * (a + b))};
  if (best_value > out.value) out = {lower + step * static_cast<double>(best), best_value};
  return out;
}

namespace {

// e^{-2x} / (1 - e^{-2x})
double decay_ratio(double x) { return std::exp(-2.0 * x) / -std::expm1(-2.0 * x); }

// Maximizes g(x) over x > 0 on a logarithmic grid; returns the argmax in x.
Maximum maximize_positive(const std::function<double(double)>& g, double log_lo = -30.0, double log_hi = 4.0) {
  const auto m = maximize_scalar([&](double t) { return g(std::exp(t)); }, log_lo, log_hi, 6000);
  return {std::exp(m.argmax), m.value};
}

Maximum maximize_over_beta(const std::function<double(double, double)>& g) {
  const auto outer = maximize_scalar(
      [&](double beta) { return maximize_positive([&](double x) { return g(x, beta); }).value; }, 1.5, 4.0, 26);
  return outer;
}

}  // namespace

BoundConstants maximize_fi_objectives() {
  BoundConstants c;
  const auto mu = maximize_positive([](double x) { return x * x * decay_ratio(x); });
  c.mu = mu.value;
  c.alpha_measurement = mu.argmax;
  c.delta = maximize_over_beta([](double x, double beta) { return std::pow(x, 2.0 - 1.0 / beta) * decay_ratio(x); })
                .value;
  const auto chi = maximize_positive([](double x) {
    const double l = std::log(x);
    return x * x * decay_ratio(x) * l * l;
  });
  c.chi = chi.value;
  c.eta = chi.argmax;
  const auto eps = maximize_positive([](double x) { return std::pow(x, 1.5) * decay_ratio(x); });
  c.epsilon = eps.value;
  c.alpha_time = eps.argmax;
  c.psi = maximize_over_beta([](double x, double beta) {
            const double l = std::log(x);
            return std::pow(x, 2.0 - 1.0 / beta) * decay_ratio(x) * l * l;
          }).value;
  c.gamma = maximize_positive([](double x) { return std::sin(x) * std::sin(x) / x; }, -10.0, 3.0).value;
  return c;
}

const BoundConstants& bound_constants() {
  static const BoundConstants constants = maximize_fi_objectives();
  return constants;
}

std::string to_string(Regime regime) { return regime == Regime::Time ? "time" : "measurements"; }

Regime parse_regime(const std::string& name) {
  if (name == "time") return Regime::Time;
  if (name == "measurements" || name == "measurement") return Regime::Measurements;
  throw std::invalid_argument("unknown regime '" + name + "'");
}

double UniformInterval::mean_square() const {
  return (upper * upper * upper - lower * lower * lower) / (3.0 * (upper - lower));
}

double UniformInterval::mean_inverse() const { return std::log(upper / lower) / (upper - lower); }

double UniformInterval::mean_inverse_square() const { return (1.0 / lower - 1.0 / upper) / (upper - lower); }

double bit_floor(double measurements) { return std::exp2(-2.0 * (measurements + 1.0)) / 3.0; }

std::vector<std::string> crb_cases(const std::string& task) {
  if (task == "nv_dc" || task == "nv_ac") return {"t2_inf", "t2_known", "t2_interval"};
  if (task == "nv_dec") return {"beta_nuisance", "beta_2", "both"};
  if (task == "nv_hyperfine") return {"t2_inf", "t2_known"};
  throw std::invalid_argument("no bound table for task '" + task + "'");
}

BoundCurve crb_curve(const std::string& task, const std::string& case_name, Regime regime,
                     std::span<const double> grid, const CrbSettings& s) {
  const auto cases = crb_cases(task);
  if (std::find(cases.begin(), cases.end(), case_name) == cases.end())
    throw std::invalid_argument("unknown bound case '" + case_name + "' for task '" + task + "'");
  const auto& k = bound_constants();
  const bool time = regime == Regime::Time;

  std::function<double(double)> f;
  if (task == "nv_dc") {
    const double i_omega = s.omega.prior_fisher();
    const double i_rate = s.inv_t2.prior_fisher();
    const double e_t2 = s.inv_t2.mean_inverse();
    const double e_t2sq = s.inv_t2.mean_inverse_square();
    if (case_name == "t2_inf") {
      f = time ? std::function<double(double)>([=](double t) { return 1.0 / (t * t + i_omega); })
               : [](double m) { return bit_floor(m); };
    } else if (case_name == "t2_known") {
      const double t2 = s.t2;
      f = time ? std::function<double(double)>([=](double t) { return 1.0 / (0.5 * t * t2 + i_omega); })
               : [=](double m) { return std::max(bit_floor(m), 1.0 / (k.mu * m * t2 * t2 + i_omega)); };
    } else {
      f = time ? std::function<double(double)>([=](double t) {
        return 1.0 / (0.5 * t * e_t2 + i_omega) + 1.0 / (0.5 * t * e_t2 + i_rate);
      })
               : [=](double m) {
                   return 1.0 / (k.mu * m * e_t2sq + i_omega) + 1.0 / (k.mu * m * e_t2sq + i_rate);
                 };
    }
  } else if (task == "nv_ac") {
    const double w = s.ac_frequency;
    const double i_field = s.field.prior_fisher();
    const double i_rate = s.inv_t2.prior_fisher();
    const double e_t2 = s.inv_t2.mean_inverse();
    const double e_t2sq = s.inv_t2.mean_inverse_square();
    const auto field_time = [=](double t) { return 1.0 / (k.gamma * t / w + i_field); };
    const auto field_meas = [=](double m) { return 1.0 / (m / (w * w) + i_field); };
    if (case_name == "t2_interval") {
      f = time ? std::function<double(double)>(
                     [=](double t) { return field_time(t) + 1.0 / (0.5 * t * e_t2 + i_rate); })
               : [=](double m) { return field_meas(m) + 1.0 / (k.mu * m * e_t2sq + i_rate); };
    } else {
      f = time ? std::function<double(double)>(field_time)
               : [=](double m) { return std::max(bit_floor(m), field_meas(m)); };
    }
  } else if (task == "nv_dec") {
    const double i_rate = s.dec_inv_t.prior_fisher();
    const double i_beta = s.dec_beta.prior_fisher();
    const double e_t = s.dec_inv_t.mean_inverse();
    const double e_tsq = s.dec_inv_t.mean_inverse_square();
    const double e_rate = s.dec_inv_t.mean();
    const double e_beta2 = s.dec_beta.mean_square();
    const double e_beta_m2 = s.dec_beta.mean_inverse_square();
    const auto rate_time = [=](double t) { return 1.0 / (k.delta * t * e_t * e_beta2 + i_rate); };
    const auto rate_meas = [=](double m) { return 1.0 / (k.mu * m * e_tsq * e_beta2 + i_rate); };
    if (case_name == "beta_nuisance") {
      f = time ? std::function<double(double)>(rate_time) : rate_meas;
    } else if (case_name == "beta_2") {
      f = time ? std::function<double(double)>([=](double t) { return 1.0 / (4.0 * k.epsilon * t * e_t + i_rate); })
               : [=](double m) { return 1.0 / (4.0 * k.mu * m * e_tsq + i_rate); };
    } else {
      f = time ? std::function<double(double)>([=](double t) {
        return 1.0 / (k.psi * t * e_rate * e_beta_m2 + i_beta) + rate_time(t);
      })
               : [=](double m) { return 1.0 / (k.chi * m * e_beta_m2 + i_beta) + rate_meas(m); };
    }
  } else {
    const double i_omega = s.hyperfine_prior_fisher;
    const double t2 = s.t2;
    const auto floor = [](double m) { return std::exp2(-m) / 24.0; };
    if (case_name == "t2_inf") {
      f = time ? std::function<double(double)>([=](double t) { return 2.0 / (0.25 * t * t + i_omega); })
               : floor;
    } else {
      f = time ? std::function<double(double)>([=](double t) { return 2.0 / (0.125 * t * t2 + i_omega); })
               : [=](double m) { return std::max(floor(m), 2.0 / (0.25 * k.mu * m * t2 * t2 + i_omega)); };
    }
  }

  BoundCurve curve{task, case_name, regime, {grid.begin(), grid.end()}, {}};
  curve.bound.reserve(grid.size());
  for (double r : grid) curve.bound.push_back(f(r));
  return curve;
}

double helstrom_error(double alpha) {
  return 0.5 * (1.0 - std::sqrt(-std::expm1(-4.0 * alpha * alpha)));
}

double helstrom_error(double alpha, std::size_t references) {
  if (references == 0) throw std::invalid_argument("at least one reference copy is required");
  const double n = static_cast<double>(references);
  const double mean = (n + 1.0) * alpha * alpha;
  const double log_ratio = std::log((n - 1.0) / (n + 1.0));
  double accumulated = 0.0;
  double mass = 0.0;
  for (int k = 0;; ++k) {
    const double p = poisson_pmf(mean, k);
    mass += p;
    const double overlap_sq = references == 1 ? (k == 0 ? 1.0 : 0.0) : std::exp(2.0 * k * log_ratio);
    accumulated += p * std::sqrt(std::max(0.0, 1.0 - overlap_sq));
    if (k > mean && 1.0 - mass < 1e-12) break;
  }
  return 0.5 * (1.0 - accumulated);
}

cplx coherent_overlap(std::span<const cplx> a, std::span<const cplx> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mode count mismatch in overlap");
  cplx exponent = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m)
    exponent += -0.5 * (std::norm(a[m]) + std::norm(b[m])) + std::conj(a[m]) * b[m];
  return std::exp(exponent);
}

double pgm_success(const std::vector<std::vector<cplx>>& states, std::span<const double> priors) {
  const auto m = static_cast<Eigen::Index>(states.size());
  if (priors.size() != states.size() || m == 0) throw std::invalid_argument("states and priors must match");
  Eigen::MatrixXcd gram(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      gram(i, j) = std::sqrt(priors[i] * priors[j]) * coherent_overlap(states[i], states[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(gram);
  Eigen::VectorXd ev = solver.eigenvalues();
  const double cutoff = 1e-13 * ev.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10) throw std::runtime_error("Gram matrix is not positive semidefinite");
    ev[i] = ev[i] > cutoff ? std::sqrt(ev[i]) : 0.0;
  }
  const Eigen::MatrixXcd root = solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().adjoint();
  double success = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) success += std::norm(root(j, j));
  return success;
}

double pgm_error(const std::vector<std::vector<cplx>>& states, std::span<const double> priors) {
  return 1.0 - pgm_success(states, priors);
}

double adder_amplitude(std::size_t copies, double alpha) { return std::sqrt(static_cast<double>(copies)) * alpha; }

double multiphase_pgm_error(std::span<const cplx> input, std::size_t copies) {
  CoherentRegister reg{{input.begin(), input.end()}};
  const double scale = std::sqrt(static_cast<double>(copies));
  std::vector<std::vector<cplx>> states;
  for (int h = 0; h < 8; ++h) {
    const std::array<double, 3> phases{double(h & 1), double((h >> 1) & 1), double((h >> 2) & 1)};
    auto enc = encode_multiphase(reg, phases);
    for (auto& a : enc.amplitudes) a *= scale;
    states.push_back(enc.amplitudes);
  }
  const std::vector<double> priors(8, 1.0 / 8.0);
  return pgm_error(states, priors);
}

double classifier_pgm_error(std::size_t classes, double amplitude, std::size_t copies) {
  std::vector<std::vector<cplx>> states;
  const double scale = std::sqrt(static_cast<double>(copies)) * amplitude;
  for (std::size_t s = 0; s < classes; ++s)
    states.push_back({std::polar(scale, 2.0 * std::numbers::pi * static_cast<double>(s) / classes)});
  const std::vector<double> priors(classes, 1.0 / static_cast<double>(classes));
  return pgm_error(states, priors);
}

std::vector<QmlReferencePoint> qml_reference(double half_width, std::size_t copies, std::size_t samples,
                                             std::span<const double> bin_edges, std::uint64_t seed) {
  if (bin_edges.size() < 2) throw std::invalid_argument("need at least one photon-number bin");
  std::vector<QmlReferencePoint> bins(bin_edges.size() - 1);
  std::vector<double> photon_sum(bins.size(), 0.0);
  std::vector<double> error_sum(bins.size(), 0.0);
  Rng rng(seed);
  const std::vector<double> priors(3, 1.0 / 3.0);
  for (std::size_t k = 0; k < samples; ++k) {
    std::vector<std::vector<cplx>> states;
    double total = 0.0;
    for (int j = 0; j < 3; ++j) {
      const cplx a(uniform(rng, -half_width, half_width), uniform(rng, -half_width, half_width));
      states.push_back({a});
      total += std::norm(a);
    }
    const double error = pgm_error(states, priors);
    for (int s = 0; s < 3; ++s) {
      const double photons = 2.0 * static_cast<double>(copies) * total + std::norm(states[s][0]);
      const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), photons);
      if (it == bin_edges.begin() || it == bin_edges.end()) continue;
      const auto b = static_cast<std::size_t>(it - bin_edges.begin() - 1);
      photon_sum[b] += photons;
      error_sum[b] += error;
      ++bins[b].samples;
    }
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].samples == 0) continue;
    bins[b].mean_photons = photon_sum[b] / static_cast<double>(bins[b].samples);
    bins[b].error = error_sum[b] / static_cast<double>(bins[b].samples);
  }
  return bins;
}

namespace {

double stage_coefficient(std::size_t j, std::size_t base) {
  const double b = static_cast<double>(base);
  const double n = b + 1.0;
  const double c = 2.0 * std::numbers::pi * b / (n * std::pow(b, static_cast<double>(j) - 2.0) * (b - 1.0));
  return c * c * kRampA;
}

double final_stage_term(std::size_t stages, std::size_t base) {
  const double b = static_cast<double>(base);
  const double c = std::numbers::pi / ((b + 1.0) * std::pow(b, static_cast<double>(stages) - 1.0));
  return c * c;
}

}  // namespace

double ramp_bound(std::span<const double> nu, std::size_t base) {
  double total = final_stage_term(nu.size(), base);
  for (std::size_t j = 1; j <= nu.size(); ++j) total += stage_coefficient(j, base) * std::pow(kRampC, -nu[j - 1]);
  return total;
}

MeasurementDistribution analytic_ramp(std::size_t measurements, std::size_t base) {
  if (measurements < 4) throw std::invalid_argument("analytic ramp needs at least four measurements");
  if (base < 2) throw std::invalid_argument("ramp base must be at least 2");
  MeasurementDistribution out;
  out.measurements = measurements;
  out.base = base;
  const double m = static_cast<double>(measurements);
  const double log_c = std::log(kRampC) / std::log(static_cast<double>(base));
  out.slope = 2.0 / log_c;
  out.k_star = std::sqrt(log_c) * std::sqrt(m);
  {
    // M = K (1 - 1/L) + K^2 / L with nu_K = 1
    const double a = 1.0 / log_c;
    const double b = 1.0 - 1.0 / log_c;
    out.k_star_exact = (-b + std::sqrt(b * b + 4.0 * a * m)) / (2.0 * a);
  }
  out.bit_floor = bit_floor(m);

  const std::size_t budget = measurements / 2;
  const auto stage_limit = std::min(budget, static_cast<std::size_t>(out.k_star) + 8);
  double best = INFINITY;
  for (std::size_t stages = 1; stages <= stage_limit; ++stages) {
    std::vector<int> nu(stages, 1);
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry> gains;
    for (std::size_t j = 1; j <= stages; ++j)
      gains.push({stage_coefficient(j, base) * std::pow(kRampC, -1.0) * (1.0 - 1.0 / kRampC), j});
    for (std::size_t extra = stages; extra < budget; ++extra) {
      const auto [gain, j] = gains.top();
      gains.pop();
      ++nu[j - 1];
      gains.push({gain / kRampC, j});
    }
    const std::vector<double> real_nu(nu.begin(), nu.end());
    const double bound = ramp_bound(real_nu, base);
    if (bound < best) {
      best = bound;
      out.stages = stages;
      out.nu = nu;
    }
  }
  out.bound = best;

  const double k = static_cast<double>(out.stages);
  const double nu_last = static_cast<double>(budget) / k - (k - 1.0) / log_c;
  out.nu_continuous.resize(out.stages);
  for (std::size_t j = 1; j <= out.stages; ++j)
    out.nu_continuous[j - 1] = nu_last + out.slope * (k - static_cast<double>(j));
  out.bound_continuous = ramp_bound(out.nu_continuous, base);
  return out;
}

}  // namespace qmetro
