#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qmetro {

struct Maximum {
  double argmax = 0.0;
  double value = 0.0;
};

// Grid scan followed by golden-section refinement of the best bracket.
Maximum maximize_scalar(const std::function<double(double)>& f, double lower, double upper,
                        std::size_t grid = 4000);

struct BoundConstants {
  double mu = 0.0;       // sup x^2 e^{-2x} / (1 - e^{-2x})
  double delta = 0.0;    // sup over x and beta in (1.5, 4) of x^{2-1/beta} e^{-2x} / (1 - e^{-2x})
  double chi = 0.0;      // sup x^2 e^{-2x} log^2 x / (1 - e^{-2x})
  double epsilon = 0.0;  // sup x^{3/2} e^{-2x} / (1 - e^{-2x})
  double eta = 0.0;      // argmax of the chi objective
  double psi = 0.0;      // sup over x and beta of x^{2-1/beta} e^{-2x} log^2 x / (1 - e^{-2x})
  double gamma = 0.0;    // sup sin^2 x / x
  double alpha_measurement = 0.0;  // argmax of the mu objective
  double alpha_time = 0.0;         // argmax of the epsilon objective
};

BoundConstants maximize_fi_objectives();
const BoundConstants& bound_constants();

enum class Regime { Time, Measurements };
std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

struct UniformInterval {
  double lower = 0.0;
  double upper = 1.0;
  double prior_fisher() const { return 12.0 / ((upper - lower) * (upper - lower)); }
  double mean() const { return 0.5 * (lower + upper); }
  double mean_square() const;
  double mean_inverse() const;         // E[1/x]
  double mean_inverse_square() const;  // E[1/x^2]
};

struct CrbSettings {
  UniformInterval omega{0.0, 1.0};
  UniformInterval inv_t2{0.09, 0.11};
  double t2 = 10.0;
  double ac_frequency = 0.2;
  UniformInterval field{0.0, 1.0};
  UniformInterval dec_inv_t{0.01, 0.1};
  UniformInterval dec_beta{1.5, 4.0};
  double hyperfine_prior_fisher = 18.18181;
};

struct BoundCurve {
  std::string task;
  std::string case_name;
  Regime regime = Regime::Measurements;
  std::vector<double> resource;
  std::vector<double> bound;
};

// Cases: nv_dc and nv_ac take t2_inf, t2_known, t2_interval; nv_dec takes beta_nuisance,
// beta_2, both; nv_hyperfine takes t2_inf, t2_known.
std::vector<std::string> crb_cases(const std::string& task);
BoundCurve crb_curve(const std::string& task, const std::string& case_name, Regime regime,
                     std::span<const double> grid, const CrbSettings& settings = {});

double bit_floor(double measurements);

using cplx = std::complex<double>;

double helstrom_error(double alpha);
// Agnostic receiver with n reference copies; the photon number of the n+1 modes is Poisson
// with mean (n+1) alpha^2.
double helstrom_error(double alpha, std::size_t references);

// <a|b> for multimode coherent states.
cplx coherent_overlap(std::span<const cplx> a, std::span<const cplx> b);
double pgm_success(const std::vector<std::vector<cplx>>& states, std::span<const double> priors);
double pgm_error(const std::vector<std::vector<cplx>>& states, std::span<const double> priors);

// Amplitude after concentrating n equal coherent copies into one mode.
double adder_amplitude(std::size_t copies, double alpha);

// Eight-hypothesis multiphase discrimination with `copies` uses of the encoded register.
double multiphase_pgm_error(std::span<const cplx> input, std::size_t copies);
// d coherent states on the roots of unity with the given amplitude, each class sent `copies` times.
double classifier_pgm_error(std::size_t classes, double amplitude, std::size_t copies);

struct QmlReferencePoint {
  double mean_photons = 0.0;
  double error = 0.0;
  std::size_t samples = 0;
};
// Monte-Carlo reference for three unknown coherent states drawn in [-half_width, half_width]^2,
// binned by consumed photon number.
std::vector<QmlReferencePoint> qml_reference(double half_width, std::size_t copies, std::size_t samples,
                                             std::span<const double> bin_edges, std::uint64_t seed);

struct MeasurementDistribution {
  std::size_t measurements = 0;
  std::size_t base = 2;
  double slope = 0.0;              // 2 / log_b C
  double k_star = 0.0;             // sqrt(log_b C) sqrt(M)
  double k_star_exact = 0.0;       // root of the resummed budget with nu_K = 1
  std::size_t stages = 0;          // K actually used
  std::vector<int> nu;             // integer repetitions per stage, stage 1 first
  std::vector<double> nu_continuous;
  double bound = 0.0;
  double bound_continuous = 0.0;
  double bit_floor = 0.0;
};

inline constexpr double kRampC = 1.66;
inline constexpr double kRampA = 0.60;

MeasurementDistribution analytic_ramp(std::size_t measurements, std::size_t base = 2);
double ramp_bound(std::span<const double> nu, std::size_t base);

}  // namespace qmetro
