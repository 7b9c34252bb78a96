#pragma once

#include <string>
#include <vector>

#include "qmetro/autodiff.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

// Units throughout: frequencies in MHz, times in microseconds.
enum class NvKind { Dc, Ac, Decoherence, Hyperfine };

struct NvParams {
  double omega = 0.0;   // precession frequency (dc)
  double field = 0.0;   // oscillating-field amplitude (ac)
  double inv_t2 = 0.0;  // dephasing rate
  double beta = 1.0;    // stretching exponent (decoherence)
  double omega0 = 0.0;  // hyperfine pair
  double omega1 = 0.0;
};

struct NvControls {
  double tau = 1.0;
  double phi = 0.0;
};

struct NvModelOptions {
  int dephasing_exponent = 1;       // 1: e^{-tau/T2}, 2: e^{-(tau/T2)^2}
  bool hyperfine_phase = true;      // add the control phase to both hyperfine cosines
  double known_frequency = 0.2;     // ac drive frequency
};

struct FisherInformation {
  std::vector<double> values;  // one entry per model parameter, see NvModel::parameter_names
  bool saturated = false;      // outcome probability hit 0 or 1; values are then undefined
};

struct ProbabilityGradient {
  double p = 0.0;
  double dtau = 0.0;
  double dphi = 0.0;
};

inline constexpr double kProbabilityClamp = 1e-12;

class NvModel {
 public:
  explicit NvModel(NvKind kind, NvModelOptions options = {});

  NvKind kind() const { return kind_; }
  const NvModelOptions& options() const { return options_; }
  // Parameter names in the order used by fisher_information and visibility_gradient.
  const std::vector<std::string>& parameter_names() const { return names_; }

  // p(+1) = (1 + V) / 2.
  double visibility(const NvParams& params, const NvControls& controls) const;
  std::vector<double> visibility_gradient(const NvParams& params, const NvControls& controls) const;
  double probability(int outcome, const NvParams& params, const NvControls& controls) const;
  double log_likelihood(int outcome, const NvParams& params, const NvControls& controls) const;
  // Unclamped probability with derivatives along the two controls.
  ProbabilityGradient probability_gradient(int outcome, const NvParams& params, const NvControls& controls) const;
  // Differentiable probability of an outcome given controls on the tape.
  ad::Real probability(int outcome, const NvParams& params, const ad::Real& tau, const ad::Real& phi) const;

  FisherInformation fisher_information(const NvParams& params, const NvControls& controls) const;

  // Inverse-CDF draw of the outcome from a single uniform u: +1 if u < p(+1).
  int sample_outcome(const NvParams& params, const NvControls& controls, double u) const;
  int sample_outcome(const NvParams& params, const NvControls& controls, Rng& rng) const;

 private:
  struct VisibilityParts {
    double v = 0.0;
    double dtau = 0.0;
    double dphi = 0.0;
  };
  VisibilityParts visibility_parts(const NvParams& params, const NvControls& controls) const;

  NvKind kind_;
  NvModelOptions options_;
  std::vector<std::string> names_;
};

double dc_likelihood(int outcome, const NvParams& params, const NvControls& controls, int dephasing_exponent = 1);
double ac_likelihood(int outcome, const NvParams& params, const NvControls& controls, double known_frequency);
double decoherence_likelihood(int outcome, const NvParams& params, const NvControls& controls);
double hyperfine_likelihood(int outcome, const NvParams& params, const NvControls& controls,
                            bool include_phase = true);

NvKind parse_nv_kind(const std::string& name);

}  // namespace qmetro
