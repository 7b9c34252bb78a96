#include "qmetro/nv_models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qmetro {

namespace {

struct Dephasing {
  double d = 1.0;     // envelope
  double dtau = 0.0;  // d envelope / d tau
  double drate = 0.0; // d envelope / d inv_t2
};

Dephasing dephasing(double tau, double rate, int exponent) {
  Dephasing out;
  if (rate == 0.0) return out;
  if (exponent == 2) {
    const double x = tau * rate;
    out.d = std::exp(-x * x);
    out.dtau = -2.0 * tau * rate * rate * out.d;
    out.drate = -2.0 * tau * tau * rate * out.d;
  } else {
    out.d = std::exp(-tau * rate);
    out.dtau = -rate * out.d;
    out.drate = -tau * out.d;
  }
  return out;
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

}  // namespace

NvModel::NvModel(NvKind kind, NvModelOptions options) : kind_(kind), options_(options) {
  if (options_.dephasing_exponent != 1 && options_.dephasing_exponent != 2)
    throw std::invalid_argument("dephasing exponent must be 1 or 2");
  switch (kind_) {
    case NvKind::Dc: names_ = {"omega", "inv_t2"}; break;
    case NvKind::Ac: names_ = {"field", "inv_t2"}; break;
    case NvKind::Decoherence: names_ = {"inv_t", "beta"}; break;
    case NvKind::Hyperfine: names_ = {"omega0", "omega1", "inv_t2"}; break;
  }
}

NvModel::VisibilityParts NvModel::visibility_parts(const NvParams& p, const NvControls& c) const {
  VisibilityParts out;
  const double tau = c.tau;
  switch (kind_) {
    case NvKind::Dc: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double psi = p.omega * tau + c.phi;
      const double cs = std::cos(psi);
      const double sn = std::sin(psi);
      out.v = env.d * cs;
      out.dtau = env.dtau * cs - env.d * p.omega * sn;
      out.dphi = -env.d * sn;
      break;
    }
    case NvKind::Ac: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double w = options_.known_frequency;
      const double psi = (p.field / w) * std::sin(w * tau);
      const double cs = std::cos(psi);
      const double sn = std::sin(psi);
      out.v = env.d * cs;
      out.dtau = env.dtau * cs - env.d * sn * p.field * std::cos(w * tau);
      break;
    }
    case NvKind::Decoherence: {
      if (p.inv_t2 == 0.0) {
        out.v = 1.0;
        break;
      }
      const double x = std::pow(tau * p.inv_t2, p.beta);
      out.v = std::exp(-x);
      out.dtau = -out.v * p.beta * x / tau;
      break;
    }
    case NvKind::Hyperfine: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double phase = options_.hyperfine_phase ? c.phi : 0.0;
      const double a = p.omega0 * tau + phase;
      const double b = p.omega1 * tau + phase;
      const double sum_cos = std::cos(a) + std::cos(b);
      out.v = 0.5 * env.d * sum_cos;
      out.dtau = 0.5 * env.dtau * sum_cos - 0.5 * env.d * (p.omega0 * std::sin(a) + p.omega1 * std::sin(b));
      if (options_.hyperfine_phase) out.dphi = -0.5 * env.d * (std::sin(a) + std::sin(b));
      break;
    }
  }
  return out;
}

double NvModel::visibility(const NvParams& params, const NvControls& controls) const {
  return visibility_parts(params, controls).v;
}

std::vector<double> NvModel::visibility_gradient(const NvParams& p, const NvControls& c) const {
  const double tau = c.tau;
  switch (kind_) {
    case NvKind::Dc: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double psi = p.omega * tau + c.phi;
      return {-env.d * tau * std::sin(psi), env.drate * std::cos(psi)};
    }
    case NvKind::Ac: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double w = options_.known_frequency;
      const double s = std::sin(w * tau) / w;
      const double psi = p.field * s;
      return {-env.d * std::sin(psi) * s, env.drate * std::cos(psi)};
    }
    case NvKind::Decoherence: {
      if (p.inv_t2 == 0.0) return {0.0, 0.0};
      const double base = tau * p.inv_t2;
      const double x = std::pow(base, p.beta);
      const double v = std::exp(-x);
      return {-v * p.beta * x / p.inv_t2, -v * x * std::log(base)};
    }
    case NvKind::Hyperfine: {
      const auto env = dephasing(tau, p.inv_t2, options_.dephasing_exponent);
      const double phase = options_.hyperfine_phase ? c.phi : 0.0;
      const double a = p.omega0 * tau + phase;
      const double b = p.omega1 * tau + phase;
      return {-0.5 * env.d * tau * std::sin(a), -0.5 * env.d * tau * std::sin(b),
              0.5 * env.drate * (std::cos(a) + std::cos(b))};
    }
  }
  return {};
}

double NvModel::probability(int outcome, const NvParams& params, const NvControls& controls) const {
  const double v = visibility(params, controls);
  return clamp_probability(0.5 * (1.0 + (outcome > 0 ? v : -v)));
}

double NvModel::log_likelihood(int outcome, const NvParams& params, const NvControls& controls) const {
  return std::log(probability(outcome, params, controls));
}

ProbabilityGradient NvModel::probability_gradient(int outcome, const NvParams& params,
                                                  const NvControls& controls) const {
  const auto parts = visibility_parts(params, controls);
  const double sign = outcome > 0 ? 1.0 : -1.0;
  return {0.5 * (1.0 + sign * parts.v), 0.5 * sign * parts.dtau, 0.5 * sign * parts.dphi};
}

ad::Real NvModel::probability(int outcome, const NvParams& params, const ad::Real& tau, const ad::Real& phi) const {
  const auto g = probability_gradient(outcome, params, NvControls{tau.value(), phi.value()});
  if (g.p < kProbabilityClamp || g.p > 1.0 - kProbabilityClamp) return ad::Real(clamp_probability(g.p));
  return ad::make(g.p, tau, g.dtau, phi, g.dphi);
}

FisherInformation NvModel::fisher_information(const NvParams& params, const NvControls& controls) const {
  FisherInformation out;
  const auto grad = visibility_gradient(params, controls);
  out.values.assign(grad.size(), 0.0);
  if (kind_ == NvKind::Dc || kind_ == NvKind::Ac) {
    // V = D cos(psi): 1 - V^2 = sin^2 psi + (1 - D^2) cos^2 psi
    const auto env = dephasing(controls.tau, params.inv_t2, options_.dephasing_exponent);
    double psi = 0.0;
    if (kind_ == NvKind::Dc) {
      psi = params.omega * controls.tau + controls.phi;
    } else {
      const double w = options_.known_frequency;
      psi = (params.field / w) * std::sin(w * controls.tau);
    }
    const double sn = std::sin(psi);
    const double cs = std::cos(psi);
    const double den = sn * sn + (1.0 - env.d * env.d) * cs * cs;
    if (!(den > 0.0)) {
      out.saturated = true;
      return out;
    }
    double lever = controls.tau;
    if (kind_ == NvKind::Ac) lever = std::sin(options_.known_frequency * controls.tau) / options_.known_frequency;
    out.values[0] = (lever * lever) * (env.d * env.d * sn * sn / den);
    out.values[1] = grad[1] * grad[1] / den;
    return out;
  }
  const double v = visibility(params, controls);
  const double den = (1.0 - v) * (1.0 + v);
  if (!(den > 0.0)) {
    out.saturated = true;
    return out;
  }
  for (std::size_t j = 0; j < grad.size(); ++j) out.values[j] = grad[j] * grad[j] / den;
  return out;
}

int NvModel::sample_outcome(const NvParams& params, const NvControls& controls, double u) const {
  return u < probability(+1, params, controls) ? +1 : -1;
}

int NvModel::sample_outcome(const NvParams& params, const NvControls& controls, Rng& rng) const {
  return sample_outcome(params, controls, uniform01(rng));
}

double dc_likelihood(int outcome, const NvParams& params, const NvControls& controls, int dephasing_exponent) {
  return NvModel(NvKind::Dc, {.dephasing_exponent = dephasing_exponent}).probability(outcome, params, controls);
}

double ac_likelihood(int outcome, const NvParams& params, const NvControls& controls, double known_frequency) {
  return NvModel(NvKind::Ac, {.known_frequency = known_frequency}).probability(outcome, params, controls);
}

double decoherence_likelihood(int outcome, const NvParams& params, const NvControls& controls) {
  return NvModel(NvKind::Decoherence).probability(outcome, params, controls);
}

double hyperfine_likelihood(int outcome, const NvParams& params, const NvControls& controls, bool include_phase) {
  return NvModel(NvKind::Hyperfine, {.hyperfine_phase = include_phase}).probability(outcome, params, controls);
}

NvKind parse_nv_kind(const std::string& name) {
  if (name == "nv_dc") return NvKind::Dc;
  if (name == "nv_ac") return NvKind::Ac;
  if (name == "nv_dec") return NvKind::Decoherence;
  if (name == "nv_hyperfine") return NvKind::Hyperfine;
  throw std::invalid_argument("unknown NV model '" + name + "'");
}

}  // namespace qmetro
