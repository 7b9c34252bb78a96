#include "qmetro/photonic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace qmetro {

double CoherentRegister::mean_photons() const {
  double n = 0.0;
  for (const auto& a : amplitudes) n += std::norm(a);
  return n;
}

std::pair<cplx, cplx> apply_beamsplitter(cplx a, cplx b, const BsControl& control) {
  const double c = std::cos(control.theta);
  const double s = std::sin(control.theta);
  const cplx e = std::polar(1.0, control.phi);
  return {a * c + b * e * s, -a * std::conj(e) * s + b * c};
}

std::pair<ad::Complex, ad::Complex> apply_beamsplitter(const ad::Complex& a, const ad::Complex& b,
                                                       const ad::Real& theta, const ad::Real& phi) {
  const ad::Real c = ad::cos(theta);
  const ad::Real s = ad::sin(theta);
  const ad::Complex e = ad::expi(phi);
  return {a * c + b * e * s, -(a * ad::conj(e) * s) + b * c};
}

double poisson_pmf(double mean, int k) {
  if (k < 0) return 0.0;
  if (mean <= 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(log_poisson_pmf(mean, k));
}

double log_poisson_pmf(double mean, int k) {
  if (mean <= 0.0) return k == 0 ? 0.0 : -INFINITY;
  return k * std::log(mean) - mean - std::lgamma(k + 1.0);
}

double photon_count_prob(cplx amplitude, int k) { return poisson_pmf(std::norm(amplitude), k); }

double poisson_pmf_derivative(double mean, int k) {
  return (k > 0 ? poisson_pmf(mean, k - 1) : 0.0) - poisson_pmf(mean, k);
}

ad::Real poisson_pmf(const ad::Real& mean, int k) {
  return ad::make(poisson_pmf(mean.value(), k), mean, poisson_pmf_derivative(mean.value(), k));
}

DolinarStep dolinar_step(const ad::Complex& signal, const ad::Real& theta, int parity) {
  const ad::Real angle = parity % 2 != 0 ? theta - std::numbers::pi : theta;
  const auto [remaining, measured] = apply_beamsplitter(signal, ad::Complex(ad::Real(1.0)), angle, ad::Real(0.0));
  return {measured, remaining};
}

int qml_coarse_grain(int count, double alpha) {
  const long expected = std::lround(alpha * alpha);
  if (count < expected) return 0;
  if (count == expected) return 1;
  return 2;
}

const Matrix4c& quarter_matrix() {
  static const Matrix4c q = [] {
    const cplx i(0.0, 1.0);
    Matrix4c m{{{1.0, i, i, -1.0}, {i, -1.0, 1.0, i}, {i, 1.0, -1.0, i}, {-1.0, i, i, 1.0}}};
    for (auto& row : m)
      for (auto& x : row) x *= 0.5;
    return m;
  }();
  return q;
}

namespace {

std::array<cplx, 4> apply_quarter(const std::array<cplx, 4>& v) {
  const auto& q = quarter_matrix();
  std::array<cplx, 4> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r] += q[r][c] * v[c];
  return out;
}

std::array<cplx, 4> as_array(const CoherentRegister& reg) {
  if (reg.modes() != 4) throw std::invalid_argument("multiphase register needs four modes");
  return {reg.amplitudes[0], reg.amplitudes[1], reg.amplitudes[2], reg.amplitudes[3]};
}

}  // namespace

CoherentRegister encode_multiphase(const CoherentRegister& input, const std::array<double, 3>& phases) {
  auto v = apply_quarter(as_array(input));
  for (int j = 0; j < 3; ++j) v[j] *= std::polar(1.0, -phases[j]);
  return CoherentRegister{{v.begin(), v.end()}};
}

std::array<ad::Complex, 4> multiphase_output(const CoherentRegister& encoded,
                                             const std::array<ad::Real, 3>& controls) {
  const auto v = as_array(encoded);
  std::array<ad::Complex, 4> shifted;
  for (int j = 0; j < 3; ++j) shifted[j] = ad::expi(-controls[j]) * v[j];
  shifted[3] = ad::Complex(v[3]);
  const auto& q = quarter_matrix();
  std::array<ad::Complex, 4> out;
  for (int r = 0; r < 4; ++r) {
    ad::Complex acc(ad::Real(0.0));
    for (int c = 0; c < 4; ++c) acc = acc + shifted[c] * q[r][c];
    out[r] = acc;
  }
  return out;
}

std::array<cplx, 4> multiphase_output(const CoherentRegister& encoded, const std::array<double, 3>& controls) {
  auto v = as_array(encoded);
  for (int j = 0; j < 3; ++j) v[j] *= std::polar(1.0, -controls[j]);
  return apply_quarter(v);
}

MultiphaseOutcome multiphase_measure(const CoherentRegister& encoded, const std::array<double, 3>& controls,
                                     Rng& rng) {
  const auto out = multiphase_output(encoded, controls);
  MultiphaseOutcome result;
  for (int m = 0; m < 4; ++m) {
    const double mean = std::norm(out[m]);
    result.counts[m] = sample_poisson(mean, rng);
    result.log_likelihood += log_poisson_pmf(mean, result.counts[m]);
  }
  return result;
}

double multiphase_likelihood(const CoherentRegister& encoded, const std::array<double, 3>& controls,
                             const std::array<int, 4>& counts) {
  const auto out = multiphase_output(encoded, controls);
  double p = 1.0;
  for (int m = 0; m < 4; ++m) p *= photon_count_prob(out[m], counts[m]);
  return p;
}

BsNetwork::BsNetwork(Eigen::MatrixXcd generator) : generator_(std::move(generator)) {
  if (generator_.rows() != generator_.cols() || generator_.rows() == 0)
    throw std::invalid_argument("network generator must be square");
  const Eigen::MatrixXcd h = generator_ + generator_.adjoint();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h);
  eigenvalues_ = solver.eigenvalues();
  eigenvectors_ = solver.eigenvectors();
  Eigen::VectorXcd phases(eigenvalues_.size());
  for (Eigen::Index j = 0; j < eigenvalues_.size(); ++j) phases[j] = std::polar(1.0, eigenvalues_[j]);
  unitary_ = eigenvectors_ * phases.asDiagonal() * eigenvectors_.adjoint();
}

BsNetwork BsNetwork::from_parameters(std::span<const double> params, std::size_t modes) {
  if (params.size() != parameter_count(modes)) throw std::invalid_argument("wrong network parameter count");
  Eigen::MatrixXcd a(modes, modes);
  const std::size_t n2 = modes * modes;
  for (std::size_t r = 0; r < modes; ++r)
    for (std::size_t c = 0; c < modes; ++c) a(r, c) = cplx(params[r * modes + c], params[n2 + r * modes + c]);
  return BsNetwork(std::move(a));
}

Eigen::MatrixXd BsNetwork::symplectic() const {
  const auto n = unitary_.rows();
  Eigen::MatrixXd s(2 * n, 2 * n);
  s.topLeftCorner(n, n) = unitary_.real();
  s.topRightCorner(n, n) = unitary_.imag();
  s.bottomLeftCorner(n, n) = -unitary_.imag();
  s.bottomRightCorner(n, n) = unitary_.real();
  return s;
}

CoherentRegister BsNetwork::apply(const CoherentRegister& input) const {
  if (input.modes() != modes()) throw std::invalid_argument("register size does not match network");
  Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(input.amplitudes.data(), input.amplitudes.size());
  Eigen::VectorXcd out = unitary_ * v;
  return CoherentRegister{{out.data(), out.data() + out.size()}};
}

std::vector<double> BsNetwork::generator_gradient(const Eigen::MatrixXcd& unitary_gradient) const {
  const auto n = eigenvalues_.size();
  Eigen::MatrixXcd f(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double dl = eigenvalues_[j] - eigenvalues_[k];
      if (std::abs(dl) < 1e-9) {
        f(j, k) = cplx(0.0, 1.0) * std::polar(1.0, 0.5 * (eigenvalues_[j] + eigenvalues_[k]));
      } else {
        f(j, k) = (std::polar(1.0, eigenvalues_[j]) - std::polar(1.0, eigenvalues_[k])) / dl;
      }
    }
  }
  const Eigen::MatrixXcd w = eigenvectors_.adjoint() * unitary_gradient * eigenvectors_;
  const Eigen::MatrixXcd xbar = f.conjugate().cwiseProduct(w);
  const Eigen::MatrixXcd hbar = eigenvectors_ * xbar * eigenvectors_.adjoint();
  const Eigen::MatrixXcd abar = hbar + hbar.adjoint();
  std::vector<double> out(2 * n * n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      out[r * n + c] = abar(r, c).real();
      out[n * n + r * n + c] = abar(r, c).imag();
    }
  }
  return out;
}

}  // namespace qmetro
