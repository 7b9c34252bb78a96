#pragma once

#include <array>
#include <complex>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qmetro/autodiff.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

using cplx = std::complex<double>;

struct CoherentRegister {
  std::vector<cplx> amplitudes;

  std::size_t modes() const { return amplitudes.size(); }
  double mean_photons() const;
};

struct BsControl {
  double theta = 0.0;
  double phi = 0.0;
};

// (a, b) -> (a cos t + b e^{i p} sin t, -a e^{-i p} sin t + b cos t)
std::pair<cplx, cplx> apply_beamsplitter(cplx a, cplx b, const BsControl& control);
std::pair<ad::Complex, ad::Complex> apply_beamsplitter(const ad::Complex& a, const ad::Complex& b,
                                                       const ad::Real& theta, const ad::Real& phi);

double poisson_pmf(double mean, int k);
double log_poisson_pmf(double mean, int k);
// Probability of k clicks for a coherent state of the given amplitude.
double photon_count_prob(cplx amplitude, int k);
// d/d(mean) of the Poisson pmf.
double poisson_pmf_derivative(double mean, int k);
// Differentiable Poisson probability in the mean.
ad::Real poisson_pmf(const ad::Real& mean, int k);

// One step of the agnostic Dolinar receiver: the signal (amplitude alpha * r) is mixed with
// a reference of amplitude alpha at angle theta - pi * parity. The second output port is
// counted; the first becomes the new signal. Quantities are relative to alpha.
struct DolinarStep {
  ad::Complex measured;   // counted-port amplitude / alpha
  ad::Complex remaining;  // new signal amplitude / alpha
};
DolinarStep dolinar_step(const ad::Complex& signal, const ad::Real& theta, int parity);

// Coarse-grained photon count used by the ternary tree: 0, 1 or 2 after comparing the
// count with round(alpha^2).
int qml_coarse_grain(int count, double alpha);

using Matrix4c = std::array<std::array<cplx, 4>, 4>;
const Matrix4c& quarter_matrix();

// Applies the quarter transform and then e^{-i phi_j} on modes 0..2.
CoherentRegister encode_multiphase(const CoherentRegister& input, const std::array<double, 3>& phases);
std::array<ad::Complex, 4> multiphase_output(const CoherentRegister& encoded,
                                             const std::array<ad::Real, 3>& controls);
std::array<cplx, 4> multiphase_output(const CoherentRegister& encoded, const std::array<double, 3>& controls);

struct MultiphaseOutcome {
  std::array<int, 4> counts{};
  double log_likelihood = 0.0;
};
MultiphaseOutcome multiphase_measure(const CoherentRegister& encoded, const std::array<double, 3>& controls,
                                     Rng& rng);
double multiphase_likelihood(const CoherentRegister& encoded, const std::array<double, 3>& controls,
                             const std::array<int, 4>& counts);

// Passive linear network U = exp(i (A + A^dagger)) on `modes` modes.
class BsNetwork {
 public:
  explicit BsNetwork(Eigen::MatrixXcd generator);
  static BsNetwork from_parameters(std::span<const double> params, std::size_t modes);
  static std::size_t parameter_count(std::size_t modes) { return 2 * modes * modes; }

  std::size_t modes() const { return static_cast<std::size_t>(generator_.rows()); }
  const Eigen::MatrixXcd& generator() const { return generator_; }
  const Eigen::MatrixXcd& unitary() const { return unitary_; }
  Eigen::MatrixXd symplectic() const;
  CoherentRegister apply(const CoherentRegister& input) const;

  // Given dL/dU in the convention dL = Re tr(G^dagger dU), returns dL/dRe(A) and dL/dIm(A)
  // flattened row-major as [re..., im...].
  std::vector<double> generator_gradient(const Eigen::MatrixXcd& unitary_gradient) const;

 private:
  Eigen::MatrixXcd generator_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXcd eigenvectors_;
  Eigen::MatrixXcd unitary_;
};

}  // namespace qmetro
