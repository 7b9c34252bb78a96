#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmetro/autodiff.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

class SpaceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsatisfiableSupport : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateEvidence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dimension {
  enum class Kind { Continuous, Discrete };

  std::string name;
  Kind kind = Kind::Continuous;
  double lower = 0.0;
  double upper = 1.0;
  std::size_t cardinality = 0;

  static Dimension continuous(std::string name, double lower, double upper);
  static Dimension discrete(std::string name, std::size_t cardinality);
  bool is_continuous() const { return kind == Kind::Continuous; }
};

class ParameterSpace {
 public:
  using Predicate = std::function<bool(std::span<const double>)>;

  explicit ParameterSpace(std::vector<Dimension> dims, Predicate support = {});

  std::size_t size() const { return dims_.size(); }
  const Dimension& operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<Dimension>& dimensions() const { return dims_; }
  bool has_predicate() const { return static_cast<bool>(support_); }
  bool contains(std::span<const double> point) const;
  std::size_t index_of(const std::string& name) const;
  std::vector<std::size_t> continuous_indices() const;
  std::vector<std::size_t> discrete_indices() const;

 private:
  std::vector<Dimension> dims_;
  Predicate support_;
};

// How resampled ancestors enter the gradient: through a per-particle weight factor w_a / stop(w_a), or
// through the exact log probability of the systematic ancestor vector as a score term.
enum class ResampleGradient { CarriedWeights, AncestorScore };
std::string to_string(ResampleGradient mode);
ResampleGradient parse_resample_gradient(const std::string& name);

struct PfOptions {
  double ess_threshold = 0.5;
  double jitter_scale = 0.01;
  ResampleGradient gradient = ResampleGradient::CarriedWeights;
};

// N particles stored row-major with one weight each. Weights may carry tape identities.
class ParticleEnsemble {
 public:
  ParticleEnsemble(std::shared_ptr<const ParameterSpace> space, std::vector<double> positions,
                   std::vector<ad::Real> weights);

  std::size_t size() const { return weights_.size(); }
  std::size_t dimension() const { return space_->size(); }
  const ParameterSpace& space() const { return *space_; }
  const std::shared_ptr<const ParameterSpace>& space_ptr() const { return space_; }
  std::span<const double> particle(std::size_t i) const {
    return {positions_.data() + i * dimension(), dimension()};
  }
  std::span<const double> positions() const { return positions_; }
  std::span<const ad::Real> weights() const { return weights_; }
  std::vector<double> weight_values() const { return ad::values(weights_); }
  double ess() const;

 private:
  std::shared_ptr<const ParameterSpace> space_;
  std::vector<double> positions_;
  std::vector<ad::Real> weights_;
};

// Continuous coordinates form a Latin hypercube over the box, or independent uniform draws
// rejected outside the support predicate when there is one; discrete coordinates are
// stratified so every value is equally represented.
ParticleEnsemble init_from_prior(std::shared_ptr<const ParameterSpace> space, std::size_t count, Rng& rng);
ParticleEnsemble init_from_prior(std::shared_ptr<const ParameterSpace> space, std::size_t count,
                                 std::uint64_t seed);

// Uniform draw from the prior box restricted to the support predicate.
std::vector<double> sample_prior(const ParameterSpace& space, Rng& rng);

ParticleEnsemble bayes_update(const ParticleEnsemble& ens, std::span<const ad::Real> likelihoods);

template <class Likelihood>
ParticleEnsemble bayes_update_with(const ParticleEnsemble& ens, Likelihood&& likelihood) {
  std::vector<ad::Real> lik;
  lik.reserve(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i) lik.emplace_back(likelihood(ens.particle(i)));
  return bayes_update(ens, lik);
}

struct PosteriorMoments {
  std::size_t dim = 0;
  std::vector<ad::Real> mean;
  std::vector<ad::Real> covariance;   // dim x dim row-major
  std::vector<ad::Real> correlation;  // unit diagonal, zero where a variance vanishes
  ad::Real mass = ad::Real(1.0);      // total weight that entered the moments

  const ad::Real& cov(std::size_t i, std::size_t j) const { return covariance[i * dim + j]; }
  const ad::Real& corr(std::size_t i, std::size_t j) const { return correlation[i * dim + j]; }
};

PosteriorMoments moments(const ParticleEnsemble& ens);
PosteriorMoments moments(const ParticleEnsemble& ens, std::span<const std::size_t> dims);
// Moments of the sub-ensemble whose discrete coordinate `discrete_dim` equals `value`.
PosteriorMoments conditional_moments(const ParticleEnsemble& ens, std::span<const std::size_t> dims,
                                     std::size_t discrete_dim, std::size_t value);
// Normalised probability of each value of a discrete coordinate.
std::vector<ad::Real> discrete_marginal(const ParticleEnsemble& ens, std::size_t discrete_dim);

// Indices chosen by systematic resampling with offset u in [0, 1).
std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u);

// Log probability of the ancestor vector under systematic resampling: the length of the
// interval of offsets u that reproduce it. Differentiable in the weights.
ad::Real systematic_log_prob(std::span<const ad::Real> weights, std::span<const std::size_t> ancestors);

struct ResampleResult {
  ParticleEnsemble ensemble;  // weights equal to 1/N in value
  std::vector<std::size_t> ancestors;
  ad::Real log_prob;          // score term; a constant zero when the weights carry the gradient
};

ResampleResult resample(const ParticleEnsemble& ens, Rng& rng, double jitter_scale = 0.01,
                        ResampleGradient gradient = ResampleGradient::CarriedWeights);
ResampleResult resample(const ParticleEnsemble& ens, std::uint64_t seed, double jitter_scale = 0.01,
                        ResampleGradient gradient = ResampleGradient::CarriedWeights);

void write_snapshot(std::ostream& out, const ParticleEnsemble& ens);

}  // namespace qmetro
