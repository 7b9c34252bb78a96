#include "qmetro/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fmt/format.h>
#include <numeric>
#include <ostream>

namespace qmetro {

Dimension Dimension::continuous(std::string name, double lower, double upper) {
  return Dimension{std::move(name), Kind::Continuous, lower, upper, 0};
}

Dimension Dimension::discrete(std::string name, std::size_t cardinality) {
  return Dimension{std::move(name), Kind::Discrete, 0.0, static_cast<double>(cardinality) - 1.0, cardinality};
}

ParameterSpace::ParameterSpace(std::vector<Dimension> dims, Predicate support)
    : dims_(std::move(dims)), support_(std::move(support)) {
  if (dims_.empty()) throw SpaceError("parameter space needs at least one dimension");
  for (const auto& d : dims_) {
    if (d.is_continuous()) {
      if (!(d.lower < d.upper) || !std::isfinite(d.lower) || !std::isfinite(d.upper))
        throw SpaceError(fmt::format("dimension '{}' has an empty or unbounded interval", d.name));
    } else if (d.cardinality < 2) {
      throw SpaceError(fmt::format("dimension '{}' needs at least two values", d.name));
    }
  }
}

bool ParameterSpace::contains(std::span<const double> point) const {
  for (std::size_t j = 0; j < dims_.size(); ++j) {
    const auto& d = dims_[j];
    if (d.is_continuous()) {
      if (point[j] < d.lower || point[j] > d.upper) return false;
    } else {
      const double v = point[j];
      if (v < 0.0 || v >= static_cast<double>(d.cardinality) || v != std::floor(v)) return false;
    }
  }
  return !support_ || support_(point);
}

std::size_t ParameterSpace::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < dims_.size(); ++j)
    if (dims_[j].name == name) return j;
  throw SpaceError(fmt::format("no dimension named '{}'", name));
}

std::vector<std::size_t> ParameterSpace::continuous_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < dims_.size(); ++j)
    if (dims_[j].is_continuous()) out.push_back(j);
  return out;
}

std::vector<std::size_t> ParameterSpace::discrete_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < dims_.size(); ++j)
    if (!dims_[j].is_continuous()) out.push_back(j);
  return out;
}

ParticleEnsemble::ParticleEnsemble(std::shared_ptr<const ParameterSpace> space, std::vector<double> positions,
                                   std::vector<ad::Real> weights)
    : space_(std::move(space)), positions_(std::move(positions)), weights_(std::move(weights)) {
  if (weights_.empty()) throw SpaceError("ensemble needs at least one particle");
  if (positions_.size() != weights_.size() * space_->size())
    throw SpaceError("position block does not match particle count");
}

double ParticleEnsemble::ess() const {
  double s = 0.0;
  double s2 = 0.0;
  for (const auto& w : weights_) {
    s += w.value();
    s2 += w.value() * w.value();
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

namespace {

constexpr double kMinAcceptance = 1e-4;
constexpr std::size_t kRejectionWindow = 1000000;

struct RejectionCounter {
  std::size_t draws = 0;
  std::size_t accepted = 0;

  void check() const {
    if (draws >= kRejectionWindow &&
        static_cast<double>(accepted) < kMinAcceptance * static_cast<double>(draws))
      throw UnsatisfiableSupport("support predicate rejects almost every prior draw");
  }
};

void draw_continuous(const ParameterSpace& space, std::span<double> point, Rng& rng, RejectionCounter& counter) {
  for (;;) {
    for (std::size_t j = 0; j < space.size(); ++j)
      if (space[j].is_continuous()) point[j] = uniform(rng, space[j].lower, space[j].upper);
    ++counter.draws;
    if (!space.has_predicate() || space.contains(point)) {
      ++counter.accepted;
      return;
    }
    counter.check();
  }
}

}  // namespace

std::vector<double> sample_prior(const ParameterSpace& space, Rng& rng) {
  std::vector<double> point(space.size(), 0.0);
  RejectionCounter counter;
  for (;;) {
    for (std::size_t j = 0; j < space.size(); ++j) {
      if (!space[j].is_continuous())
        point[j] = std::floor(uniform01(rng) * static_cast<double>(space[j].cardinality));
    }
    for (std::size_t j = 0; j < space.size(); ++j)
      if (space[j].is_continuous()) point[j] = uniform(rng, space[j].lower, space[j].upper);
    ++counter.draws;
    if (space.contains(point)) return point;
    counter.check();
  }
}

ParticleEnsemble init_from_prior(std::shared_ptr<const ParameterSpace> space, std::size_t count, Rng& rng) {
  if (count == 0) throw SpaceError("ensemble needs at least one particle");
  const std::size_t d = space->size();
  std::vector<double> positions(count * d, 0.0);
  RejectionCounter counter;
  const auto discrete = space->discrete_indices();
  for (std::size_t i = 0; i < count; ++i) {
    std::span<double> point(positions.data() + i * d, d);
    std::size_t stride = 1;
    for (std::size_t j : discrete) {
      const std::size_t card = (*space)[j].cardinality;
      point[j] = static_cast<double>((i / stride) % card);
      stride *= card;
    }
    if (space->has_predicate()) draw_continuous(*space, point, rng, counter);
  }
  if (!space->has_predicate()) {
    std::vector<std::size_t> strata(count);
    for (std::size_t j = 0; j < d; ++j) {
      const auto& dim = (*space)[j];
      if (!dim.is_continuous()) continue;
      std::iota(strata.begin(), strata.end(), std::size_t{0});
      std::shuffle(strata.begin(), strata.end(), rng);
      const double cell = (dim.upper - dim.lower) / static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i)
        positions[i * d + j] = dim.lower + cell * (static_cast<double>(strata[i]) + uniform01(rng));
    }
  }
  std::vector<ad::Real> weights(count, ad::Real(1.0 / static_cast<double>(count)));
  return ParticleEnsemble(std::move(space), std::move(positions), std::move(weights));
}

ParticleEnsemble init_from_prior(std::shared_ptr<const ParameterSpace> space, std::size_t count,
                                 std::uint64_t seed) {
  Rng rng(seed);
  return init_from_prior(std::move(space), count, rng);
}

namespace {

class BayesUpdateOp final : public ad::ExternalOp {
 public:
  BayesUpdateOp(std::vector<std::uint32_t> weight_ids, std::vector<std::uint32_t> lik_ids, std::vector<double> w,
                std::vector<double> p, std::vector<double> posterior, double z, std::uint32_t first_out)
      : weight_ids_(std::move(weight_ids)),
        lik_ids_(std::move(lik_ids)),
        w_(std::move(w)),
        p_(std::move(p)),
        posterior_(std::move(posterior)),
        z_(z),
        first_out_(first_out) {}

  void backward(ad::Tape& tape, std::span<double>) override {
    const std::size_t n = w_.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += tape.adjoint(first_out_ + i) * posterior_[i];
    for (std::size_t i = 0; i < n; ++i) {
      const double g = (tape.adjoint(first_out_ + i) - s) / z_;
      if (g == 0.0) continue;
      tape.accumulate(weight_ids_[i], p_[i] * g);
      tape.accumulate(lik_ids_[i], w_[i] * g);
    }
  }

 private:
  std::vector<std::uint32_t> weight_ids_;
  std::vector<std::uint32_t> lik_ids_;
  std::vector<double> w_;
  std::vector<double> p_;
  std::vector<double> posterior_;
  double z_;
  std::uint32_t first_out_;
};

}  // namespace

ParticleEnsemble bayes_update(const ParticleEnsemble& ens, std::span<const ad::Real> likelihoods) {
  const std::size_t n = ens.size();
  if (likelihoods.size() != n) throw SpaceError("likelihood count does not match particle count");
  const auto weights = ens.weights();
  std::vector<double> w(n);
  std::vector<double> p(n);
  double z = 0.0;
  bool tracked = false;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = weights[i].value();
    p[i] = likelihoods[i].value();
    if (!(p[i] >= 0.0)) throw DegenerateEvidence("negative or undefined likelihood");
    z += w[i] * p[i];
    tracked = tracked || weights[i].tracked() || likelihoods[i].tracked();
  }
  if (!(z > 0.0) || !std::isfinite(z)) throw DegenerateEvidence("every particle has zero likelihood");
  std::vector<double> posterior(n);
  for (std::size_t i = 0; i < n; ++i) posterior[i] = w[i] * p[i] / z;

  std::vector<double> positions(ens.positions().begin(), ens.positions().end());
  std::vector<ad::Real> out(n);
  ad::Tape* tape = ad::Tape::active();
  if (tape != nullptr && tracked) {
    const std::uint32_t first = tape->new_variables(n);
    std::vector<std::uint32_t> wid(n);
    std::vector<std::uint32_t> lid(n);
    for (std::size_t i = 0; i < n; ++i) {
      wid[i] = weights[i].id();
      lid[i] = likelihoods[i].id();
      out[i] = ad::Real(posterior[i], first + static_cast<std::uint32_t>(i));
    }
    tape->push_external(std::make_unique<BayesUpdateOp>(std::move(wid), std::move(lid), std::move(w), std::move(p),
                                                        posterior, z, first));
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = ad::Real(posterior[i]);
  }
  return ParticleEnsemble(ens.space_ptr(), std::move(positions), std::move(out));
}

namespace {

PosteriorMoments moments_with_mask(const ParticleEnsemble& ens, std::span<const std::size_t> dims,
                                   const std::vector<double>* mask) {
  const std::size_t n = ens.size();
  const std::size_t d = dims.size();
  const std::size_t stride = ens.dimension();
  const auto pos = ens.positions();
  const auto w = ens.weights();

  PosteriorMoments m;
  m.dim = d;
  const ad::Real total = ad::sum(w);
  const ad::Real s0 = mask != nullptr ? ad::weighted_sum(w, *mask) : total;
  m.mass = mask != nullptr ? s0 / total : ad::Real(1.0);
  if (!(s0.value() > 0.0)) {
    m.mean.assign(d, ad::Real(0.0));
    m.covariance.assign(d * d, ad::Real(0.0));
    m.correlation.assign(d * d, ad::Real(0.0));
    for (std::size_t j = 0; j < d; ++j) m.correlation[j * d + j] = ad::Real(1.0);
    return m;
  }

  std::vector<double> coeff(n);
  std::vector<double> centre(d);
  m.mean.reserve(d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t i = 0; i < n; ++i) coeff[i] = pos[i * stride + dims[a]] * (mask ? (*mask)[i] : 1.0);
    m.mean.push_back(ad::weighted_sum(w, coeff) / s0);
    centre[a] = m.mean.back().value();
  }
  m.covariance.assign(d * d, ad::Real(0.0));
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        coeff[i] = (pos[i * stride + dims[a]] - centre[a]) * (pos[i * stride + dims[b]] - centre[b]) *
                   (mask ? (*mask)[i] : 1.0);
      }
      const ad::Real c = ad::weighted_sum(w, coeff) / s0;
      m.covariance[a * d + b] = c;
      m.covariance[b * d + a] = c;
    }
  }
  m.correlation.assign(d * d, ad::Real(0.0));
  for (std::size_t a = 0; a < d; ++a) {
    m.correlation[a * d + a] = ad::Real(1.0);
    for (std::size_t b = 0; b < d; ++b) {
      if (a == b) continue;
      const double va = m.covariance[a * d + a].value();
      const double vb = m.covariance[b * d + b].value();
      if (va > 0.0 && vb > 0.0)
        m.correlation[a * d + b] =
            m.covariance[a * d + b] / ad::sqrt(m.covariance[a * d + a] * m.covariance[b * d + b]);
    }
  }
  return m;
}

}  // namespace

PosteriorMoments moments(const ParticleEnsemble& ens) {
  std::vector<std::size_t> dims(ens.dimension());
  std::iota(dims.begin(), dims.end(), 0);
  return moments_with_mask(ens, dims, nullptr);
}

PosteriorMoments moments(const ParticleEnsemble& ens, std::span<const std::size_t> dims) {
  return moments_with_mask(ens, dims, nullptr);
}

PosteriorMoments conditional_moments(const ParticleEnsemble& ens, std::span<const std::size_t> dims,
                                     std::size_t discrete_dim, std::size_t value) {
  std::vector<double> mask(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i)
    mask[i] = ens.particle(i)[discrete_dim] == static_cast<double>(value) ? 1.0 : 0.0;
  return moments_with_mask(ens, dims, &mask);
}

std::vector<ad::Real> discrete_marginal(const ParticleEnsemble& ens, std::size_t discrete_dim) {
  const std::size_t card = ens.space()[discrete_dim].cardinality;
  const auto w = ens.weights();
  const ad::Real total = ad::sum(w);
  std::vector<ad::Real> out;
  out.reserve(card);
  std::vector<double> mask(ens.size());
  for (std::size_t v = 0; v < card; ++v) {
    for (std::size_t i = 0; i < ens.size(); ++i)
      mask[i] = ens.particle(i)[discrete_dim] == static_cast<double>(v) ? 1.0 : 0.0;
    out.push_back(ad::weighted_sum(w, mask) / total);
  }
  return out;
}

std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u) {
  const std::size_t n = weights.size();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::size_t last = n - 1;
  while (last > 0 && weights[last] <= 0.0) --last;
  std::vector<std::size_t> out(n);
  double cumulative = weights[0] / total;
  std::size_t i = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double pointer = (static_cast<double>(j) + u) / static_cast<double>(n);
    while (pointer >= cumulative && i < last) {
      ++i;
      cumulative += weights[i] / total;
    }
    out[j] = i;
  }
  return out;
}

ad::Real systematic_log_prob(std::span<const ad::Real> weights, std::span<const std::size_t> ancestors) {
  const std::size_t n = weights.size();
  const auto w = ad::values(weights);
  std::vector<double> cumulative(n);
  std::partial_sum(w.begin(), w.end(), cumulative.begin());
  const double scale = static_cast<double>(n) / cumulative.back();
  // slot k keeps ancestor a for u in [n C_{a-1} - k, n C_a - k)
  double lo = 0.0;
  double hi = 1.0;
  std::size_t lo_prefix = 0, lo_slot = 0;
  std::size_t hi_prefix = n, hi_slot = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = ancestors[k];
    const double kk = static_cast<double>(k);
    if (a > 0 && scale * cumulative[a - 1] - kk > lo) {
      lo = scale * cumulative[a - 1] - kk;
      lo_prefix = a;
      lo_slot = k;
    }
    if (a + 1 < n && scale * cumulative[a] - kk < hi) {
      hi = scale * cumulative[a] - kk;
      hi_prefix = a + 1;
      hi_slot = k;
    }
  }
  if (!(hi > lo)) return ad::Real(std::log(std::numeric_limits<double>::min()));
  const ad::Real total = ad::sum(weights);
  const auto bound = [&](std::size_t prefix, std::size_t slot, double fixed) -> ad::Real {
    if (prefix == 0 || prefix == n) return ad::Real(fixed);
    return static_cast<double>(n) * ad::sum(weights.first(prefix)) / total - static_cast<double>(slot);
  };
  return ad::log(bound(hi_prefix, hi_slot, 1.0) - bound(lo_prefix, lo_slot, 0.0));
}

std::string to_string(ResampleGradient mode) {
  return mode == ResampleGradient::CarriedWeights ? "weights" : "score";
}

ResampleGradient parse_resample_gradient(const std::string& name) {
  if (name == "weights") return ResampleGradient::CarriedWeights;
  if (name == "score") return ResampleGradient::AncestorScore;
  throw std::invalid_argument("unknown resample gradient '" + name + "' (expected weights or score)");
}

ResampleResult resample(const ParticleEnsemble& ens, Rng& rng, double jitter_scale, ResampleGradient gradient) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dimension();
  const auto w = ens.weight_values();
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const auto ancestors = systematic_indices(w, uniform01(rng));

  const auto cont = ens.space().continuous_indices();
  std::vector<double> sd(d, 0.0);
  for (std::size_t j : cont) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += w[i] * ens.particle(i)[j];
    mean /= total;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = ens.particle(i)[j] - mean;
      var += w[i] * dx * dx;
    }
    sd[j] = jitter_scale * std::sqrt(std::max(var / total, 0.0));
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> positions(n * d);
  std::vector<ad::Real> weights(n);
  std::vector<double> candidate(d);
  const auto src_w = ens.weights();
  const bool carried = gradient == ResampleGradient::CarriedWeights;
  const ad::Real src_total = carried ? ad::sum(src_w) : ad::Real(total);
  const auto& space = ens.space();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = ancestors[k];
    const auto src = ens.particle(a);
    std::span<double> dst(positions.data() + k * d, d);
    std::copy(src.begin(), src.end(), dst.begin());
    if (jitter_scale > 0.0 && !cont.empty()) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        std::copy(src.begin(), src.end(), candidate.begin());
        for (std::size_t j : cont) {
          if (sd[j] <= 0.0) continue;
          candidate[j] = std::clamp(src[j] + sd[j] * standard_normal(rng), space[j].lower, space[j].upper);
        }
        if (!space.has_predicate() || space.contains(candidate)) {
          std::copy(candidate.begin(), candidate.end(), dst.begin());
          break;
        }
      }
    }
    if (carried && w[a] > 0.0) {
      weights[k] = ad::make(inv_n, src_w[a], inv_n / w[a], src_total, -inv_n / total);
    } else {
      weights[k] = ad::Real(inv_n);
    }
  }
  ad::Real log_prob = carried ? ad::Real(0.0) : systematic_log_prob(src_w, ancestors);
  return ResampleResult{ParticleEnsemble(ens.space_ptr(), std::move(positions), std::move(weights)), ancestors,
                        std::move(log_prob)};
}

ResampleResult resample(const ParticleEnsemble& ens, std::uint64_t seed, double jitter_scale,
                        ResampleGradient gradient) {
  Rng rng(seed);
  return resample(ens, rng, jitter_scale, gradient);
}

void write_snapshot(std::ostream& out, const ParticleEnsemble& ens) {
  out << "particle_index,weight";
  for (const auto& dim : ens.space().dimensions()) out << ',' << dim.name;
  out << '\n';
  for (std::size_t i = 0; i < ens.size(); ++i) {
    out << i << ',' << fmt::format("{:.17g}", ens.weights()[i].value());
    for (double x : ens.particle(i)) out << ',' << fmt::format("{:.17g}", x);
    out << '\n';
  }
}

}  // namespace qmetro
