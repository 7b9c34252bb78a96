#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "qmetro/bounds.hpp"
#include "qmetro/tasks.hpp"

namespace qmetro {

namespace {

constexpr double kPi = std::numbers::pi;

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  EvalRow row(double resource, const std::string& strategy) const {
    EvalRow r{resource, 0.0, 0.0, strategy, n};
    if (n > 0) {
      r.precision_mean = sum / static_cast<double>(n);
      if (n > 1) {
        const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * r.precision_mean * r.precision_mean) /
                                             static_cast<double>(n - 1));
        r.precision_stderr = std::sqrt(var / static_cast<double>(n));
      }
    }
    return r;
  }
};

std::vector<EpisodeOptions> eval_options(std::size_t episodes, std::uint64_t seed) {
  std::vector<EpisodeOptions> options(episodes);
  for (std::size_t i = 0; i < episodes; ++i) options[i].seed = derive_seed(seed, 0xE7A1, i);
  return options;
}

double final_precision(const EpisodeRecord& rec) { return rec.precision.empty() ? rec.prior_precision : rec.precision.back(); }

std::vector<double> weight_fractions(const ParticleEnsemble& ens) {
  auto w = ens.weight_values();
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

// Marginal of a discrete coordinate from plain weights.
std::vector<double> class_marginal(const ParticleEnsemble& ens, std::size_t dim) {
  const auto w = weight_fractions(ens);
  std::vector<double> out(ens.space()[dim].cardinality, 0.0);
  for (std::size_t i = 0; i < ens.size(); ++i) out[static_cast<std::size_t>(ens.particle(i)[dim])] += w[i];
  return out;
}

ad::Real spread_feature(const ad::Real& variance) {
  const ad::Real v = ad::max(variance, ad::Real(1e-300));
  return ad::min(-0.05 * ad::log(v), ad::Real(kSigmaCap));
}

}  // namespace

// ---------------------------------------------------------------- Dolinar

DolinarTask::DolinarTask(DolinarSettings settings) : settings_(settings) {
  if (settings_.references == 0) throw std::invalid_argument("the receiver needs at least one reference copy");
  if (!(settings_.alpha_lower >= 0.0 && settings_.alpha_upper > settings_.alpha_lower))
    throw std::invalid_argument("amplitude prior must satisfy 0 <= lower < upper");
  if (settings_.loss_variant < 0 || settings_.loss_variant > 8)
    throw std::invalid_argument("Dolinar loss variant must be in 0..8");
  budget_ = {BudgetKind::Measurements, static_cast<double>(settings_.references), settings_.references};
  space_ = std::make_shared<const ParameterSpace>(std::vector<Dimension>{
      Dimension::continuous("alpha", settings_.alpha_lower, settings_.alpha_upper), Dimension::discrete("sign", 2)});
}

std::vector<double> DolinarTask::default_grid() const {
  std::vector<double> grid;
  const int points = 15;
  for (int k = 0; k < points; ++k)
    grid.push_back(settings_.alpha_lower +
                   (settings_.alpha_upper - settings_.alpha_lower) * (k + 0.5) / static_cast<double>(points));
  return grid;
}

EpisodeRecord DolinarTask::run_episode(const Policy& policy, const EpisodeOptions& options) const {
  Rng truth_rng = make_stream(options.seed, 1);
  Rng particle_rng = make_stream(options.seed, 2);
  Rng outcome_rng = make_stream(options.seed, 3);
  Rng resample_rng = make_stream(options.seed, 4);
  Rng policy_rng = make_stream(options.seed, 5);

  auto truth = sample_prior(*space_, truth_rng);
  if (options.condition) truth[0] = *options.condition;
  const double alpha = truth[0];
  const int sign = truth[1] == 0.0 ? 1 : -1;
  const double helstrom = helstrom_error(alpha, settings_.references);
  const double mean_scale = alpha * alpha;

  auto ens = init_from_prior(space_, settings_.particles, particle_rng);
  const std::size_t n = settings_.references;
  const std::array<std::size_t, 1> alpha_dim{0};
  const double width = settings_.alpha_upper - settings_.alpha_lower;

  EpisodeRecord rec;
  rec.key = alpha;
  rec.prior_precision = 0.5;
  std::array<ad::Complex, 2> signal{ad::Complex(ad::Real(1.0)), ad::Complex(ad::Real(-1.0))};
  int photons = 0;
  std::vector<ad::Real> lik(ens.size());

  for (std::size_t t = 0; t < n; ++t) {
    const int parity = photons % 2;
    ad::Real theta;
    if (policy.agent != nullptr) {
      const auto p_plus = discrete_marginal(ens, 1)[0];
      std::vector<ad::Real> features;
      for (std::size_t s = 0; s < 2; ++s) {
        const auto m = conditional_moments(ens, alpha_dim, 1, s);
        features.push_back(ad::norm(signal[s]));
        features.push_back(2.0 * (m.mean[0] - settings_.alpha_lower) / width - 1.0);
        features.push_back(normalized_sigma(m.cov(0, 0)));
      }
      features.push_back(2.0 * p_plus - 1.0);
      features.push_back(ad::Real(2.0 * static_cast<double>(t) / static_cast<double>(n) - 1.0));
      features.push_back(ad::Real(parity == 0 ? 1.0 : -1.0));
      theta = policy.agent->forward({features, t, 0})[0];
    } else if (policy.baseline == "balanced") {
      theta = ad::Real(std::asin(std::sqrt(1.0 / static_cast<double>(n + 1 - t))));
    } else if (policy.baseline == "random") {
      theta = ad::Real(uniform(policy_rng, 0.0, kPi / 2.0));
    } else {
      throw std::invalid_argument(fmt::format("dolinar has no baseline '{}'", policy.baseline));
    }

    const bool last = t + 1 == n;
    std::array<DolinarStep, 2> step{dolinar_step(signal[0], theta, parity), dolinar_step(signal[1], theta, parity)};
    const auto& truth_step = step[sign > 0 ? 0 : 1];
    const ad::Real mean_measured = mean_scale * ad::norm(truth_step.measured);
    const int k = sample_poisson(mean_measured.value(), outcome_rng);
    rec.score.push_back(ad::log(ad::max(poisson_pmf(mean_measured, k), ad::Real(1e-300))));
    rec.score_step.push_back(t);
    int k_rest = 0;
    if (last) {
      const ad::Real mean_rest = mean_scale * ad::norm(truth_step.remaining);
      k_rest = sample_poisson(mean_rest.value(), outcome_rng);
      rec.score.push_back(ad::log(ad::max(poisson_pmf(mean_rest, k_rest), ad::Real(1e-300))));
      rec.score_step.push_back(t);
    }

    std::array<ad::Real, 2> measured_norm{ad::norm(step[0].measured), ad::norm(step[1].measured)};
    std::array<ad::Real, 2> rest_norm{ad::norm(step[0].remaining), ad::norm(step[1].remaining)};
    for (std::size_t i = 0; i < ens.size(); ++i) {
      const auto x = ens.particle(i);
      const auto s = static_cast<std::size_t>(x[1]);
      const double a2 = x[0] * x[0];
      ad::Real l = poisson_pmf(a2 * measured_norm[s], k);
      if (last) l = l * poisson_pmf(a2 * rest_norm[s], k_rest);
      lik[i] = l;
    }
    try {
      ens = bayes_update(ens, lik);
    } catch (const DegenerateEvidence& e) {
      rec.aborted = true;
      rec.abort_reason = e.what();
      break;
    }
    signal = {step[0].remaining, step[1].remaining};
    photons += k + k_rest;

    const ad::Real p_plus = discrete_marginal(ens, 1)[0];
    rec.step_loss.push_back(dolinar_loss(p_plus, sign, photons, settings_.loss_variant, helstrom));
    rec.precision.push_back(dolinar_loss(DolinarOutcome{p_plus.value(), sign, photons}, 0, helstrom));
    rec.resource.push_back(static_cast<double>(t + 1));
    rec.controls.push_back({theta.value()});
    rec.outcomes.push_back({static_cast<double>(k), static_cast<double>(k_rest)});

    const double ess = ens.ess() / static_cast<double>(ens.size());
    rec.ess_min = std::min(rec.ess_min, ess);
    if (!last && settings_.pf.ess_threshold > 0.0 && ess < settings_.pf.ess_threshold) {
      auto res = resample(ens, resample_rng, settings_.pf.jitter_scale, settings_.pf.gradient);
      rec.score.push_back(res.log_prob);
      rec.score_step.push_back(t + 1);
      ens = std::move(res.ensemble);
    }
  }
  return rec;
}

std::vector<EvalRow> DolinarTask::evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                           std::uint64_t seed, std::size_t workers) const {
  std::vector<EvalRow> rows;
  for (double alpha : grid) {
    auto options = eval_options(episodes, seed);
    for (auto& o : options) o.condition = alpha;
    const auto records = run_batch(*this, policy, options, workers);
    Accumulator acc;
    for (const auto& rec : records)
      if (!rec.aborted) acc.add(final_precision(rec));
    rows.push_back(acc.row(alpha, policy.name()));
  }
  return rows;
}

// ---------------------------------------------------------------- three-state classifier

QmlTask::QmlTask(QmlSettings settings) : settings_(settings) {
  if (settings_.copies == 0) throw std::invalid_argument("the classifier needs at least one training copy");
  if (!(settings_.half_width > 0.0)) throw std::invalid_argument("the amplitude half-width must be positive");
  budget_ = {BudgetKind::Measurements, static_cast<double>(measurements()), measurements()};
  std::vector<Dimension> dims;
  const double h = settings_.half_width;
  for (int j = 0; j < 3; ++j) {
    dims.push_back(Dimension::continuous(fmt::format("re{}", j), -h, h));
    dims.push_back(Dimension::continuous(fmt::format("im{}", j), -h, h));
  }
  dims.push_back(Dimension::discrete("class", 3));
  space_ = std::make_shared<const ParameterSpace>(std::move(dims));
}

std::unique_ptr<Agent> QmlTask::make_agent(const std::string& kind, Rng& rng) const {
  if (kind == "tree") return std::make_unique<TreeAgent>(3 * settings_.copies - 1, 2, rng, -1.0, 1.0);
  return Task::make_agent(kind, rng);
}

std::vector<double> QmlTask::default_grid() const {
  const double h = settings_.half_width;
  const double most = static_cast<double>(measurements()) * 2.0 * h * h;
  std::vector<double> grid;
  for (int k = 1; k <= 10; ++k) grid.push_back(most * k / 10.0);
  return grid;
}

namespace {

struct QmlControl {
  ad::Real theta;
  ad::Real phi;
};

cplx reference_of(std::span<const double> x, std::size_t j) { return {x[2 * j], x[2 * j + 1]}; }

ad::Complex replay_signal(std::span<const double> x, std::span<const QmlControl> controls) {
  ad::Complex signal(reference_of(x, static_cast<std::size_t>(x[6])));
  for (std::size_t t = 0; t < controls.size(); ++t) {
    const auto out = apply_beamsplitter(signal, ad::Complex(reference_of(x, t % 3)), controls[t].theta, controls[t].phi);
    signal = out.first;
  }
  return signal;
}

}  // namespace

EpisodeRecord QmlTask::run_episode(const Policy& policy, const EpisodeOptions& options) const {
  Rng truth_rng = make_stream(options.seed, 1);
  Rng particle_rng = make_stream(options.seed, 2);
  Rng outcome_rng = make_stream(options.seed, 3);
  Rng resample_rng = make_stream(options.seed, 4);
  Rng policy_rng = make_stream(options.seed, 5);

  const auto truth = sample_prior(*space_, truth_rng);
  const auto truth_class = static_cast<std::size_t>(truth[6]);
  auto ens = init_from_prior(space_, settings_.particles, particle_rng);
  const std::size_t n = settings_.copies;
  const std::size_t total = measurements();
  const double h = settings_.half_width;

  EpisodeRecord rec;
  double refs = 0.0;
  for (std::size_t j = 0; j < 3; ++j) refs += std::norm(reference_of(truth, j));
  rec.key = static_cast<double>(n) * refs + std::norm(reference_of(truth, truth_class));
  rec.prior_precision = 2.0 / 3.0;

  std::vector<ad::Complex> signals(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i) signals[i] = replay_signal(ens.particle(i), {});
  ad::Complex truth_signal(reference_of(truth, truth_class));
  std::vector<QmlControl> history;
  std::size_t node = 0;
  std::vector<std::size_t> all_dims{0, 1, 2, 3, 4, 5};
  std::vector<ad::Real> lik(ens.size());

  for (std::size_t t = 0; t < total; ++t) {
    const bool final_count = t + 1 == total;
    ad::Complex truth_measured;
    std::vector<ad::Complex> measured(ens.size());
    QmlControl control;
    if (!final_count) {
      if (policy.agent != nullptr) {
        std::vector<ad::Real> features;
        const auto w = ens.weights();
        const ad::Real wsum = ad::sum(w);
        ad::Real re(0.0), im(0.0);
        for (std::size_t i = 0; i < ens.size(); ++i) {
          re += w[i] * signals[i].re;
          im += w[i] * signals[i].im;
        }
        features.push_back(re / wsum);
        features.push_back(im / wsum);
        const auto m = moments(ens, all_dims);
        for (std::size_t j = 0; j < 6; ++j) features.push_back(m.mean[j] / h);
        for (std::size_t j = 0; j < 6; ++j) features.push_back(spread_feature(m.cov(j, j)));
        for (const auto& p : discrete_marginal(ens, 6)) features.push_back(2.0 * p - 1.0);
        features.push_back(ad::Real(2.0 * static_cast<double>(t) / static_cast<double>(total) - 1.0));
        features.push_back(ad::Real(static_cast<double>(t % 3) - 1.0));
        const auto out = policy.agent->forward({features, t, node});
        control = {(kPi / 2.0) * out[0], kPi * out[1]};
      } else if (policy.baseline == "nonoptimized") {
        control = {ad::Real(std::asin(std::sqrt(1.0 / static_cast<double>(total - t)))), ad::Real(0.0)};
      } else if (policy.baseline == "random") {
        const double theta = uniform(policy_rng, 0.0, kPi / 2.0);
        control = {ad::Real(theta), ad::Real(uniform(policy_rng, 0.0, 2.0 * kPi))};
      } else {
        throw std::invalid_argument(fmt::format("qml3 has no baseline '{}'", policy.baseline));
      }
      const auto truth_out =
          apply_beamsplitter(truth_signal, ad::Complex(reference_of(truth, t % 3)), control.theta, control.phi);
      truth_signal = truth_out.first;
      truth_measured = truth_out.second;
      for (std::size_t i = 0; i < ens.size(); ++i) {
        const auto out = apply_beamsplitter(signals[i], ad::Complex(reference_of(ens.particle(i), t % 3)),
                                            control.theta, control.phi);
        signals[i] = out.first;
        measured[i] = out.second;
      }
      history.push_back(control);
    } else {
      truth_measured = truth_signal;
      measured = signals;
    }

    const ad::Real mean = ad::norm(truth_measured);
    const int k = sample_poisson(mean.value(), outcome_rng);
    rec.score.push_back(ad::log(ad::max(poisson_pmf(mean, k), ad::Real(1e-300))));
    rec.score_step.push_back(t);
    for (std::size_t i = 0; i < ens.size(); ++i) lik[i] = poisson_pmf(ad::norm(measured[i]), k);
    try {
      ens = bayes_update(ens, lik);
    } catch (const DegenerateEvidence& e) {
      rec.aborted = true;
      rec.abort_reason = e.what();
      break;
    }
    if (!final_count) node = TreeAgent::child(node, qml_coarse_grain(k, h));

    const double error = classification_loss(class_marginal(ens, 6), truth_class);
    rec.step_loss.push_back(ad::Real(error));
    rec.precision.push_back(error);
    rec.resource.push_back(static_cast<double>(t + 1));
    rec.controls.push_back({control.theta.value(), control.phi.value()});
    rec.outcomes.push_back({static_cast<double>(k), mean.value()});

    const double ess = ens.ess() / static_cast<double>(ens.size());
    rec.ess_min = std::min(rec.ess_min, ess);
    if (!final_count && settings_.pf.ess_threshold > 0.0 && ess < settings_.pf.ess_threshold) {
      auto res = resample(ens, resample_rng, settings_.pf.jitter_scale, settings_.pf.gradient);
      rec.score.push_back(res.log_prob);
      rec.score_step.push_back(t + 1);
      ens = std::move(res.ensemble);
      for (std::size_t i = 0; i < ens.size(); ++i) signals[i] = replay_signal(ens.particle(i), history);
    }
  }
  return rec;
}

std::vector<EvalRow> QmlTask::evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                       std::uint64_t seed, std::size_t workers) const {
  const auto records = run_batch(*this, policy, eval_options(episodes, seed), workers);
  std::vector<Accumulator> bins(grid.size());
  for (const auto& rec : records) {
    if (rec.aborted) continue;
    for (std::size_t b = 0; b < grid.size(); ++b) {
      const double lower = b == 0 ? 0.0 : grid[b - 1];
      if (rec.key > lower && rec.key <= grid[b]) {
        bins[b].add(final_precision(rec));
        break;
      }
    }
  }
  std::vector<EvalRow> rows;
  for (std::size_t b = 0; b < grid.size(); ++b) rows.push_back(bins[b].row(grid[b], policy.name()));
  return rows;
}

// ---------------------------------------------------------------- multiphase discrimination

MultiphaseTask::MultiphaseTask(MultiphaseSettings settings) : settings_(std::move(settings)) {
  if (settings_.input.size() != 4) throw std::invalid_argument("the interferometer input has four modes");
  if (settings_.measurements == 0) throw std::invalid_argument("at least one measurement is needed");
  const CoherentRegister input{settings_.input};
  photons_per_use_ = input.mean_photons();
  if (!(photons_per_use_ > 0.0)) throw std::invalid_argument("the interferometer input carries no photons");
  for (std::size_t h = 0; h < 8; ++h) encoded_.push_back(encode_multiphase(input, hypothesis_phases(h)));
  budget_ = {BudgetKind::Photons, photons_per_use_ * static_cast<double>(settings_.measurements),
             settings_.measurements};
}

std::array<double, 3> MultiphaseTask::hypothesis_phases(std::size_t h) {
  return {static_cast<double>(h & 1u), static_cast<double>((h >> 1) & 1u), static_cast<double>((h >> 2) & 1u)};
}

std::unique_ptr<Agent> MultiphaseTask::make_agent(const std::string& kind, Rng& rng) const {
  if (kind == "table") return std::make_unique<ControlTable>(settings_.measurements, 3, rng, 0.0, 1.0);
  return Task::make_agent(kind, rng);
}

std::vector<double> MultiphaseTask::default_grid() const {
  std::vector<double> grid;
  for (std::size_t m = 1; m <= settings_.measurements; ++m) grid.push_back(photons_per_use_ * static_cast<double>(m));
  return grid;
}

EpisodeRecord MultiphaseTask::run_episode(const Policy& policy, const EpisodeOptions& options) const {
  Rng truth_rng = make_stream(options.seed, 1);
  Rng outcome_rng = make_stream(options.seed, 3);
  Rng policy_rng = make_stream(options.seed, 5);

  const std::size_t truth = static_cast<std::size_t>(uniform01(truth_rng) * 8.0) % 8;
  std::vector<ad::Real> weights(8, ad::Real(1.0 / 8.0));
  const std::size_t total = settings_.measurements;

  EpisodeRecord rec;
  rec.prior_precision = 7.0 / 8.0;
  double tally = 0.0;
  for (std::size_t t = 0; t < total; ++t) {
    std::array<ad::Real, 3> c;
    if (policy.agent != nullptr) {
      std::vector<ad::Real> features(weights);
      features.push_back(ad::Real(2.0 * static_cast<double>(t) / static_cast<double>(total) - 1.0));
      features.push_back(ad::Real(2.0 * tally / budget_.amount - 1.0));
      const auto out = policy.agent->forward({features, t, 0});
      for (std::size_t j = 0; j < 3; ++j) c[j] = 2.0 * kPi * out[j];
    } else if (policy.baseline == "random") {
      for (auto& x : c) x = ad::Real(uniform(policy_rng, 0.0, 2.0 * kPi));
    } else {
      throw std::invalid_argument(fmt::format("multiphase has no baseline '{}'", policy.baseline));
    }

    const auto truth_out = multiphase_output(encoded_[truth], c);
    std::array<int, 4> counts{};
    ad::Real log_p(0.0);
    for (std::size_t mode = 0; mode < 4; ++mode) {
      const ad::Real mean = ad::norm(truth_out[mode]);
      counts[mode] = sample_poisson(mean.value(), outcome_rng);
      log_p += ad::log(ad::max(poisson_pmf(mean, counts[mode]), ad::Real(1e-300)));
    }
    rec.score.push_back(log_p);
    rec.score_step.push_back(t);

    ad::Real evidence(0.0);
    std::vector<ad::Real> posterior(8);
    for (std::size_t h = 0; h < 8; ++h) {
      const auto out = multiphase_output(encoded_[h], c);
      ad::Real lik(1.0);
      for (std::size_t mode = 0; mode < 4; ++mode) lik = lik * poisson_pmf(ad::norm(out[mode]), counts[mode]);
      posterior[h] = weights[h] * lik;
      evidence += posterior[h];
    }
    if (!(evidence.value() > 0.0)) {
      rec.aborted = true;
      rec.abort_reason = "all hypotheses excluded";
      break;
    }
    for (auto& w : posterior) w = w / evidence;
    weights = std::move(posterior);
    tally += photons_per_use_;

    const double error = classification_loss(ad::values(weights), truth);
    rec.step_loss.push_back(ad::Real(error));
    rec.precision.push_back(error);
    rec.resource.push_back(tally);
    rec.controls.push_back({c[0].value(), c[1].value(), c[2].value()});
    rec.outcomes.push_back({static_cast<double>(counts[0]), static_cast<double>(counts[1]),
                            static_cast<double>(counts[2]), static_cast<double>(counts[3])});
  }
  return rec;
}

// ---------------------------------------------------------------- static network classifier

namespace {

// Log-likelihood of the observed counts whose gradient flows into the network parameters.
class NetworkLogLikelihood final : public ad::ExternalOp {
 public:
  NetworkLogLikelihood(BsNetwork network, Eigen::MatrixXcd unitary_gradient, std::vector<std::uint32_t> leaves,
                       std::uint32_t output)
      : network_(std::move(network)),
        unitary_gradient_(std::move(unitary_gradient)),
        leaves_(std::move(leaves)),
        output_(output) {}

  void backward(ad::Tape& tape, std::span<double>) override {
    const double g = tape.adjoint(output_);
    if (g == 0.0) return;
    const auto grad = network_.generator_gradient(unitary_gradient_);
    for (std::size_t p = 0; p < leaves_.size(); ++p) tape.accumulate(leaves_[p], g * grad[p]);
  }

 private:
  BsNetwork network_;
  Eigen::MatrixXcd unitary_gradient_;
  std::vector<std::uint32_t> leaves_;
  std::uint32_t output_;
};

double counts_log_likelihood(const CoherentRegister& out, std::span<const int> counts) {
  double total = 0.0;
  for (std::size_t m = 0; m < out.modes(); ++m) total += log_poisson_pmf(std::norm(out.amplitudes[m]), counts[m]);
  return total;
}

ad::Real network_log_likelihood(const BsNetwork& network, std::span<const ad::Real> params, const CoherentRegister& input,
                                const CoherentRegister& output, std::span<const int> counts) {
  const double value = counts_log_likelihood(output, counts);
  ad::Tape* tape = ad::Tape::active();
  const bool tracked = std::any_of(params.begin(), params.end(), [](const ad::Real& p) { return p.tracked(); });
  if (tape == nullptr || !tracked) return ad::Real(value);
  const auto modes = static_cast<Eigen::Index>(network.modes());
  Eigen::MatrixXcd grad(modes, modes);
  for (Eigen::Index m = 0; m < modes; ++m) {
    const cplx beta = output.amplitudes[static_cast<std::size_t>(m)];
    const double mu = std::norm(beta);
    const double ratio = mu > 0.0 ? counts[static_cast<std::size_t>(m)] / mu : 0.0;
    for (Eigen::Index c = 0; c < modes; ++c)
      grad(m, c) = 2.0 * (ratio - 1.0) * beta * std::conj(input.amplitudes[static_cast<std::size_t>(c)]);
  }
  std::vector<std::uint32_t> leaves;
  for (const auto& p : params) leaves.push_back(p.id());
  const std::uint32_t id = tape->new_variables(1);
  tape->push_external(std::make_unique<NetworkLogLikelihood>(network, std::move(grad), std::move(leaves), id));
  return ad::Real(value, id);
}

}  // namespace

BsClassifierTask::BsClassifierTask(BsClassifierSettings settings) : settings_(settings) {
  if (settings_.classes < 2) throw std::invalid_argument("the classifier needs at least two classes");
  if (settings_.layers == 0) throw std::invalid_argument("the classifier needs at least one layer");
  if (!(settings_.amplitude > 0.0)) throw std::invalid_argument("the class amplitude must be positive");
  budget_ = {BudgetKind::Measurements, static_cast<double>(settings_.layers), settings_.layers};
}

CoherentRegister BsClassifierTask::input_register(std::size_t signal_class) const {
  const std::size_t d = settings_.classes;
  std::vector<cplx> amps(d + 1);
  for (std::size_t j = 0; j < d; ++j)
    amps[j + 1] = std::polar(settings_.amplitude, 2.0 * kPi * static_cast<double>(j) / static_cast<double>(d));
  amps[0] = amps[signal_class + 1];
  return CoherentRegister{std::move(amps)};
}

std::unique_ptr<Agent> BsClassifierTask::make_agent(const std::string& kind, Rng& rng) const {
  if (kind == "table") return std::make_unique<ControlTable>(settings_.layers, agent_outputs(), rng, -0.5, 0.5);
  throw AgentError(fmt::format("task {} cannot build a '{}' agent", name(), kind));
}

EpisodeRecord BsClassifierTask::run_episode(const Policy& policy, const EpisodeOptions& options) const {
  Rng truth_rng = make_stream(options.seed, 1);
  Rng outcome_rng = make_stream(options.seed, 3);
  Rng policy_rng = make_stream(options.seed, 5);

  const std::size_t d = settings_.classes;
  const std::size_t modes = d + 1;
  const std::size_t truth = static_cast<std::size_t>(uniform01(truth_rng) * static_cast<double>(d)) % d;
  std::vector<CoherentRegister> inputs;
  for (std::size_t s = 0; s < d; ++s) inputs.push_back(input_register(s));
  std::vector<double> log_w(d, -std::log(static_cast<double>(d)));

  EpisodeRecord rec;
  rec.prior_precision = 1.0 - 1.0 / static_cast<double>(d);
  for (std::size_t t = 0; t < settings_.layers; ++t) {
    std::vector<ad::Real> params;
    if (policy.agent != nullptr) {
      params = policy.agent->forward({{}, t, 0});
    } else if (policy.baseline == "random") {
      for (std::size_t p = 0; p < agent_outputs(); ++p) params.emplace_back(uniform(policy_rng, -0.5, 0.5));
    } else {
      throw std::invalid_argument(fmt::format("bs_classifier has no baseline '{}'", policy.baseline));
    }
    const auto network = BsNetwork::from_parameters(ad::values(params), modes);
    const auto out = network.apply(inputs[truth]);
    std::vector<int> counts(modes);
    for (std::size_t m = 0; m < modes; ++m) counts[m] = sample_poisson(std::norm(out.amplitudes[m]), outcome_rng);
    rec.score.push_back(network_log_likelihood(network, params, inputs[truth], out, counts));
    rec.score_step.push_back(t);

    for (std::size_t s = 0; s < d; ++s) log_w[s] += counts_log_likelihood(network.apply(inputs[s]), counts);
    const double top = *std::max_element(log_w.begin(), log_w.end());
    double norm = 0.0;
    std::vector<double> w(d);
    for (std::size_t s = 0; s < d; ++s) norm += (w[s] = std::exp(log_w[s] - top));
    for (auto& x : w) x /= norm;

    const double error = classification_loss(w, truth);
    rec.step_loss.push_back(ad::Real(error));
    rec.precision.push_back(error);
    rec.resource.push_back(static_cast<double>(t + 1));
    rec.controls.push_back(ad::values(params));
    std::vector<double> outcome(counts.begin(), counts.end());
    rec.outcomes.push_back(std::move(outcome));
  }
  return rec;
}

}  // namespace qmetro
