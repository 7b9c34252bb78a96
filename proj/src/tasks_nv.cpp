#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "qmetro/tasks.hpp"

namespace qmetro {

namespace {

double fixed_or(const std::map<std::string, double>& fixed, const std::string& key, double fallback) {
  const auto it = fixed.find(key);
  return it == fixed.end() ? fallback : it->second;
}

void assign(NvParams& p, const std::string& name, double v) {
  if (name == "omega") p.omega = v;
  else if (name == "field") p.field = v;
  else if (name == "inv_t2" || name == "inv_t") p.inv_t2 = v;
  else if (name == "beta") p.beta = v;
  else if (name == "omega0") p.omega0 = v;
  else if (name == "omega1") p.omega1 = v;
  else throw std::invalid_argument("unknown NV parameter '" + name + "'");
}

std::string task_name(NvKind kind) {
  switch (kind) {
    case NvKind::Dc: return "nv_dc";
    case NvKind::Ac: return "nv_ac";
    case NvKind::Decoherence: return "nv_dec";
    case NvKind::Hyperfine: return "nv_hyperfine";
  }
  return "nv_dc";
}

// Runs with the active tape detached so that bookkeeping values never enter the gradient.
template <class F>
auto untracked(F&& f) {
  ad::ScopedTape none(nullptr);
  return f();
}

}  // namespace

NvTask::NvTask(NvTaskSettings settings) : settings_(std::move(settings)), model_(settings_.kind, settings_.model) {
  const auto& names = model_.parameter_names();
  for (const auto& p : settings_.priors) {
    if (std::find(names.begin(), names.end(), p.name) == names.end())
      throw std::invalid_argument(fmt::format("{} has no parameter '{}'", task_name(settings_.kind), p.name));
  }
  for (const auto& [key, value] : settings_.fixed) {
    if (std::find(names.begin(), names.end(), key) == names.end())
      throw std::invalid_argument(fmt::format("{} has no parameter '{}'", task_name(settings_.kind), key));
  }
  std::vector<Dimension> dims;
  for (const auto& n : names) {
    const auto it = std::find_if(settings_.priors.begin(), settings_.priors.end(),
                                 [&](const PriorInterval& p) { return p.name == n; });
    if (it != settings_.priors.end()) {
      if (settings_.fixed.count(n) != 0) throw std::invalid_argument("parameter '" + n + "' is both fixed and estimated");
      dims.push_back(Dimension::continuous(n, it->lower, it->upper));
    } else if (settings_.fixed.count(n) == 0 && n != "inv_t2" && n != "beta") {
      throw std::invalid_argument("parameter '" + n + "' needs a prior or a fixed value");
    }
  }
  if (dims.empty()) throw std::invalid_argument("at least one parameter must be estimated");
  ParameterSpace::Predicate predicate;
  if (settings_.kind == NvKind::Hyperfine) {
    std::size_t i0 = dims.size(), i1 = dims.size();
    for (std::size_t j = 0; j < dims.size(); ++j) {
      if (dims[j].name == "omega0") i0 = j;
      if (dims[j].name == "omega1") i1 = j;
    }
    if (i0 < dims.size() && i1 < dims.size())
      predicate = [i0, i1](std::span<const double> x) { return x[i1] > x[i0]; };
  }
  space_ = std::make_shared<const ParameterSpace>(dims, predicate);

  weights_.assign(dims.size(), 0.0);
  if (settings_.weights.empty()) {
    weights_[0] = 1.0;
  } else {
    for (const auto& [key, value] : settings_.weights) {
      if (value < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
      weights_[space_->index_of(key)] = value;
    }
  }
  for (std::size_t j = 0; j < dims.size(); ++j) {
    widths_.push_back(dims[j].upper - dims[j].lower);
    if (weights_[j] > 0.0) targets_.push_back(j);
  }
  if (targets_.empty()) throw std::invalid_argument("loss weights select no parameter");

  auto& b = settings_.budget;
  if (b.kind == BudgetKind::Photons) throw std::invalid_argument("NV tasks are limited by measurements or time");
  if (b.kind == BudgetKind::Measurements) {
    if (b.max_steps == 0) b.max_steps = static_cast<std::size_t>(b.amount);
    b.max_steps = std::min(b.max_steps, static_cast<std::size_t>(b.amount));
  } else if (b.max_steps == 0) {
    throw std::invalid_argument("time budgets need max_steps");
  }
  if (settings_.particles < 2) throw std::invalid_argument("at least two particles are needed");

  if (settings_.prefactor > 0.0) {
    prefactor_ = settings_.prefactor;
  } else {
    PrefactorSettings ps;
    ps.kind = settings_.kind;
    ps.regime = b.kind == BudgetKind::Measurements ? Regime::Measurements : Regime::Time;
    ps.budget = b.amount;
    const double known_rate = fixed_or(settings_.fixed, "inv_t2", 0.0);
    if (settings_.kind != NvKind::Decoherence && known_rate > 0.0) ps.t2 = 1.0 / known_rate;
    for (const auto& p : settings_.priors)
      if (p.name == "inv_t2") ps.inv_t2_lower = p.lower;
    prefactor_ = default_prefactor(ps);
  }
}

std::string NvTask::name() const { return task_name(settings_.kind); }

std::vector<std::string> NvTask::baselines() const {
  if (settings_.kind == NvKind::Decoherence) return {"inverse_time", "random", "ramp"};
  return {"pgh", "sigma", "sigma_t2", "random", "ramp"};
}

std::size_t NvTask::agent_inputs() const {
  return settings_.agent_input == "step_resource" ? 2 : nv_feature_count(space_->size());
}

std::size_t NvTask::agent_outputs() const {
  if (settings_.kind == NvKind::Dc) return 2;
  if (settings_.kind == NvKind::Hyperfine && settings_.model.hyperfine_phase) return 2;
  return 1;
}

std::unique_ptr<Agent> NvTask::make_agent(const std::string& kind, Rng& rng) const {
  if (kind == "affine") return std::make_unique<AffineAgent>(space_->size(), 1.0, 0.0);
  if (kind == "table") return std::make_unique<ControlTable>(max_steps(), agent_outputs(), 0.0);
  return Task::make_agent(kind, rng);
}

NvParams NvTask::to_params(std::span<const double> point) const {
  NvParams p;
  for (const auto& [key, value] : settings_.fixed) assign(p, key, value);
  for (std::size_t j = 0; j < space_->size(); ++j) assign(p, (*space_)[j].name, point[j]);
  return p;
}

double NvTask::ramp_tau(std::size_t step) const {
  const std::size_t span = std::max<std::size_t>(max_steps(), 2) - 1;
  return 1.0 + (prefactor_ - 1.0) * static_cast<double>(std::min(step, span)) / static_cast<double>(span);
}

namespace {

struct NvRollout {
  const NvTask& task;
  const Policy& policy;
  const EpisodeOptions& options;
  std::vector<std::vector<double>>* features_out = nullptr;
};

double posterior_mean(const PosteriorMoments& m, const ParameterSpace& space, const std::string& name,
                      double fallback) {
  for (std::size_t j = 0; j < space.size(); ++j)
    if (space[j].name == name) return m.mean[j].value();
  return fallback;
}

EpisodeRecord run_nv(const NvRollout& r, std::span<const double> weights, std::span<const double> widths,
                     std::span<const std::size_t> targets) {
  const auto& task = r.task;
  const auto& s = task.settings();
  const auto& space = *task.space();
  const auto& model = task.model();
  const auto& budget = s.budget;
  const std::uint64_t seed = r.options.seed;
  Rng truth_rng = make_stream(seed, 1);
  Rng particle_rng = make_stream(seed, 2);
  Rng outcome_rng = make_stream(seed, 3);
  Rng resample_rng = make_stream(seed, 4);
  Rng policy_rng = make_stream(seed, 5);

  const auto truth_point = sample_prior(space, truth_rng);
  const NvParams truth = task.to_params(truth_point);
  auto ens = init_from_prior(task.space(), s.particles, particle_rng);

  const auto error_of = [&](const PosteriorMoments& m) {
    ad::Real e(0.0);
    for (std::size_t j : targets) e += weights[j] * ad::square(m.mean[j] - truth_point[j]);
    return e;
  };

  EpisodeRecord rec;
  auto m = moments(ens);
  rec.prior_precision = untracked([&] { return error_of(moments(ens)).value(); });
  const double max_resource = budget.kind == BudgetKind::Measurements ? static_cast<double>(budget.max_steps)
                                                                       : budget.amount;
  const auto n = static_cast<double>(s.particles);
  double tally = 0.0;
  ad::Real elapsed(0.0);
  std::vector<ad::Real> lik(ens.size());

  for (std::size_t t = 0; !budget.exhausted(tally, t); ++t) {
    ad::Real tau, phi;
    std::vector<ad::Real> features;
    if (r.policy.agent != nullptr || r.features_out != nullptr) {
      if (s.agent_input == "step_resource") {
        features = {ad::Real(2.0 * static_cast<double>(t) / static_cast<double>(budget.max_steps) - 1.0),
                    ad::Real(2.0 * tally / max_resource - 1.0)};
      } else {
        features = featurize_nv(m, space, t, budget.max_steps, tally, max_resource, s.sigma_cap);
      }
      if (r.features_out != nullptr) r.features_out->push_back(ad::values(features));
    }
    if (r.policy.agent != nullptr) {
      const auto out = r.policy.agent->forward({features, t, 0});
      const auto c = nv_control(out, task.prefactor());
      tau = c.tau;
      phi = c.phi;
    } else {
      NvControls c;
      const auto& b = r.policy.baseline;
      if (b == "pgh") {
        c = pgh_control(ens, targets, policy_rng);
      } else if (b == "sigma" || b == "sigma_t2") {
        double trace = 0.0;
        for (std::size_t j : targets) trace += m.cov(j, j).value();
        const double rate = posterior_mean(m, space, "inv_t2", fixed_or(s.fixed, "inv_t2", 0.0));
        c = sigma_inverse_control(trace, rate, b == "sigma" ? SigmaVariant::Sigma : SigmaVariant::SigmaT2);
      } else if (b == "inverse_time") {
        const double rate = posterior_mean(m, space, "inv_t", fixed_or(s.fixed, "inv_t", 0.0));
        const double beta = posterior_mean(m, space, "beta", fixed_or(s.fixed, "beta", 1.0));
        c = inverse_time_control(rate, beta, budget.kind == BudgetKind::Measurements ? Regime::Measurements
                                                                                      : Regime::Time,
                                 s.inverse_time_literal);
      } else if (b == "random") {
        std::size_t j = 0;
        for (std::size_t k = 0; k < space.size(); ++k)
          if (space[k].name == "inv_t") j = k;
        c = random_control(space[j].lower, space[j].upper, policy_rng);
      } else if (b == "ramp") {
        c = {task.ramp_tau(t), 0.0};
      } else {
        throw std::invalid_argument(fmt::format("{} has no baseline '{}'", task.name(), b));
      }
      tau = ad::Real(c.tau);
      phi = ad::Real(c.phi);
    }

    const ad::Real p_plus = model.probability(+1, truth, tau, phi);
    const int y = uniform01(outcome_rng) < p_plus.value() ? +1 : -1;
    const ad::Real p_y = model.probability(y, truth, tau, phi);
    rec.score.push_back(ad::log(p_y));
    rec.score_step.push_back(t);

    for (std::size_t i = 0; i < ens.size(); ++i) lik[i] = model.probability(y, task.to_params(ens.particle(i)), tau, phi);
    try {
      ens = bayes_update(ens, lik);
    } catch (const DegenerateEvidence& e) {
      rec.aborted = true;
      rec.abort_reason = e.what();
      break;
    }
    tally += budget.kind == BudgetKind::Measurements ? 1.0 : tau.value();
    elapsed += tau;
    m = moments(ens);
    const ad::Real err = error_of(m);
    if (s.loss.mode == LossMode::Cumulative) {
      rec.step_loss.push_back(err / eta_normalizer(weights, widths, s.loss.eta_form, elapsed));
    } else {
      rec.step_loss.push_back(err);
    }
    rec.precision.push_back(err.value());
    rec.resource.push_back(tally);
    rec.controls.push_back({tau.value(), phi.value()});
    rec.outcomes.push_back({static_cast<double>(y)});

    const double ess = ens.ess() / n;
    rec.ess_min = std::min(rec.ess_min, ess);
    if (s.pf.ess_threshold > 0.0 && ess < s.pf.ess_threshold && !budget.exhausted(tally, t + 1)) {
      auto res = resample(ens, resample_rng, s.pf.jitter_scale, s.pf.gradient);
      rec.score.push_back(res.log_prob);
      rec.score_step.push_back(t + 1);
      ens = std::move(res.ensemble);
      m = moments(ens);
    }
  }
  return rec;
}

}  // namespace

EpisodeRecord NvTask::run_episode(const Policy& policy, const EpisodeOptions& options) const {
  return run_nv({*this, policy, options, nullptr}, weights_, widths_, targets_);
}

void NvTask::pretrain(Agent& agent, std::size_t steps, std::uint64_t seed) const {
  const std::size_t outputs = agent.output_size();
  if (auto* table = dynamic_cast<ControlTable*>(&agent)) {
    for (std::size_t t = 0; t < table->rows(); ++t) {
      table->at(t, 0) = (ramp_tau(t) - 1.0) / prefactor_;
      for (std::size_t j = 1; j < outputs; ++j) table->at(t, j) = 0.0;
    }
    return;
  }
  if (agent.kind() != "mlp" || steps == 0) return;
  std::vector<PretrainSample> samples;
  const Policy ramp{nullptr, "ramp"};
  const std::size_t episodes = 32;
  for (std::size_t k = 0; k < episodes; ++k) {
    std::vector<std::vector<double>> features;
    EpisodeOptions opts;
    opts.seed = derive_seed(seed, 0x9E7, k);
    run_nv({*this, ramp, opts, &features}, weights_, widths_, targets_);
    for (std::size_t t = 0; t < features.size(); ++t) {
      PretrainSample sample;
      sample.features = features[t];
      sample.target.assign(outputs, 0.0);
      sample.target[0] = (ramp_tau(t) - 1.0) / prefactor_;
      samples.push_back(std::move(sample));
    }
  }
  fit_supervised(agent, samples, steps, 1e-3, derive_seed(seed, 0x9E8));
}

}  // namespace qmetro
