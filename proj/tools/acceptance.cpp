#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "qmetro/agents.hpp"
#include "qmetro/bounds.hpp"
#include "qmetro/cli.hpp"
#include "qmetro/config.hpp"
#include "qmetro/nv_models.hpp"
#include "qmetro/particle_filter.hpp"
#include "qmetro/photonic.hpp"
#include "qmetro/random.hpp"
#include "qmetro/tasks.hpp"
#include "qmetro/training.hpp"

namespace qmetro {
namespace {

constexpr double kPi = std::numbers::pi;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double relative_error(double value, double reference) { return std::abs(value - reference) / std::abs(reference); }

Verdict check_constants() {
  const auto k = maximize_fi_objectives();
  const std::array<std::pair<const char*, std::pair<double, double>>, 6> checks{{{"mu", {k.mu, 0.1619}},
                                                                                {"gamma", {k.gamma, 0.724611}},
                                                                                {"delta", {k.delta, 0.24429}},
                                                                                {"chi", {k.chi, 0.23966}},
                                                                                {"epsilon", {k.epsilon, 0.20687}},
                                                                                {"psi", {k.psi, 2.43013}}}};
  bool pass = true;
  std::string detail;
  for (const auto& [name, values] : checks) {
    const double err = relative_error(values.first, values.second);
    pass = pass && err < 1e-3;
    detail += fmt::format("{}={:.6g} ", name, values.first);
  }
  return {pass, detail + "(relative tolerance 1e-3)"};
}

double& parameter(NvParams& params, const std::string& name) {
  if (name == "omega") return params.omega;
  if (name == "field") return params.field;
  if (name == "inv_t2" || name == "inv_t") return params.inv_t2;
  if (name == "beta") return params.beta;
  if (name == "omega0") return params.omega0;
  return params.omega1;
}

Verdict check_fisher_information() {
  Rng rng = make_stream(0xF15);
  double worst = 0.0;
  std::size_t compared = 0;
  for (NvKind kind : {NvKind::Dc, NvKind::Ac, NvKind::Decoherence, NvKind::Hyperfine}) {
    const NvModel model(kind);
    const auto& names = model.parameter_names();
    int points = 0;
    while (points < 100) {
      NvParams p;
      p.omega = uniform(rng, 0.0, 1.0);
      p.field = uniform(rng, 0.1, 1.0);
      p.inv_t2 = kind == NvKind::Decoherence ? uniform(rng, 0.01, 0.1) : uniform(rng, 0.0, 0.2);
      p.beta = uniform(rng, 1.5, 4.0);
      p.omega0 = uniform(rng, 0.0, 0.5);
      p.omega1 = uniform(rng, 0.5, 1.0);
      const NvControls c{uniform(rng, 0.5, 20.0), uniform(rng, 0.0, kPi)};
      const double prob = model.probability(1, p, c);
      if (prob < 1e-3 || prob > 1.0 - 1e-3) continue;
      const auto fi = model.fisher_information(p, c);
      if (fi.saturated) return {false, "unexpected saturated Fisher information"};
      for (std::size_t j = 0; j < names.size(); ++j) {
        const double h = 1e-4 * std::max(1.0, std::abs(parameter(p, names[j])));
        const auto at = [&](double shift) {
          NvParams q = p;
          parameter(q, names[j]) += shift;
          return model.probability(1, q, c);
        };
        const double dp = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        const double expected = dp * dp / (prob * (1.0 - prob));
        if (expected < 1e-8) continue;
        worst = std::max(worst, relative_error(fi.values[j], expected));
        ++compared;
      }
      ++points;
    }
  }
  const NvModel dc(NvKind::Dc);
  bool exact = true;
  for (double tau : {0.5, 1.0, 2.0, 3.7, 7.0, 13.0}) {
    NvParams p;
    p.omega = 0.31;
    const auto fi = dc.fisher_information(p, {tau, 0.4});
    exact = exact && !fi.saturated && fi.values[0] == tau * tau;
  }
  return {worst < 1e-6 && exact, fmt::format("max relative error {:.2e} over {} components, dc tau^2 exact: {}", worst,
                                             compared, exact ? "yes" : "no")};
}

Verdict check_posterior_oracle() {
  const NvModel model(NvKind::Dc);
  const auto space = std::make_shared<const ParameterSpace>(std::vector<Dimension>{Dimension::continuous("omega", 0.0, 1.0)});
  const std::size_t grid = 100000;
  const std::size_t bins = 100;
  int good = 0;
  double worst = 0.0;
  std::vector<double> density(grid);
  for (int trial = 0; trial < 100; ++trial) {
    Rng truth_rng = make_stream(0x7E57, trial, 1);
    NvParams truth;
    truth.omega = uniform01(truth_rng);
    auto ens = init_from_prior(space, 10000, derive_seed(0x7E57, trial, 2));
    std::fill(density.begin(), density.end(), 1.0);
    for (int t = 0; t < 20; ++t) {
      const NvControls controls{1.0 + 0.5 * t, 0.0};
      const int y = model.sample_outcome(truth, controls, truth_rng);
      ens = bayes_update_with(ens, [&](std::span<const double> point) {
        NvParams params;
        params.omega = point[0];
        return model.probability(y, params, controls);
      });
      for (std::size_t g = 0; g < grid; ++g) {
        NvParams params;
        params.omega = (static_cast<double>(g) + 0.5) / static_cast<double>(grid);
        density[g] *= model.probability(y, params, controls);
      }
    }
    std::vector<double> grid_mass(bins, 0.0);
    std::vector<double> particle_mass(bins, 0.0);
    const double total = std::accumulate(density.begin(), density.end(), 0.0);
    for (std::size_t g = 0; g < grid; ++g) grid_mass[g * bins / grid] += density[g] / total;
    const auto w = ens.weight_values();
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < ens.size(); ++i)
      particle_mass[std::min(bins - 1, static_cast<std::size_t>(ens.particle(i)[0] * bins))] += w[i] / wsum;
    double tv = 0.0;
    for (std::size_t b = 0; b < bins; ++b) tv += 0.5 * std::abs(grid_mass[b] - particle_mass[b]);
    worst = std::max(worst, tv);
    if (tv < 0.01) ++good;
  }
  return {good >= 95, fmt::format("{}/100 trials with total variation < 0.01 (worst {:.2e})", good, worst)};
}

struct MeanAndError {
  double mean = 0.0;
  double stderr_ = 0.0;
};

MeanAndError summarize(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n - 1.0;
  return {mean, std::sqrt(var / n)};
}

Verdict check_gradient_unbiasedness() {
  NvTaskSettings s;
  s.kind = NvKind::Dc;
  s.priors = {{"omega", 0.0, 1.0}};
  s.budget = {BudgetKind::Measurements, 2.0, 2};
  s.loss.mode = LossMode::Cumulative;
  s.particles = 8;
  const NvTask task(s);
  const std::array<double, 2> point{1.2, 0.6};

  const std::size_t batch = 100;
  const std::size_t batches = 1000;
  std::array<std::vector<double>, 2> per_batch;
  AffineAgent agent(1, point[0], point[1]);
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<EpisodeOptions> episodes(batch);
    for (std::size_t k = 0; k < batch; ++k) episodes[k].seed = derive_seed(0x6AD, b, k);
    const auto g = estimate_gradient(task, agent, s.loss, episodes, 1);
    for (int i = 0; i < 2; ++i) per_batch[i].push_back(g.gradient[i]);
  }

  const std::size_t fd_episodes = 400000;
  const double h = 0.05;
  std::vector<EpisodeOptions> fd_set(fd_episodes);
  for (std::size_t k = 0; k < fd_episodes; ++k) fd_set[k].seed = derive_seed(0xFD, k);
  const auto episode_losses = [&](const std::array<double, 2>& at) {
    AffineAgent probe(1, at[0], at[1]);
    const auto records = run_batch(task, {&probe, {}}, fd_set, 1);
    std::vector<double> out(records.size());
    for (std::size_t k = 0; k < records.size(); ++k)
      out[k] = batch_loss(std::span<const EpisodeRecord>(&records[k], 1), s.loss, task.max_steps());
    return out;
  };

  bool pass = true;
  std::string detail;
  for (int i = 0; i < 2; ++i) {
    auto plus = point;
    auto minus = point;
    plus[i] += h;
    minus[i] -= h;
    const auto up = episode_losses(plus);
    const auto down = episode_losses(minus);
    std::vector<double> slope(up.size());
    for (std::size_t k = 0; k < up.size(); ++k) slope[k] = (up[k] - down[k]) / (2 * h);
    const auto fd = summarize(slope);
    const auto est = summarize(per_batch[i]);
    const double se = std::hypot(fd.stderr_, est.stderr_);
    const double z = std::abs(est.mean - fd.mean) / se;
    pass = pass && z <= 3.0;
    detail += fmt::format("d{}: estimator {:.5f} +- {:.5f}, finite difference {:.5f} +- {:.5f} ({:.2f} SE); ", i,
                          est.mean, est.stderr_, fd.mean, fd.stderr_, z);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Verdict check_discrimination_bounds() {
  const double h = helstrom_error(0.5);
  const bool value_ok = std::abs(h - 0.102470) <= 1e-6;

  Rng rng = make_stream(0x9A);
  double worst_pgm = 0.0;
  const std::vector<double> priors{0.5, 0.5};
  for (int i = 0; i < 50; ++i) {
    const double alpha = uniform(rng, 1e-6, 1.5);
    const std::vector<std::vector<cplx>> states{{cplx(alpha, 0.0)}, {cplx(-alpha, 0.0)}};
    worst_pgm = std::max(worst_pgm, std::abs(pgm_error(states, priors) - helstrom_error(alpha)));
  }
  const bool pgm_ok = worst_pgm <= 1e-9;

  bool monotone = true;
  double previous = helstrom_error(0.5, 1);
  for (std::size_t n = 2; n <= 1000; ++n) {
    const double value = helstrom_error(0.5, n);
    monotone = monotone && value <= previous;
    previous = value;
  }
  const double gap = helstrom_error(0.5, 1000) - h;
  const bool converged = std::abs(gap) <= 1e-4;
  return {value_ok && pgm_ok && monotone && converged,
          fmt::format("helstrom(0.5) = {:.7f}; max |pgm - helstrom| {:.1e}; finite-n nonincreasing: {}; "
                      "gap at n=1000 {:.3e} (needs <= 1e-4)",
                      h, worst_pgm, monotone ? "yes" : "no", gap)};
}

Verdict check_quarter_states() {
  const cplx i(0.0, 1.0);
  const std::array<std::array<cplx, 4>, 4> inputs{{{1.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 0.0},
                                                   {1.0, 1.0, 1.0, 1.0}}};
  const std::array<std::array<cplx, 4>, 4> listed{{{0.5, 0.5 * i, 0.5 * i, -0.5},
                                                   {0.5 * (1.0 + i), 0.5 * (-1.0 + i), 0.5 * (1.0 + i),
                                                    0.5 * (-1.0 + i)},
                                                   {0.5 + i, 0.5 * i, 0.5 * i, -0.5 + i},
                                                   {i, i, i, i}}};
  const std::array<std::array<double, 3>, 4> phase_sets{{{0.0, 0.0, 0.0}, {1.0, 0.0, 1.0}, {0.3, 1.7, -2.2},
                                                         {2.9, 0.4, 1.1}}};
  double worst = 0.0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    for (const auto& phases : phase_sets) {
      const auto reg = encode_multiphase({{inputs[s].begin(), inputs[s].end()}}, phases);
      for (std::size_t m = 0; m < 4; ++m) {
        const cplx expected = listed[s][m] * (m < 3 ? std::polar(1.0, -phases[m]) : cplx(1.0));
        worst = std::max({worst, std::abs(reg.amplitudes[m].real() - expected.real()),
                          std::abs(reg.amplitudes[m].imag() - expected.imag())});
      }
    }
  }
  return {worst <= 1e-12, fmt::format("4 inputs x 4 phase settings, max entry deviation {:.1e}", worst)};
}

Verdict check_multiphase_model() {
  const auto encoded = encode_multiphase({{1.0, 1.0, 1.0, 0.0}}, {0.0, 1.0, 1.0});
  const std::array<double, 3> controls{0.4, 2.2, 5.0};
  const auto out = multiphase_output(encoded, controls);
  double worst = 0.0;
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; b <= 4; ++b)
      for (int c = 0; c <= 4; ++c)
        for (int d = 0; d <= 4; ++d) {
          const std::array<int, 4> counts{a, b, c, d};
          double brute = 1.0;
          for (int m = 0; m < 4; ++m) {
            const double mean = std::norm(out[m]);
            double term = std::exp(-mean);
            for (int k = 1; k <= counts[m]; ++k) term *= mean / k;
            brute *= term;
          }
          worst = std::max(worst, relative_error(multiphase_likelihood(encoded, controls, counts), brute));
        }

  Rng rng = make_stream(0x8);
  const auto sampled = encode_multiphase({{1.0, cplx(0.5, 0.5), 0.7, 0.0}}, {1.0, 0.0, 1.0});
  double expected = 0.0;
  for (const auto& a : sampled.amplitudes) expected += std::norm(a);
  double photons = 0.0;
  const int samples = 100000;
  for (int k = 0; k < samples; ++k)
    for (int count : multiphase_measure(sampled, {1.0, 0.5, 3.0}, rng).counts) photons += count;
  const double mc = photons / samples;
  const bool pass = worst <= 1e-12 && relative_error(mc, expected) <= 0.01;
  return {pass, fmt::format("max relative deviation from Poisson enumeration {:.1e}; Monte Carlo photons {:.4f} vs {:.4f}",
                            worst, mc, expected)};
}

Verdict check_ramp_bound() {
  bool monotone = true;
  bool floors = true;
  double previous = INFINITY;
  for (std::size_t m = 16; m <= 1024; ++m) {
    const auto d = analytic_ramp(m);
    monotone = monotone && d.bound <= previous;
    floors = floors && d.bit_floor == std::exp2(-2.0 * (static_cast<double>(m) + 1.0)) / 3.0;
    previous = d.bound;
  }
  const double k_star = analytic_ramp(100).k_star;
  const bool k_ok = std::abs(k_star - 8.551) <= 5e-4;
  return {monotone && floors && k_ok, fmt::format("monotone over M=16..1024: {}; K*(100) = {:.4f}; bit floor emitted: {}",
                                                  monotone ? "yes" : "no", k_star, floors ? "yes" : "no")};
}

constexpr const char* kTrainingConfig = R"(seed = 1
workers = 1

[model]
name = "nv_dc"

[model.prior]
omega = [0.0, 1.0]

[agent]
kind = "mlp"

[budget]
kind = "measurements"
amount = 20

[loss]
mode = "log"

[training]
batch_size = 128
steps = 2000
learning_rate = 0.0001
pretrain_steps = 500

[particles]
count = 480

[eval]
episodes = 1000
)";

RunConfig training_config(std::size_t steps) {
  auto c = parse_config(kTrainingConfig, "desk-scale training");
  c.training.steps = steps;
  return c;
}

std::unique_ptr<Agent> trained_agent(const RunConfig& c, const Task& task, const std::filesystem::path& out) {
  Rng init_rng = make_stream(c.seed, 0xA6E7);
  auto agent = task.make_agent(c.agent_kind, init_rng);
  task.pretrain(*agent, c.training.pretrain_steps, derive_seed(c.seed, 0x97E7));
  TrainerOptions opts;
  opts.batch_size = c.training.batch_size;
  opts.steps = c.training.steps;
  opts.learning_rate = c.training.learning_rate;
  opts.decay_steps = c.training.decay_steps;
  opts.seed = c.seed;
  opts.config_hash = config_hash(c);
  opts.out_dir = out;
  const auto result = train(task, *agent, c.loss, opts);
  if (result.halted) throw std::runtime_error("training halted: " + result.halt_reason);
  return agent;
}

Verdict check_desk_training(const std::filesystem::path& scratch) {
  const auto c = training_config(2000);
  const auto task = make_task(c);
  const auto agent = trained_agent(c, *task, scratch / "training");
  std::vector<double> grid(20);
  std::iota(grid.begin(), grid.end(), 1.0);
  const std::uint64_t eval_seed = 0xE7A1;
  const auto crb = crb_curve("nv_dc", "t2_inf", Regime::Measurements, grid);

  const auto final_mse = [&](const std::vector<EvalRow>& rows) { return rows.back().precision_mean; };
  bool above = true;
  std::string detail;
  double agent_mse = 0.0, random_mse = 0.0, sigma_mse = 0.0;
  for (const std::string name : {"mlp", "random", "sigma", "pgh", "ramp"}) {
    const Policy policy = name == "mlp" ? Policy{agent.get(), {}} : Policy{nullptr, name};
    const auto rows = task->evaluate(policy, grid, 1000, eval_seed, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) above = above && rows[i].precision_mean > crb.bound[i];
    const double mse = final_mse(rows);
    if (name == "mlp") agent_mse = mse;
    if (name == "random") random_mse = mse;
    if (name == "sigma") sigma_mse = mse;
    detail += fmt::format("{} {:.3e}, ", name, mse);
  }
  const bool pass = agent_mse < random_mse && agent_mse <= 1.15 * sigma_mse && above;
  return {pass, fmt::format("final MSE at M=20: {}agent/random {:.2f}, agent/sigma {:.2f}; above bound: {}", detail,
                            agent_mse / random_mse, agent_mse / sigma_mse, above ? "yes" : "no")};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict check_determinism(const std::filesystem::path& scratch) {
  const auto c = training_config(50);
  const auto task = make_task(c);
  trained_agent(c, *task, scratch / "first");
  trained_agent(c, *task, scratch / "second");
  const auto first = read_file(scratch / "first" / "metrics.csv");
  const auto second = read_file(scratch / "second" / "metrics.csv");
  const auto rows = std::count(first.begin(), first.end(), '\n');
  const bool pass = !first.empty() && first == second && rows == 51;
  return {pass, fmt::format("two 50-step runs, metrics.csv {} ({} bytes, {} lines)",
                            first == second ? "bit-identical" : "different", first.size(), rows)};
}

}  // namespace
}  // namespace qmetro

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks: one line per criterion"};
  std::vector<int> selected;
  std::string scratch = (std::filesystem::temp_directory_path() / "qmetro_acceptance").string();
  app.add_option("criteria", selected, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--scratch", scratch, "directory for training output");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    selected.resize(10);
    std::iota(selected.begin(), selected.end(), 1);
  }
  if (std::getenv("QMETRO_LOG") == nullptr) setenv("QMETRO_LOG", "warn", 1);
  qmetro::configure_logging();

  const std::filesystem::path root(scratch);
  struct Criterion {
    const char* name;
    double limit;
    std::function<qmetro::Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {"bound constants", 1.0, qmetro::check_constants},
      {"Fisher information", 5.0, qmetro::check_fisher_information},
      {"posterior oracle", 60.0, qmetro::check_posterior_oracle},
      {"gradient unbiasedness", 300.0, qmetro::check_gradient_unbiasedness},
      {"discrimination bounds", 10.0, qmetro::check_discrimination_bounds},
      {"quarter encoding", 1.0, qmetro::check_quarter_states},
      {"desk-scale training", 1800.0, [&] { return qmetro::check_desk_training(root / "c7"); }},
      {"multiphase model", 60.0, qmetro::check_multiphase_model},
      {"ramp bound", 1.0, qmetro::check_ramp_bound},
      {"determinism", 120.0, [&] { return qmetro::check_determinism(root / "c10"); }},
  };

  int failures = 0;
  for (int n : std::set<int>(selected.begin(), selected.end())) {
    const auto& [name, limit, check] = criteria[static_cast<std::size_t>(n - 1)];
    const auto start = std::chrono::steady_clock::now();
    qmetro::Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > limit) v = {false, fmt::format("{}; over the {:.0f} s limit", v.detail, limit)};
    if (!v.pass) ++failures;
    fmt::print("criterion {:>2} {} [{}] {} ({:.1f} s)\n", n, v.pass ? "PASS" : "FAIL", name, v.detail, seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
