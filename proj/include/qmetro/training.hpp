#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmetro/agents.hpp"
#include "qmetro/autodiff.hpp"

namespace qmetro {

enum class BudgetKind { Measurements, TotalTime, Photons };
std::string to_string(BudgetKind kind);
BudgetKind parse_budget_kind(const std::string& name);

struct ResourceBudget {
  BudgetKind kind = BudgetKind::Measurements;
  double amount = 0.0;        // M_max, T_max or the photon allowance
  std::size_t max_steps = 0;  // hard cap on measurements; equals amount for measurement budgets

  // A measurement that overshoots still executes; the episode stops once the tally reaches the amount.
  bool exhausted(double tally, std::size_t steps) const;
};

enum class LossMode { Cumulative, Log, Terminal, Dolinar, Classification };
std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

enum class EtaForm { Linear, Variance };

struct LossSpec {
  LossMode mode = LossMode::Log;
  EtaForm eta_form = EtaForm::Linear;
  int dolinar_variant = 0;
};

inline constexpr double kLossFloor = 1e-12;

// eta = min(sum_j G_jj w_j / 12, 1 / T) with w_j = b_j - a_j (linear form) or its square.
ad::Real eta_normalizer(std::span<const double> weights, std::span<const double> widths, EtaForm form,
                        const ad::Real& elapsed_time);

struct EpisodeRecord {
  std::vector<ad::Real> step_loss;          // per-step training loss (already divided by eta when cumulative)
  std::vector<ad::Real> score;              // log-probabilities of every stochastic draw that depends on the agent
  std::vector<std::size_t> score_step;      // first loss index the draw can influence
  std::vector<double> precision;            // per-step evaluation error
  std::vector<double> resource;             // resource tally after each step
  std::vector<std::vector<double>> controls;
  std::vector<std::vector<double>> outcomes;
  double prior_precision = 0.0;             // error before the first measurement
  double key = 0.0;                         // task-specific evaluation key (true amplitude, photon number)
  double ess_min = 1.0;                     // smallest ESS / N seen
  bool aborted = false;
  std::string abort_reason;

  std::size_t steps() const { return precision.size(); }
};

struct Policy {
  const Agent* agent = nullptr;
  std::string baseline;  // used when agent is null

  std::string name() const { return agent != nullptr ? agent->kind() : baseline; }
};

struct EpisodeOptions {
  std::uint64_t seed = 0;
  bool differentiable = false;
  std::optional<double> condition;  // fixes a task-specific true value for evaluation sweeps
};

struct EvalRow {
  double resource = 0.0;
  double precision_mean = 0.0;
  double precision_stderr = 0.0;
  std::string strategy;
  std::size_t samples = 0;
};

struct PretrainSample {
  std::vector<double> features;
  std::vector<double> target;
};

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string name() const = 0;
  virtual const ResourceBudget& budget() const = 0;
  virtual std::vector<std::string> baselines() const = 0;
  virtual std::size_t agent_inputs() const = 0;
  virtual std::size_t agent_outputs() const = 0;
  // Agent kinds the task can drive, the first one being the default.
  virtual std::vector<std::string> agent_kinds() const = 0;
  virtual std::unique_ptr<Agent> make_agent(const std::string& kind, Rng& rng) const;

  virtual EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const = 0;

  // Grid used when the caller does not give one.
  virtual std::vector<double> default_grid() const;
  // Mean and standard error of the precision at each grid resource.
  virtual std::vector<EvalRow> evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                        std::uint64_t seed, std::size_t workers) const;

  // Supervised warm start; the default does nothing.
  virtual void pretrain(Agent& agent, std::size_t steps, std::uint64_t seed) const;

  std::size_t max_steps() const { return budget().max_steps; }
};

// Precision at resource r: the latest estimate whose tally does not exceed r.
double precision_at(const EpisodeRecord& record, double resource);

std::vector<EpisodeRecord> run_batch(const Task& task, const Policy& policy, std::span<const EpisodeOptions> options,
                                     std::size_t workers);

// Runs `fn(i)` for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

// ---- losses over a batch ----

// Step losses padded with their final value up to `length`.
std::vector<double> padded_values(const EpisodeRecord& record, std::size_t length);

double batch_loss(std::span<const EpisodeRecord> batch, const LossSpec& spec, std::size_t max_steps);
double cumulative_loss(std::span<const std::vector<double>> step_losses, std::size_t max_steps);
double log_loss(std::span<const std::vector<double>> step_losses, std::size_t max_steps, bool* clamped = nullptr);

struct DolinarOutcome {
  double p_plus = 0.5;
  int sign = 1;
  int photons = 0;
};
double dolinar_loss(const DolinarOutcome& outcome, int variant, double helstrom);
ad::Real dolinar_loss(const ad::Real& p_plus, int sign, int photons, int variant, double helstrom);
// 1 - delta(argmax w, truth), lowest index wins ties.
double classification_loss(std::span<const double> weights, std::size_t truth);

// ---- gradient estimation ----

struct BatchGradient {
  double loss = 0.0;
  std::vector<double> gradient;
  double ess_min = 1.0;
  std::size_t aborted = 0;
  bool finite = true;
  bool loss_clamped = false;
};

// Pathwise gradient of the batch loss plus score-function terms with leave-one-out baselines.
BatchGradient estimate_gradient(const Task& task, const Agent& agent, const LossSpec& spec,
                                std::span<const EpisodeOptions> episodes, std::size_t workers);

// ---- optimisation ----

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  void step(std::span<double> params, std::span<const double> grad, double lr);
};

// alpha_t = alpha_0 / sqrt(1 + t / t0)
double learning_rate(double initial, double decay_steps, std::uint64_t step);

struct TrainerOptions {
  std::size_t batch_size = 64;
  std::size_t steps = 100;
  double learning_rate = 1e-3;
  double decay_steps = 100.0;
  std::size_t workers = 1;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::optional<std::filesystem::path> out_dir;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double ess_min = 1.0;
  std::size_t aborted = 0;
  bool rejected = false;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepMetrics& m);

struct TrainingResult {
  std::vector<StepMetrics> metrics;
  bool halted = false;
  std::string halt_reason;
};

TrainingResult train(const Task& task, Agent& agent, const LossSpec& spec, const TrainerOptions& options,
                     const std::function<void(const StepMetrics&)>& on_step = {});

// Least-squares fit of the agent outputs to the samples with Adam.
double fit_supervised(Agent& agent, std::span<const PretrainSample> samples, std::size_t steps, double lr,
                      std::uint64_t seed);

void write_eval_header(std::ostream& out);
void write_eval_rows(std::ostream& out, std::span<const EvalRow> rows);

}  // namespace qmetro
