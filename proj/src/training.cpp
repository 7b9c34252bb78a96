#include "qmetro/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace qmetro {

std::string to_string(BudgetKind kind) {
  switch (kind) {
    case BudgetKind::Measurements: return "measurements";
    case BudgetKind::TotalTime: return "time";
    case BudgetKind::Photons: return "photons";
  }
  return "measurements";
}

BudgetKind parse_budget_kind(const std::string& name) {
  if (name == "measurements") return BudgetKind::Measurements;
  if (name == "time") return BudgetKind::TotalTime;
  if (name == "photons") return BudgetKind::Photons;
  throw std::invalid_argument("unknown budget kind '" + name + "' (expected measurements, time or photons)");
}

bool ResourceBudget::exhausted(double tally, std::size_t steps) const {
  if (steps >= max_steps) return true;
  if (kind == BudgetKind::Measurements) return static_cast<double>(steps) >= amount;
  return tally >= amount;
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::Cumulative: return "cumulative";
    case LossMode::Log: return "log";
    case LossMode::Terminal: return "terminal";
    case LossMode::Dolinar: return "dolinar";
    case LossMode::Classification: return "classification";
  }
  return "log";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "cumulative") return LossMode::Cumulative;
  if (name == "log") return LossMode::Log;
  if (name == "terminal") return LossMode::Terminal;
  if (name == "dolinar") return LossMode::Dolinar;
  if (name == "classification") return LossMode::Classification;
  throw std::invalid_argument("unknown loss mode '" + name + "'");
}

ad::Real eta_normalizer(std::span<const double> weights, std::span<const double> widths, EtaForm form,
                        const ad::Real& elapsed_time) {
  double prior_term = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j)
    prior_term += weights[j] * (form == EtaForm::Linear ? widths[j] : widths[j] * widths[j]) / 12.0;
  if (!(elapsed_time.value() > 0.0)) return ad::Real(prior_term);
  const ad::Real inverse_time = 1.0 / elapsed_time;
  return inverse_time.value() < prior_term ? inverse_time : ad::Real(prior_term);
}

double precision_at(const EpisodeRecord& record, double resource) {
  double value = record.prior_precision;
  for (std::size_t t = 0; t < record.precision.size(); ++t) {
    if (record.resource[t] > resource * (1.0 + 1e-12) + 1e-12) break;
    value = record.precision[t];
  }
  return value;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<EpisodeRecord> run_batch(const Task& task, const Policy& policy, std::span<const EpisodeOptions> options,
                                     std::size_t workers) {
  std::vector<EpisodeRecord> out(options.size());
  parallel_for(options.size(), workers, [&](std::size_t i) { out[i] = task.run_episode(policy, options[i]); });
  return out;
}

std::unique_ptr<Agent> Task::make_agent(const std::string& kind, Rng& rng) const {
  if (kind == "mlp") return std::make_unique<MlpAgent>(MlpAgent::default_widths(agent_inputs(), agent_outputs()), rng);
  if (kind == "table") return std::make_unique<ControlTable>(std::max<std::size_t>(max_steps(), 1), agent_outputs(), rng, -1.0, 1.0);
  throw AgentError(fmt::format("task {} cannot build a '{}' agent", name(), kind));
}

std::vector<double> Task::default_grid() const {
  std::vector<double> grid;
  const auto& b = budget();
  if (b.kind == BudgetKind::Measurements) {
    for (std::size_t m = 1; m <= b.max_steps; ++m) grid.push_back(static_cast<double>(m));
  } else {
    for (int k = 1; k <= 20; ++k) grid.push_back(b.amount * k / 20.0);
  }
  return grid;
}

std::vector<EvalRow> Task::evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                    std::uint64_t seed, std::size_t workers) const {
  std::vector<EpisodeOptions> options(episodes);
  for (std::size_t i = 0; i < episodes; ++i) options[i].seed = derive_seed(seed, 0xE7A1, i);
  const auto records = run_batch(*this, policy, options, workers);
  std::vector<EvalRow> rows;
  for (double r : grid) {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& rec : records) {
      if (rec.aborted) continue;
      const double v = precision_at(rec, r);
      sum += v;
      sum_sq += v * v;
      ++n;
    }
    EvalRow row{r, 0.0, 0.0, policy.name(), n};
    if (n > 0) {
      row.precision_mean = sum / n;
      if (n > 1) {
        const double var = std::max(0.0, (sum_sq - n * row.precision_mean * row.precision_mean) / (n - 1));
        row.precision_stderr = std::sqrt(var / n);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void Task::pretrain(Agent&, std::size_t, std::uint64_t) const {}

std::vector<double> padded_values(const EpisodeRecord& record, std::size_t length) {
  std::vector<double> out(length, 0.0);
  const std::size_t n = record.step_loss.size();
  for (std::size_t t = 0; t < length; ++t) {
    if (n == 0) break;
    out[t] = record.step_loss[std::min(t, n - 1)].value();
  }
  return out;
}

double cumulative_loss(std::span<const std::vector<double>> step_losses, std::size_t max_steps) {
  if (step_losses.empty() || max_steps == 0) return 0.0;
  double total = 0.0;
  for (const auto& episode : step_losses)
    for (std::size_t t = 0; t < max_steps && t < episode.size(); ++t) total += episode[t];
  return total / (static_cast<double>(max_steps) * static_cast<double>(step_losses.size()));
}

double log_loss(std::span<const std::vector<double>> step_losses, std::size_t max_steps, bool* clamped) {
  if (step_losses.empty() || max_steps == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < max_steps; ++t) {
    double mean = 0.0;
    for (const auto& episode : step_losses) mean += t < episode.size() ? episode[t] : 0.0;
    mean /= static_cast<double>(step_losses.size());
    if (mean < kLossFloor) {
      mean = kLossFloor;
      if (clamped != nullptr) *clamped = true;
    }
    total += std::log(mean);
  }
  return total / static_cast<double>(max_steps);
}

namespace {

std::vector<std::vector<double>> padded_batch(std::span<const EpisodeRecord> batch, std::size_t length) {
  std::vector<std::vector<double>> out;
  for (const auto& rec : batch)
    if (!rec.aborted) out.push_back(padded_values(rec, length));
  return out;
}

}  // namespace

double batch_loss(std::span<const EpisodeRecord> batch, const LossSpec& spec, std::size_t max_steps) {
  const auto values = padded_batch(batch, max_steps);
  if (values.empty() || max_steps == 0) return 0.0;
  if (spec.mode == LossMode::Cumulative) return cumulative_loss(values, max_steps);
  if (spec.mode == LossMode::Log) return log_loss(values, max_steps);
  double total = 0.0;
  for (const auto& v : values) total += v.back();
  return total / static_cast<double>(values.size());
}

double dolinar_loss(const DolinarOutcome& o, int variant, double helstrom) {
  return dolinar_loss(ad::Real(o.p_plus), o.sign, o.photons, variant, helstrom).value();
}

ad::Real dolinar_loss(const ad::Real& p_plus, int sign, int photons, int variant, double helstrom) {
  if (variant < 0 || variant > 8) throw std::invalid_argument("Dolinar loss variant must be in 0..8");
  const int guess_bayes = p_plus.value() > 0.5 ? 1 : -1;
  const int guess_parity = photons % 2 == 0 ? 1 : -1;
  ad::Real raw;
  switch (variant % 3) {
    case 0: raw = ad::Real(guess_bayes == sign ? 0.0 : 1.0); break;
    case 1: raw = sign > 0 ? 1.0 - p_plus : p_plus; break;
    default: raw = ad::Real(guess_parity == sign ? 0.0 : 1.0); break;
  }
  if (variant < 3) return raw;
  if (variant < 6) return raw - helstrom;
  return raw / helstrom;
}

double classification_loss(std::span<const double> weights, std::size_t truth) {
  if (weights.empty()) throw std::invalid_argument("classification needs at least one class");
  const auto best = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
  return best == truth ? 0.0 : 1.0;
}

BatchGradient estimate_gradient(const Task& task, const Agent& agent, const LossSpec& spec,
                                std::span<const EpisodeOptions> episodes, std::size_t workers) {
  const std::size_t batch = episodes.size();
  const std::size_t length = task.max_steps();
  BatchGradient out;
  out.gradient.assign(agent.parameter_count(), 0.0);
  if (batch == 0) return out;

  std::vector<ad::Tape> tapes(batch);
  std::vector<EpisodeRecord> records(batch);
  const Policy policy{&agent, {}};
  parallel_for(batch, workers, [&](std::size_t k) {
    ad::ScopedTape scope(&tapes[k]);
    auto opts = episodes[k];
    opts.differentiable = true;
    records[k] = task.run_episode(policy, opts);
  });

  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < batch; ++k) {
    out.ess_min = std::min(out.ess_min, records[k].ess_min);
    if (records[k].aborted) {
      ++out.aborted;
      spdlog::debug("episode {} aborted: {}", k, records[k].abort_reason);
    } else {
      live.push_back(k);
    }
  }
  if (live.empty()) {
    out.finite = false;
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  if (length == 0) return out;

  const auto n = static_cast<double>(live.size());
  std::vector<std::vector<double>> values(batch);
  for (std::size_t k : live) values[k] = padded_values(records[k], length);
  std::vector<double> column_sum(length, 0.0);
  for (std::size_t k : live)
    for (std::size_t t = 0; t < length; ++t) column_sum[t] += values[k][t];

  std::vector<double> coeff(length, 0.0);
  const auto m = static_cast<double>(length);
  if (spec.mode == LossMode::Cumulative) {
    std::fill(coeff.begin(), coeff.end(), 1.0 / (m * n));
    out.loss = std::accumulate(column_sum.begin(), column_sum.end(), 0.0) / (m * n);
  } else if (spec.mode == LossMode::Log) {
    out.loss = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      double mean = column_sum[t] / n;
      if (mean < kLossFloor) {
        mean = kLossFloor;
        out.loss_clamped = true;
      }
      coeff[t] = 1.0 / (m * n * mean);
      out.loss += std::log(mean) / m;
    }
  } else {
    coeff[length - 1] = 1.0 / n;
    out.loss = column_sum[length - 1] / n;
  }

  std::vector<std::vector<double>> grads(batch);
  parallel_for(live.size(), workers, [&](std::size_t idx) {
    const std::size_t k = live[idx];
    const auto& rec = records[k];
    auto& tape = tapes[k];
    const std::size_t steps = rec.step_loss.size();
    if (steps > 0) {
      for (std::size_t t = 0; t < length; ++t)
        if (coeff[t] != 0.0) tape.seed(rec.step_loss[std::min(t, steps - 1)], coeff[t]);
    }
    // advantage_t = c_t (loss_t - leave-one-out mean), summed from the draw onwards
    std::vector<double> tail(length + 1, 0.0);
    for (std::size_t t = length; t-- > 0;) {
      const double baseline = n > 1 ? (column_sum[t] - values[k][t]) / (n - 1) : 0.0;
      tail[t] = tail[t + 1] + coeff[t] * (values[k][t] - baseline);
    }
    for (std::size_t j = 0; j < rec.score.size(); ++j) {
      const std::size_t first = std::min(rec.score_step[j], length);
      if (tail[first] != 0.0) tape.seed(rec.score[j], tail[first]);
    }
    grads[k].assign(agent.parameter_count(), 0.0);
    tape.backward(grads[k]);
    tape.clear();
  });
  for (std::size_t k : live)
    for (std::size_t i = 0; i < out.gradient.size(); ++i) out.gradient[i] += grads[k][i];
  for (double g : out.gradient) {
    if (!std::isfinite(g)) {
      out.finite = false;
      break;
    }
  }
  if (!std::isfinite(out.loss)) out.finite = false;
  return out;
}

void AdamState::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
    t = 0;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
  }
}

double learning_rate(double initial, double decay_steps, std::uint64_t step) {
  if (!(decay_steps > 0.0)) return initial;
  return initial / std::sqrt(1.0 + static_cast<double>(step) / decay_steps);
}

void write_metrics_header(std::ostream& out) { out << "step,loss,grad_norm,lr,ess_min,aborted_episodes\n"; }

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
  out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", m.step, m.loss, m.grad_norm, m.lr, m.ess_min,
                     m.aborted);
}

TrainingResult train(const Task& task, Agent& agent, const LossSpec& spec, const TrainerOptions& opt,
                     const std::function<void(const StepMetrics&)>& on_step) {
  TrainingResult result;
  std::ofstream metrics;
  std::filesystem::path checkpoint_path;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir / "checkpoints");
    metrics.open(*opt.out_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics.csv in " + opt.out_dir->string());
    write_metrics_header(metrics);
    checkpoint_path = *opt.out_dir / "checkpoint.bin";
  }
  AdamState adam;
  std::uint64_t last_good = 0;
  for (std::size_t s = 0; s < opt.steps; ++s) {
    std::vector<EpisodeOptions> episodes(opt.batch_size);
    for (std::size_t k = 0; k < opt.batch_size; ++k) episodes[k].seed = derive_seed(opt.seed, 0x7A11, s, k);
    const auto g = estimate_gradient(task, agent, spec, episodes, opt.workers);

    StepMetrics m;
    m.step = s;
    m.loss = g.loss;
    m.lr = learning_rate(opt.learning_rate, opt.decay_steps, s);
    m.ess_min = g.ess_min;
    m.aborted = g.aborted;
    double norm = 0.0;
    for (double x : g.gradient) norm += x * x;
    m.grad_norm = std::sqrt(norm);

    if (std::isnan(g.loss)) {
      result.halted = true;
      result.halt_reason = fmt::format("loss is NaN at step {}; keeping parameters from step {}", s, last_good);
      spdlog::error(result.halt_reason);
      m.rejected = true;
      result.metrics.push_back(m);
      if (metrics) write_metrics_row(metrics, m);
      break;
    }
    if (!g.finite) {
      m.rejected = true;
      spdlog::warn("step {}: non-finite gradient, update skipped", s);
    } else {
      adam.step(agent.parameters(), g.gradient, m.lr);
      last_good = s + 1;
    }
    if (g.loss_clamped) spdlog::debug("step {}: batch-mean loss clamped at {}", s, kLossFloor);
    result.metrics.push_back(m);
    if (metrics) {
      write_metrics_row(metrics, m);
      metrics.flush();
    }
    if (on_step) on_step(m);
    spdlog::info("step {} loss {:.6g} |g| {:.3g} lr {:.3g} ess {:.3f} aborted {}", s, m.loss, m.grad_norm, m.lr,
                 m.ess_min, m.aborted);
    if (opt.out_dir && opt.checkpoint_every > 0 && (s + 1) % opt.checkpoint_every == 0)
      save_checkpoint(*opt.out_dir / "checkpoints" / fmt::format("step_{:06d}.bin", s + 1), agent, opt.config_hash,
                      s + 1);
  }
  if (opt.out_dir) save_checkpoint(checkpoint_path, agent, opt.config_hash, last_good);
  return result;
}

double fit_supervised(Agent& agent, std::span<const PretrainSample> samples, std::size_t steps, double lr,
                      std::uint64_t seed) {
  if (samples.empty() || steps == 0) return 0.0;
  Rng rng(seed);
  AdamState adam;
  const std::size_t batch = std::min<std::size_t>(64, samples.size());
  std::vector<double> grad(agent.parameter_count());
  double last = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& sample = samples[static_cast<std::size_t>(uniform01(rng) * samples.size())];
      ad::Tape tape;
      ad::ScopedTape scope(&tape);
      const std::vector<ad::Real> features(sample.features.begin(), sample.features.end());
      const auto out = agent.forward({features, 0, 0});
      for (std::size_t j = 0; j < sample.target.size() && j < out.size(); ++j) {
        const ad::Real diff = out[j] - sample.target[j];
        loss += diff.value() * diff.value() / batch;
        tape.seed(diff, 2.0 * diff.value() / batch);
      }
      tape.backward(grad);
    }
    adam.step(agent.parameters(), grad, lr);
    last = loss;
  }
  return last;
}

void write_eval_header(std::ostream& out) { out << "resource,precision_mean,precision_stderr,strategy\n"; }

void write_eval_rows(std::ostream& out, std::span<const EvalRow> rows) {
  for (const auto& r : rows)
    out << fmt::format("{:.10g},{:.10g},{:.10g},{}\n", r.resource, r.precision_mean, r.precision_stderr, r.strategy);
}

}  // namespace qmetro
