#pragma once

#include <array>
#include <complex>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qmetro/nv_models.hpp"
#include "qmetro/particle_filter.hpp"
#include "qmetro/photonic.hpp"
#include "qmetro/training.hpp"

namespace qmetro {

struct PriorInterval {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
};

struct NvTaskSettings {
  NvKind kind = NvKind::Dc;
  NvModelOptions model;
  std::vector<PriorInterval> priors;      // estimated parameters
  std::map<std::string, double> fixed;    // known parameters; missing ones default to 0 (beta to 1)
  std::map<std::string, double> weights;  // diagonal of G; empty means weight 1 on the first estimated parameter
  ResourceBudget budget;
  LossSpec loss;
  std::size_t particles = 480;
  PfOptions pf;
  double prefactor = 0.0;  // 0 selects the default table value
  double sigma_cap = kSigmaCap;
  bool inverse_time_literal = false;
  std::string agent_input = "posterior";  // or "step_resource" for the static network on (R~, t~)
};

class NvTask final : public Task {
 public:
  explicit NvTask(NvTaskSettings settings);

  std::string name() const override;
  const ResourceBudget& budget() const override { return settings_.budget; }
  std::vector<std::string> baselines() const override;
  std::size_t agent_inputs() const override;
  std::size_t agent_outputs() const override;
  std::vector<std::string> agent_kinds() const override { return {"mlp", "table", "affine"}; }
  std::unique_ptr<Agent> make_agent(const std::string& kind, Rng& rng) const override;
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override;
  void pretrain(Agent& agent, std::size_t steps, std::uint64_t seed) const override;

  const NvTaskSettings& settings() const { return settings_; }
  const NvModel& model() const { return model_; }
  const std::shared_ptr<const ParameterSpace>& space() const { return space_; }
  double prefactor() const { return prefactor_; }
  NvParams to_params(std::span<const double> point) const;
  // Training-free reference controls: tau grows linearly from 1 to h over the episode.
  double ramp_tau(std::size_t step) const;

 private:
  NvTaskSettings settings_;
  NvModel model_;
  std::shared_ptr<const ParameterSpace> space_;
  std::vector<double> weights_;  // per space dimension
  std::vector<double> widths_;
  std::vector<std::size_t> targets_;
  double prefactor_ = 1.0;
};

struct DolinarSettings {
  std::size_t references = 4;
  double alpha_lower = 0.1;
  double alpha_upper = 1.5;
  std::size_t particles = 512;
  PfOptions pf;
  int loss_variant = 6;
};

class DolinarTask final : public Task {
 public:
  explicit DolinarTask(DolinarSettings settings);

  std::string name() const override { return "dolinar"; }
  const ResourceBudget& budget() const override { return budget_; }
  std::vector<std::string> baselines() const override { return {"balanced", "random"}; }
  std::size_t agent_inputs() const override { return 9; }
  std::size_t agent_outputs() const override { return 1; }
  std::vector<std::string> agent_kinds() const override { return {"mlp", "table"}; }
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override;
  std::vector<double> default_grid() const override;
  // One row per true amplitude in the grid.
  std::vector<EvalRow> evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                std::uint64_t seed, std::size_t workers) const override;

 private:
  DolinarSettings settings_;
  ResourceBudget budget_;
  std::shared_ptr<const ParameterSpace> space_;
};

struct QmlSettings {
  double half_width = 0.75;
  std::size_t copies = 4;
  std::size_t particles = 512;
  PfOptions pf;
};

class QmlTask final : public Task {
 public:
  explicit QmlTask(QmlSettings settings);

  std::string name() const override { return "qml3"; }
  const ResourceBudget& budget() const override { return budget_; }
  std::vector<std::string> baselines() const override { return {"nonoptimized", "random"}; }
  std::size_t agent_inputs() const override { return 19; }
  std::size_t agent_outputs() const override { return 2; }
  std::vector<std::string> agent_kinds() const override { return {"tree", "mlp", "table"}; }
  std::unique_ptr<Agent> make_agent(const std::string& kind, Rng& rng) const override;
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override;
  std::vector<double> default_grid() const override;
  // Grid values are upper edges of photon-number bins.
  std::vector<EvalRow> evaluate(const Policy& policy, std::span<const double> grid, std::size_t episodes,
                                std::uint64_t seed, std::size_t workers) const override;

  std::size_t measurements() const { return 3 * settings_.copies + 1; }

 private:
  QmlSettings settings_;
  ResourceBudget budget_;
  std::shared_ptr<const ParameterSpace> space_;
};

struct MultiphaseSettings {
  std::vector<cplx> input{1.0, 0.0, 0.0, 0.0};
  std::size_t measurements = 32;
};

class MultiphaseTask final : public Task {
 public:
  explicit MultiphaseTask(MultiphaseSettings settings);

  std::string name() const override { return "multiphase"; }
  const ResourceBudget& budget() const override { return budget_; }
  std::vector<std::string> baselines() const override { return {"random"}; }
  std::size_t agent_inputs() const override { return 10; }
  std::size_t agent_outputs() const override { return 3; }
  std::vector<std::string> agent_kinds() const override { return {"mlp", "table"}; }
  std::unique_ptr<Agent> make_agent(const std::string& kind, Rng& rng) const override;
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override;
  // Photons consumed after each use of the interferometer.
  std::vector<double> default_grid() const override;

  static std::array<double, 3> hypothesis_phases(std::size_t h);

 private:
  MultiphaseSettings settings_;
  ResourceBudget budget_;
  std::vector<CoherentRegister> encoded_;
  double photons_per_use_ = 0.0;
};

struct BsClassifierSettings {
  std::size_t classes = 3;
  double amplitude = 1.0;
  std::size_t layers = 1;
};

class BsClassifierTask final : public Task {
 public:
  explicit BsClassifierTask(BsClassifierSettings settings);

  std::string name() const override { return "bs_classifier"; }
  const ResourceBudget& budget() const override { return budget_; }
  std::vector<std::string> baselines() const override { return {"random"}; }
  std::size_t agent_inputs() const override { return 0; }
  std::size_t agent_outputs() const override { return BsNetwork::parameter_count(settings_.classes + 1); }
  std::vector<std::string> agent_kinds() const override { return {"table"}; }
  std::unique_ptr<Agent> make_agent(const std::string& kind, Rng& rng) const override;
  EpisodeRecord run_episode(const Policy& policy, const EpisodeOptions& options) const override;

  // Register [alpha_s, alpha_0, ..., alpha_{d-1}] for class s.
  CoherentRegister input_register(std::size_t signal_class) const;

 private:
  BsClassifierSettings settings_;
  ResourceBudget budget_;
};

}  // namespace qmetro
