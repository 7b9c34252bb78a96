#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmetro/autodiff.hpp"
#include "qmetro/bounds.hpp"
#include "qmetro/nv_models.hpp"
#include "qmetro/particle_filter.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

class AgentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AgentInput {
  std::span<const ad::Real> features;
  std::size_t step = 0;
  std::size_t node = 0;  // tree address, see TreeAgent::child
};

// A trainable policy. Parameters are plain doubles; forward() records their use on the
// active tape so the trainer can collect gradients through Tape::backward(param_grad).
class Agent {
 public:
  virtual ~Agent() = default;

  virtual std::string kind() const = 0;
  // Layer widths for networks, {rows, cols} for tables, {depth, outputs} for trees.
  virtual std::vector<std::uint64_t> shape() const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t output_size() const = 0;
  virtual std::vector<ad::Real> forward(const AgentInput& input) const = 0;
  virtual std::unique_ptr<Agent> clone() const = 0;

  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

 protected:
  std::vector<double> params_;
};

// Feed-forward network with tanh hidden layers and a linear output layer.
class MlpAgent final : public Agent {
 public:
  explicit MlpAgent(std::vector<std::size_t> widths);
  MlpAgent(std::vector<std::size_t> widths, Rng& rng);
  static std::vector<std::size_t> default_widths(std::size_t inputs, std::size_t outputs,
                                                 std::size_t hidden_layers = 5, std::size_t hidden_width = 64);

  std::string kind() const override { return "mlp"; }
  std::vector<std::uint64_t> shape() const override;
  std::size_t input_size() const override { return widths_.front(); }
  std::size_t output_size() const override { return widths_.back(); }
  std::vector<ad::Real> forward(const AgentInput& input) const override;
  std::unique_ptr<Agent> clone() const override { return std::make_unique<MlpAgent>(*this); }

  std::vector<double> evaluate(std::span<const double> input) const;
  const std::vector<std::size_t>& widths() const { return widths_; }

 private:
  std::vector<std::size_t> widths_;
};

// One row of controls per step; the input is ignored.
class ControlTable final : public Agent {
 public:
  ControlTable(std::size_t rows, std::size_t cols, double fill = 0.0);
  ControlTable(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);

  std::string kind() const override { return "table"; }
  std::vector<std::uint64_t> shape() const override { return {rows_, cols_}; }
  std::size_t input_size() const override { return 0; }
  std::size_t output_size() const override { return cols_; }
  std::vector<ad::Real> forward(const AgentInput& input) const override;
  std::unique_ptr<Agent> clone() const override { return std::make_unique<ControlTable>(*this); }

  std::size_t rows() const { return rows_; }
  double& at(std::size_t row, std::size_t col) { return params_[row * cols_ + col]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
};

// Complete ternary tree stored breadth-first: node (t, path) lives at (3^t - 1)/2 + path
// where path is the base-3 number spelled by the coarse outcomes so far.
class TreeAgent final : public Agent {
 public:
  TreeAgent(std::size_t depth, std::size_t outputs);
  TreeAgent(std::size_t depth, std::size_t outputs, Rng& rng, double lo, double hi);

  static std::size_t node_count(std::size_t depth);
  static std::size_t child(std::size_t node, int branch);
  static std::size_t node_index(std::span<const int> path);

  std::string kind() const override { return "tree"; }
  std::vector<std::uint64_t> shape() const override { return {depth_, outputs_}; }
  std::size_t input_size() const override { return 0; }
  std::size_t output_size() const override { return outputs_; }
  std::vector<ad::Real> forward(const AgentInput& input) const override;
  std::unique_ptr<Agent> clone() const override { return std::make_unique<TreeAgent>(*this); }

  std::size_t depth() const { return depth_; }

 private:
  std::size_t depth_;
  std::size_t outputs_;
};

// f = a + b * features[input_index]; a two-parameter rule used for small checks.
class AffineAgent final : public Agent {
 public:
  AffineAgent(std::size_t input_index, double offset, double slope);

  std::string kind() const override { return "affine"; }
  std::vector<std::uint64_t> shape() const override { return {input_index_}; }
  std::size_t input_size() const override { return input_index_ + 1; }
  std::size_t output_size() const override { return 1; }
  std::vector<ad::Real> forward(const AgentInput& input) const override;
  std::unique_ptr<Agent> clone() const override { return std::make_unique<AffineAgent>(*this); }

 private:
  std::size_t input_index_;
};

// Tape leaves for params[offset, offset + count); their adjoints land in param_grad.
std::vector<ad::Real> parameter_leaves(std::span<const double> params, std::size_t offset, std::size_t count);

std::unique_ptr<Agent> make_agent(const std::string& kind, std::span<const std::uint64_t> shape);

// ---- features and controls for the NV tasks ----

inline constexpr double kSigmaCap = 1.4;

// -(1/10) ln variance - 1, capped.
ad::Real normalized_sigma(const ad::Real& variance, double cap = kSigmaCap);

// [normalized means (d), normalized stds (d), correlations (d*d), t~, R~]
std::vector<ad::Real> featurize_nv(const PosteriorMoments& moments, const ParameterSpace& space, std::size_t step,
                                   std::size_t max_steps, double resource, double max_resource,
                                   double sigma_cap = kSigmaCap);
inline std::size_t nv_feature_count(std::size_t d) { return d * d + 2 * d + 2; }

struct NvControlReal {
  ad::Real tau;
  ad::Real phi;
};
// tau = h |f_0| + 1, phi = pi |f_1| (0 when there is a single output).
NvControlReal nv_control(std::span<const ad::Real> outputs, double prefactor);

struct PrefactorSettings {
  NvKind kind = NvKind::Dc;
  Regime regime = Regime::Measurements;
  double budget = 0.0;           // M_max or T_max
  double t2 = 0.0;               // known coherence time, 0 if unbounded
  double inv_t2_lower = 0.0;     // lower end of the inverse coherence time prior, 0 if not estimated
};
double default_prefactor(const PrefactorSettings& settings);

// ---- literature baselines, all with phi = 0 ----

inline constexpr double kPghEpsilon = 1e-5;

NvControls pgh_control(const ParticleEnsemble& ens, std::span<const std::size_t> dims, Rng& rng);
enum class SigmaVariant { Sigma, SigmaT2 };
NvControls sigma_inverse_control(double covariance_trace, double inv_t2, SigmaVariant variant);
// tau = alpha^{1/beta} / inv_t; the literal reading returns alpha^{1/beta} * inv_t.
NvControls inverse_time_control(double inv_t, double beta, Regime regime, bool literal = false);
// tau^{-1} uniform on [lo, hi].
NvControls random_control(double inv_lo, double inv_hi, Rng& rng);

// ---- checkpoints ----

struct CheckpointInfo {
  std::string kind;
  std::vector<std::uint64_t> shape;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Agent& agent, std::uint64_t config_hash,
                     std::uint64_t step);
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path);
struct LoadedCheckpoint {
  std::unique_ptr<Agent> agent;
  CheckpointInfo info;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qmetro
