#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qmetro/tasks.hpp"
#include "qmetro/training.hpp"

namespace qmetro {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingSettings {
  std::size_t batch_size = 64;
  std::size_t steps = 200;
  double learning_rate = 1e-3;
  double decay_steps = 100.0;
  bool pretrain = true;
  std::size_t pretrain_steps = 500;
  std::size_t checkpoint_every = 0;
};

struct EvalSettings {
  std::size_t episodes = 1000;
  std::vector<double> grid;  // empty selects the task default
};

struct RunConfig {
  std::string model = "nv_dc";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string agent_kind;  // empty selects the task default
  NvTaskSettings nv;
  DolinarSettings dolinar;
  QmlSettings qml;
  MultiphaseSettings multiphase;
  BsClassifierSettings classifier;
  LossSpec loss;
  TrainingSettings training;
  EvalSettings eval;

  bool is_nv() const { return model.rfind("nv_", 0) == 0; }
};

const std::vector<std::string>& model_names();

// Defaults for a model before any file is applied.
RunConfig default_config(const std::string& model);

// Parses TOML text; unknown keys and wrong types raise ConfigError naming the key and line.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Every effective setting as TOML, keys sorted, so that parse_config(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& config);

// FNV-1a over the sections that define what an agent means: model, agent, budget and particles.
std::uint64_t config_hash(const RunConfig& config);
std::string hash_hex(std::uint64_t hash);

std::unique_ptr<Task> make_task(const RunConfig& config);

}  // namespace qmetro
