#include "qmetro/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qmetro/bounds.hpp"

namespace qmetro {

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;
constexpr int kHalted = 3;

std::string format_number(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

const PriorInterval* find_prior(const NvTaskSettings& s, const std::string& name) {
  for (const auto& p : s.priors)
    if (p.name == name) return &p;
  return nullptr;
}

double fixed_value(const NvTaskSettings& s, const std::string& name, double fallback) {
  const auto it = s.fixed.find(name);
  return it == s.fixed.end() ? fallback : it->second;
}

std::vector<BoundRow> nv_bounds(const RunConfig& c, std::span<const double> grid) {
  const auto& s = c.nv;
  CrbSettings crb;
  std::string case_name = "t2_inf";
  const double rate = fixed_value(s, "inv_t2", 0.0);
  if (rate > 0.0) {
    crb.t2 = 1.0 / rate;
    case_name = "t2_known";
  }
  if (const auto* p = find_prior(s, "inv_t2")) {
    crb.inv_t2 = {p->lower, p->upper};
    case_name = "t2_interval";
  }
  if (const auto* p = find_prior(s, "omega")) crb.omega = {p->lower, p->upper};
  if (const auto* p = find_prior(s, "field")) crb.field = {p->lower, p->upper};
  crb.ac_frequency = s.model.known_frequency;
  if (c.model == "nv_dec") {
    if (const auto* p = find_prior(s, "inv_t")) crb.dec_inv_t = {p->lower, p->upper};
    if (const auto* p = find_prior(s, "beta")) {
      crb.dec_beta = {p->lower, p->upper};
      const auto w = s.weights.find("beta");
      case_name = w != s.weights.end() && w->second > 0.0 ? "both" : "beta_nuisance";
    } else {
      case_name = "beta_2";
    }
  }
  if (c.model == "nv_hyperfine" && case_name == "t2_interval")
    throw ConfigError("hyperfine bounds are available for a known or infinite coherence time only");

  const Regime regime = s.budget.kind == BudgetKind::Measurements ? Regime::Measurements : Regime::Time;
  const auto curve = crb_curve(c.model, case_name, regime, grid, crb);
  std::vector<BoundRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i)
    rows.push_back({grid[i], curve.bound[i], c.model, case_name, to_string(regime)});
  return rows;
}

std::vector<BoundRow> photonic_bounds(const RunConfig& c, std::span<const double> grid) {
  std::vector<BoundRow> rows;
  if (c.model == "dolinar") {
    for (double a : grid) {
      rows.push_back({a, helstrom_error(a, c.dolinar.references), c.model, "agnostic", "amplitude"});
      rows.push_back({a, helstrom_error(a), c.model, "known_reference", "amplitude"});
    }
  } else if (c.model == "multiphase") {
    const double per_use = CoherentRegister{c.multiphase.input}.mean_photons();
    for (double r : grid) {
      const auto copies = static_cast<std::size_t>(std::max(1.0, std::round(r / per_use)));
      rows.push_back({r, multiphase_pgm_error(c.multiphase.input, copies), c.model, "pgm", "photons"});
    }
  } else if (c.model == "bs_classifier") {
    for (double r : grid) {
      const auto copies = static_cast<std::size_t>(std::max(1.0, std::round(r)));
      rows.push_back({r, classifier_pgm_error(c.classifier.classes, c.classifier.amplitude, copies), c.model, "pgm",
                      "measurements"});
    }
  } else {
    std::vector<double> edges{0.0};
    edges.insert(edges.end(), grid.begin(), grid.end());
    const auto points = qml_reference(c.qml.half_width, c.qml.copies, 20000, edges, derive_seed(c.seed, 0xB0D));
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].samples > 0) rows.push_back({grid[i], points[i].error, c.model, "pgm", "photons"});
  }
  return rows;
}

std::string run_label(const std::filesystem::path& input) {
  if (std::filesystem::is_directory(input)) {
    auto p = input;
    if (!p.has_filename()) p = p.parent_path();
    return p.filename().string();
  }
  return input.stem().string();
}

std::filesystem::path resolve_table(const std::filesystem::path& input) {
  if (!std::filesystem::is_directory(input)) return input;
  for (const char* name : {"eval.csv", "bounds.csv"})
    if (std::filesystem::exists(input / name)) return input / name;
  throw std::runtime_error("no eval.csv or bounds.csv in " + input.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string agent;
  std::string grid;
  bool force = false;
};

RunConfig load_with_overrides(const CommonOptions& o) {
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = std::max<std::size_t>(1, *o.workers);
  if (!o.grid.empty()) c.eval.grid = parse_grid(o.grid);
  return c;
}

std::vector<double> grid_for(const RunConfig& c, const Task& task) {
  return c.eval.grid.empty() ? task.default_grid() : c.eval.grid;
}

void check_agent_kind(const Task& task, const std::string& kind) {
  const auto kinds = task.agent_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ConfigError(fmt::format("{} cannot drive a '{}' agent (available: {})", task.name(), kind,
                                  fmt::join(kinds, ", ")));
}

int command_train(const CommonOptions& o) {
  RunConfig c = load_with_overrides(o);
  if (!o.agent.empty()) c.agent_kind = o.agent;
  const std::filesystem::path out(o.out);
  std::filesystem::create_directories(out);
  configure_logging(out / "train.log");
  write_text(out / "config.toml", dump_config(c));
  spdlog::debug("config hash {} seed {} workers {}", hash_hex(config_hash(c)), c.seed, c.workers);

  const auto task = make_task(c);
  check_agent_kind(*task, c.agent_kind);
  Rng init_rng = make_stream(c.seed, 0xA6E7);
  auto agent = task->make_agent(c.agent_kind, init_rng);
  spdlog::info("training {} agent ({} parameters) on {}", agent->kind(), agent->parameter_count(), task->name());
  if (c.training.pretrain) task->pretrain(*agent, c.training.pretrain_steps, derive_seed(c.seed, 0x97E7));

  TrainerOptions opts;
  opts.batch_size = c.training.batch_size;
  opts.steps = c.training.steps;
  opts.learning_rate = c.training.learning_rate;
  opts.decay_steps = c.training.decay_steps;
  opts.workers = c.workers;
  opts.checkpoint_every = c.training.checkpoint_every;
  opts.seed = c.seed;
  opts.config_hash = config_hash(c);
  opts.out_dir = out;
  const auto result = train(*task, *agent, c.loss, opts);

  if (c.eval.episodes > 0) {
    const auto grid = grid_for(c, *task);
    const auto rows = task->evaluate(Policy{agent.get(), {}}, grid, c.eval.episodes, c.seed, c.workers);
    std::ofstream eval(out / "eval.csv", std::ios::trunc);
    write_eval_header(eval);
    write_eval_rows(eval, rows);
  }
  if (result.halted) {
    spdlog::error("training halted: {}", result.halt_reason);
    return kHalted;
  }
  spdlog::info("wrote {}", out.string());
  return 0;
}

std::unique_ptr<Agent> load_agent(const std::filesystem::path& path, const RunConfig& c, const Task& task,
                                  bool force) {
  const auto file = std::filesystem::is_directory(path) ? path / "checkpoint.bin" : path;
  auto loaded = load_checkpoint(file);
  const auto expected = config_hash(c);
  if (loaded.info.config_hash != expected) {
    const auto message = fmt::format("checkpoint {} was trained with config hash {} but the config hashes to {}",
                                     file.string(), hash_hex(loaded.info.config_hash), hash_hex(expected));
    if (!force) throw ConfigError(message + " (pass --force to evaluate anyway)");
    spdlog::warn("{}; continuing because of --force", message);
  }
  const auto& agent = *loaded.agent;
  if (agent.output_size() != task.agent_outputs() ||
      (agent.input_size() != 0 && agent.input_size() > task.agent_inputs()))
    throw ConfigError(fmt::format("checkpoint {} does not fit the inputs and outputs of {}", file.string(),
                                  task.name()));
  return std::move(loaded.agent);
}

int command_eval(const CommonOptions& o) {
  const RunConfig c = load_with_overrides(o);
  const std::filesystem::path out(o.out);
  std::filesystem::create_directories(out);
  configure_logging(out / "eval.log");
  const auto task = make_task(c);
  const auto grid = grid_for(c, *task);

  std::vector<std::string> strategies = o.agent.empty() ? task->baselines() : split(o.agent, ',');
  std::vector<EvalRow> rows;
  for (const auto& s : strategies) {
    const auto baselines = task->baselines();
    if (std::find(baselines.begin(), baselines.end(), s) != baselines.end()) {
      spdlog::info("evaluating baseline {}", s);
      const auto r = task->evaluate(Policy{nullptr, s}, grid, c.eval.episodes, c.seed, c.workers);
      rows.insert(rows.end(), r.begin(), r.end());
    } else if (std::filesystem::exists(s)) {
      const auto agent = load_agent(s, c, *task, o.force);
      spdlog::info("evaluating {} agent from {}", agent->kind(), s);
      auto r = task->evaluate(Policy{agent.get(), {}}, grid, c.eval.episodes, c.seed, c.workers);
      for (auto& row : r) row.strategy = run_label(std::filesystem::is_directory(s) ? std::filesystem::path(s)
                                                                                    : std::filesystem::path(s).parent_path());
      rows.insert(rows.end(), r.begin(), r.end());
    } else {
      throw ConfigError(fmt::format("'{}' is neither a baseline of {} ({}) nor a checkpoint", s, task->name(),
                                    fmt::join(baselines, ", ")));
    }
  }
  std::ofstream eval(out / "eval.csv", std::ios::trunc);
  write_eval_header(eval);
  write_eval_rows(eval, rows);
  spdlog::info("wrote {}", (out / "eval.csv").string());
  return 0;
}

int command_bounds(const CommonOptions& o) {
  const RunConfig c = load_with_overrides(o);
  configure_logging();
  const auto task = make_task(c);
  const auto grid = grid_for(c, *task);
  const auto rows = compute_bounds(c, grid);
  std::filesystem::path out(o.out);
  if (out.extension() != ".csv") {
    std::filesystem::create_directories(out);
    out /= "bounds.csv";
  } else if (out.has_parent_path()) {
    std::filesystem::create_directories(out.parent_path());
  }
  std::ofstream file(out, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + out.string());
  write_bounds_header(file);
  write_bounds_rows(file, rows);
  spdlog::info("wrote {} bound rows to {}", rows.size(), out.string());
  return 0;
}

int command_compare(const std::vector<std::string>& inputs, const std::string& out) {
  configure_logging();
  std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
  const auto table = compare_runs(paths);
  if (out.empty() || out == "-") {
    write_csv(std::cout, table);
  } else {
    std::ofstream file(out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + out);
    write_csv(file, table);
  }
  return 0;
}

}  // namespace

std::vector<BoundRow> compute_bounds(const RunConfig& config, std::span<const double> grid) {
  std::vector<double> fallback;
  if (grid.empty()) {
    fallback = make_task(config)->default_grid();
    grid = fallback;
  }
  return config.is_nv() ? nv_bounds(config, grid) : photonic_bounds(config, grid);
}

void write_bounds_header(std::ostream& out) { out << "resource,bound,task,case,regime\n"; }

void write_bounds_rows(std::ostream& out, std::span<const BoundRow> rows) {
  for (const auto& r : rows)
    out << format_number(r.resource) << ',' << format_number(r.bound) << ',' << r.task << ',' << r.case_name << ','
        << r.regime << '\n';
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  try {
    if (text.find(':') != std::string::npos) {
      const auto parts = split(text, ':');
      if (parts.size() < 2 || parts.size() > 3) throw std::invalid_argument("range grids are lo:hi or lo:hi:step");
      const double lo = parse_double(parts[0]);
      const double hi = parse_double(parts[1]);
      const double step = parts.size() == 3 ? parse_double(parts[2]) : 1.0;
      if (!(step > 0.0) || hi < lo) throw std::invalid_argument("range grid needs lo <= hi and a positive step");
      const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
      for (std::size_t i = 0; i < count; ++i) grid.push_back(lo + step * static_cast<double>(i));
    } else {
      for (const auto& item : split(text, ',')) grid.push_back(parse_double(item));
    }
  } catch (const std::logic_error& e) {
    throw ConfigError(fmt::format("bad grid '{}': {}", text, e.what()));
  }
  if (grid.empty()) throw ConfigError("empty grid");
  return grid;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  table.header = split(line, ',');
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line, ',');
    if (row.size() != table.header.size())
      throw std::runtime_error(fmt::format("{}: row with {} fields under a {}-column header", path.string(),
                                           row.size(), table.header.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_csv(std::ostream& out, const CsvTable& table) {
  out << fmt::format("{}\n", fmt::join(table.header, ","));
  for (const auto& row : table.rows) out << fmt::format("{}\n", fmt::join(row, ","));
}

CsvTable compare_runs(std::span<const std::filesystem::path> inputs) {
  if (inputs.empty()) throw ConfigError("compare needs at least one run");
  std::map<double, std::map<std::string, std::string>> cells;
  std::vector<std::string> columns;
  const auto add_column = [&](const std::string& name) {
    if (std::find(columns.begin(), columns.end(), name) == columns.end()) columns.push_back(name);
  };
  for (const auto& input : inputs) {
    const auto label = run_label(input);
    const auto table = read_csv(resolve_table(input));
    const auto col = [&](const std::string& name) -> std::size_t {
      const auto it = std::find(table.header.begin(), table.header.end(), name);
      if (it == table.header.end()) throw std::runtime_error(fmt::format("{} has no '{}' column", label, name));
      return static_cast<std::size_t>(it - table.header.begin());
    };
    const std::size_t resource = col("resource");
    const bool eval = std::find(table.header.begin(), table.header.end(), "strategy") != table.header.end();
    for (const auto& row : table.rows) {
      const double key = parse_double(row[resource]);
      if (eval) {
        const auto base = fmt::format("{}/{}", label, row[col("strategy")]);
        add_column(base + "_mean");
        add_column(base + "_stderr");
        cells[key][base + "_mean"] = row[col("precision_mean")];
        cells[key][base + "_stderr"] = row[col("precision_stderr")];
      } else {
        const auto name = fmt::format("{}/{}:{}", label, row[col("task")], row[col("case")]);
        add_column(name);
        cells[key][name] = row[col("bound")];
      }
    }
  }
  CsvTable out;
  out.header.push_back("resource");
  out.header.insert(out.header.end(), columns.begin(), columns.end());
  for (const auto& [key, row_cells] : cells) {
    std::vector<std::string> row{format_number(key)};
    for (const auto& c : columns) {
      const auto it = row_cells.find(c);
      row.push_back(it == row_cells.end() ? std::string() : it->second);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

void configure_logging(const std::filesystem::path& log_file) {
  auto level = spdlog::level::info;
  if (const char* env = std::getenv("QMETRO_LOG"); env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
  }
  std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
  if (!log_file.empty()) sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(log_file.string(), true));
  auto logger = std::make_shared<spdlog::logger>("qmetro", sinks.begin(), sinks.end());
  logger->set_level(level);
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  logger->flush_on(spdlog::level::trace);
  spdlog::set_default_logger(std::move(logger));
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Adaptive quantum metrology: train, evaluate and bound control strategies"};
  app.require_subcommand(1);
  CommonOptions train_o, eval_o, bounds_o;
  std::vector<std::string> compare_inputs;
  std::string compare_out;

  const auto common = [](CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config, "TOML run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--workers", o.workers, "parallel episodes (overrides the config)");
    sub->add_option("--grid", o.grid, "evaluation grid: 1,2,5 or lo:hi[:step]");
  };
  auto* train_cmd = app.add_subcommand("train", "train an agent and write metrics, checkpoints and eval.csv");
  common(train_cmd, train_o);
  train_cmd->add_option("--out", train_o.out, "run directory")->required();
  train_cmd->add_option("--agent", train_o.agent, "agent kind (overrides the config)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate baselines or checkpoints and write eval.csv");
  common(eval_cmd, eval_o);
  eval_cmd->add_option("--out", eval_o.out, "output directory")->required();
  eval_cmd->add_option("--agent", eval_o.agent,
                       "comma-separated baselines, checkpoint files or run directories (default: all baselines)");
  eval_cmd->add_flag("--force", eval_o.force, "evaluate a checkpoint whose config hash does not match");

  auto* bounds_cmd = app.add_subcommand("bounds", "write reference bounds for the configured model");
  common(bounds_cmd, bounds_o);
  bounds_cmd->add_option("--out", bounds_o.out, "output directory or .csv file")->required();

  auto* compare_cmd = app.add_subcommand("compare", "join eval or bounds CSVs of several runs on the resource");
  compare_cmd->add_option("runs", compare_inputs, "run directories or CSV files")->required()->check(CLI::ExistingPath);
  compare_cmd->add_option("--out", compare_out, "output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }

  try {
    if (train_cmd->parsed()) return command_train(train_o);
    if (eval_cmd->parsed()) return command_eval(eval_o);
    if (bounds_cmd->parsed()) return command_bounds(bounds_o);
    return command_compare(compare_inputs, compare_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace qmetro
