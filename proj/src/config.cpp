#include "qmetro/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#define TOML_EXCEPTIONS 1
#include <tomlplusplus/toml.hpp>

namespace qmetro {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::string eta_form_name(EtaForm form) { return form == EtaForm::Linear ? "linear" : "variance"; }

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const toml::node& node, const std::string& key, const std::string& message) const {
    const auto& where = node.source().begin;
    throw ConfigError(fmt::format("{}:{}: '{}': {}", source_, where.line, key, message));
  }

  void allow(const toml::table& table, const std::string& prefix, std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, v] : table) {
      if (std::find(keys.begin(), keys.end(), k.str()) == keys.end())
        fail(v, prefix + std::string(k.str()), "unknown key");
    }
  }

  const toml::table* table(const toml::table& parent, std::string_view key, const std::string& path) const {
    const toml::node* node = parent.get(key);
    if (node == nullptr) return nullptr;
    if (!node->is_table()) fail(*node, path, "expected a table");
    return node->as_table();
  }

  double number(const toml::node& node, const std::string& key) const {
    if (const auto* f = node.as_floating_point()) return f->get();
    if (const auto* i = node.as_integer()) return static_cast<double>(i->get());
    fail(node, key, "expected a number");
  }

  std::int64_t integer(const toml::node& node, const std::string& key) const {
    if (const auto* i = node.as_integer()) return i->get();
    fail(node, key, "expected an integer");
  }

  std::size_t count(const toml::node& node, const std::string& key) const {
    const auto v = integer(node, key);
    if (v < 0) fail(node, key, "must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  std::string string(const toml::node& node, const std::string& key) const {
    if (const auto* s = node.as_string()) return s->get();
    fail(node, key, "expected a string");
  }

  bool boolean(const toml::node& node, const std::string& key) const {
    if (const auto* b = node.as_boolean()) return b->get();
    fail(node, key, "expected true or false");
  }

  std::vector<double> numbers(const toml::node& node, const std::string& key) const {
    const auto* arr = node.as_array();
    if (arr == nullptr) fail(node, key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : *arr) out.push_back(number(x, key));
    return out;
  }

  std::pair<double, double> interval(const toml::node& node, const std::string& key) const {
    const auto v = numbers(node, key);
    if (v.size() != 2 || !(v[0] < v[1])) fail(node, key, "expected [lower, upper] with lower < upper");
    return {v[0], v[1]};
  }

  template <class F>
  void each(const toml::table& t, const std::string& key, F&& f) const {
    for (const auto& [k, v] : t) f(std::string(k.str()), v, key + "." + std::string(k.str()));
  }

 private:
  std::string source_;
};

void read_nv_model(const Reader& r, const toml::table& t, RunConfig& c) {
  r.allow(t, "model.", {"name", "dephasing_exponent", "hyperfine_phase", "known_frequency", "inverse_time_literal",
                        "prior", "fixed"});
  auto& nv = c.nv;
  if (const auto* n = t.get("dephasing_exponent")) {
    const auto e = r.integer(*n, "model.dephasing_exponent");
    if (e != 1 && e != 2) r.fail(*n, "model.dephasing_exponent", "must be 1 or 2");
    nv.model.dephasing_exponent = static_cast<int>(e);
  }
  if (const auto* n = t.get("hyperfine_phase")) nv.model.hyperfine_phase = r.boolean(*n, "model.hyperfine_phase");
  if (const auto* n = t.get("known_frequency")) nv.model.known_frequency = r.number(*n, "model.known_frequency");
  if (const auto* n = t.get("inverse_time_literal")) nv.inverse_time_literal = r.boolean(*n, "model.inverse_time_literal");
  if (const auto* prior = r.table(t, "prior", "model.prior")) {
    nv.priors.clear();
    r.each(*prior, "model.prior", [&](const std::string& name, const toml::node& v, const std::string& key) {
      const auto [lo, hi] = r.interval(v, key);
      nv.priors.push_back({name, lo, hi});
    });
  }
  if (const auto* fixed = r.table(t, "fixed", "model.fixed")) {
    nv.fixed.clear();
    r.each(*fixed, "model.fixed", [&](const std::string& name, const toml::node& v, const std::string& key) {
      nv.fixed[name] = r.number(v, key);
    });
  }
}

void read_photonic_model(const Reader& r, const toml::table& t, RunConfig& c) {
  if (c.model == "dolinar") {
    r.allow(t, "model.", {"name", "references", "alpha_range"});
    if (const auto* n = t.get("references")) c.dolinar.references = r.count(*n, "model.references");
    if (const auto* n = t.get("alpha_range")) {
      const auto [lo, hi] = r.interval(*n, "model.alpha_range");
      c.dolinar.alpha_lower = lo;
      c.dolinar.alpha_upper = hi;
    }
  } else if (c.model == "qml3") {
    r.allow(t, "model.", {"name", "half_width", "copies"});
    if (const auto* n = t.get("half_width")) c.qml.half_width = r.number(*n, "model.half_width");
    if (const auto* n = t.get("copies")) c.qml.copies = r.count(*n, "model.copies");
  } else if (c.model == "multiphase") {
    r.allow(t, "model.", {"name", "input", "measurements"});
    if (const auto* n = t.get("measurements")) c.multiphase.measurements = r.count(*n, "model.measurements");
    if (const auto* n = t.get("input")) {
      const auto* arr = n->as_array();
      if (arr == nullptr) r.fail(*n, "model.input", "expected an array of four amplitudes");
      c.multiphase.input.clear();
      for (const auto& x : *arr) {
        if (x.is_array()) {
          const auto v = r.numbers(x, "model.input");
          if (v.size() != 2) r.fail(x, "model.input", "complex amplitudes are written [re, im]");
          c.multiphase.input.emplace_back(v[0], v[1]);
        } else {
          c.multiphase.input.emplace_back(r.number(x, "model.input"), 0.0);
        }
      }
    }
  } else {
    r.allow(t, "model.", {"name", "classes", "class_amplitude", "layers"});
    if (const auto* n = t.get("classes")) c.classifier.classes = r.count(*n, "model.classes");
    if (const auto* n = t.get("class_amplitude")) c.classifier.amplitude = r.number(*n, "model.class_amplitude");
    if (const auto* n = t.get("layers")) c.classifier.layers = r.count(*n, "model.layers");
  }
}

PfOptions* pf_of(RunConfig& c) {
  if (c.is_nv()) return &c.nv.pf;
  if (c.model == "dolinar") return &c.dolinar.pf;
  if (c.model == "qml3") return &c.qml.pf;
  return nullptr;
}

std::size_t* particle_count_of(RunConfig& c) {
  if (c.is_nv()) return &c.nv.particles;
  if (c.model == "dolinar") return &c.dolinar.particles;
  if (c.model == "qml3") return &c.qml.particles;
  return nullptr;
}

bool has_particles(const RunConfig& c) { return c.is_nv() || c.model == "dolinar" || c.model == "qml3"; }

toml::array pair_array(double a, double b) { return toml::array{a, b}; }

toml::table model_table(const RunConfig& c) {
  toml::table t{{"name", c.model}};
  if (c.is_nv()) {
    const auto& nv = c.nv;
    t.insert("dephasing_exponent", static_cast<std::int64_t>(nv.model.dephasing_exponent));
    t.insert("hyperfine_phase", nv.model.hyperfine_phase);
    t.insert("known_frequency", nv.model.known_frequency);
    t.insert("inverse_time_literal", nv.inverse_time_literal);
    toml::table prior;
    for (const auto& p : nv.priors) prior.insert(p.name, pair_array(p.lower, p.upper));
    t.insert("prior", std::move(prior));
    toml::table fixed;
    for (const auto& [k, v] : nv.fixed) fixed.insert(k, v);
    t.insert("fixed", std::move(fixed));
  } else if (c.model == "dolinar") {
    t.insert("references", static_cast<std::int64_t>(c.dolinar.references));
    t.insert("alpha_range", pair_array(c.dolinar.alpha_lower, c.dolinar.alpha_upper));
  } else if (c.model == "qml3") {
    t.insert("half_width", c.qml.half_width);
    t.insert("copies", static_cast<std::int64_t>(c.qml.copies));
  } else if (c.model == "multiphase") {
    toml::array input;
    for (const auto& z : c.multiphase.input) input.push_back(pair_array(z.real(), z.imag()));
    t.insert("input", std::move(input));
    t.insert("measurements", static_cast<std::int64_t>(c.multiphase.measurements));
  } else {
    t.insert("classes", static_cast<std::int64_t>(c.classifier.classes));
    t.insert("class_amplitude", c.classifier.amplitude);
    t.insert("layers", static_cast<std::int64_t>(c.classifier.layers));
  }
  return t;
}

toml::table agent_table(const RunConfig& c) {
  toml::table t{{"kind", c.agent_kind}};
  if (c.is_nv()) {
    t.insert("prefactor", c.nv.prefactor);
    t.insert("input", c.nv.agent_input);
  }
  return t;
}

toml::table budget_table(const RunConfig& c) {
  return toml::table{{"kind", to_string(c.nv.budget.kind)},
                     {"amount", c.nv.budget.amount},
                     {"max_steps", static_cast<std::int64_t>(c.nv.budget.max_steps)}};
}

toml::table particles_table(RunConfig c) {
  return toml::table{{"count", static_cast<std::int64_t>(*particle_count_of(c))},
                     {"ess_threshold", pf_of(c)->ess_threshold},
                     {"jitter_scale", pf_of(c)->jitter_scale},
                     {"resample_gradient", to_string(pf_of(c)->gradient)}};
}

std::string to_text(const toml::table& t) {
  std::ostringstream out;
  out << toml::toml_formatter(t, toml::format_flags::none);
  out << '\n';
  return out.str();
}

}  // namespace

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"nv_dc",   "nv_ac", "nv_dec",     "nv_hyperfine",
                                              "dolinar", "qml3",  "multiphase", "bs_classifier"};
  return names;
}

RunConfig default_config(const std::string& model) {
  const auto& names = model_names();
  if (std::find(names.begin(), names.end(), model) == names.end())
    throw ConfigError(fmt::format("unknown model '{}'", model));
  RunConfig c;
  c.model = model;
  if (c.is_nv()) {
    c.nv.kind = parse_nv_kind(model);
    switch (c.nv.kind) {
      case NvKind::Dc: c.nv.priors = {{"omega", 0.0, 1.0}}; break;
      case NvKind::Ac: c.nv.priors = {{"field", 0.0, 1.0}}; break;
      case NvKind::Decoherence: c.nv.priors = {{"inv_t", 0.01, 0.1}, {"beta", 1.5, 4.0}}; break;
      case NvKind::Hyperfine: c.nv.priors = {{"omega0", 0.0, 1.0}, {"omega1", 0.0, 1.0}}; break;
    }
    c.nv.budget = {BudgetKind::Measurements, 20.0, 20};
    c.loss.mode = LossMode::Log;
    c.agent_kind = "mlp";
  } else if (model == "dolinar") {
    c.loss = {LossMode::Dolinar, EtaForm::Linear, c.dolinar.loss_variant};
    c.agent_kind = "mlp";
  } else {
    c.loss.mode = LossMode::Classification;
    c.agent_kind = model == "qml3" ? "tree" : model == "multiphase" ? "mlp" : "table";
  }
  return c;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.source().begin.line, e.description()));
  }
  const Reader r(source);
  r.allow(root, "", {"seed", "workers", "model", "agent", "budget", "loss", "training", "particles", "eval"});

  std::string model = "nv_dc";
  const toml::table* model_t = r.table(root, "model", "model");
  if (model_t != nullptr) {
    if (const auto* n = model_t->get("name")) model = r.string(*n, "model.name");
  }
  RunConfig c;
  try {
    c = default_config(model);
  } catch (const ConfigError&) {
    r.fail(*model_t->get("name"), "model.name", fmt::format("unknown model '{}'", model));
  }

  if (const auto* n = root.get("seed")) {
    const auto s = r.integer(*n, "seed");
    if (s < 0) r.fail(*n, "seed", "must be nonnegative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (const auto* n = root.get("workers")) c.workers = std::max<std::size_t>(1, r.count(*n, "workers"));

  if (model_t != nullptr) {
    if (c.is_nv()) read_nv_model(r, *model_t, c);
    else read_photonic_model(r, *model_t, c);
  }

  if (const auto* t = r.table(root, "agent", "agent")) {
    if (c.is_nv()) r.allow(*t, "agent.", {"kind", "prefactor", "input"});
    else r.allow(*t, "agent.", {"kind"});
    if (const auto* n = t->get("kind")) c.agent_kind = r.string(*n, "agent.kind");
    if (const auto* n = t->get("prefactor")) c.nv.prefactor = r.number(*n, "agent.prefactor");
    if (const auto* n = t->get("input")) {
      c.nv.agent_input = r.string(*n, "agent.input");
      if (c.nv.agent_input != "posterior" && c.nv.agent_input != "step_resource")
        r.fail(*n, "agent.input", "expected \"posterior\" or \"step_resource\"");
    }
  }

  if (const auto* t = r.table(root, "budget", "budget")) {
    if (!c.is_nv()) r.fail(*root.get("budget"), "budget", "photonic budgets follow from the model section");
    r.allow(*t, "budget.", {"kind", "amount", "max_steps"});
    auto& b = c.nv.budget;
    if (const auto* n = t->get("kind")) {
      try {
        b.kind = parse_budget_kind(r.string(*n, "budget.kind"));
      } catch (const std::invalid_argument& e) {
        r.fail(*n, "budget.kind", e.what());
      }
    }
    if (const auto* n = t->get("amount")) b.amount = r.number(*n, "budget.amount");
    if (const auto* n = t->get("max_steps")) {
      b.max_steps = r.count(*n, "budget.max_steps");
    } else {
      b.max_steps = b.kind == BudgetKind::Measurements ? static_cast<std::size_t>(b.amount) : 0;
    }
    if (!(b.amount > 0.0)) r.fail(*t, "budget.amount", "must be positive");
    if (b.kind == BudgetKind::Photons) r.fail(*t, "budget.kind", "NV models count measurements or time");
    if (b.kind == BudgetKind::TotalTime && b.max_steps == 0)
      r.fail(*t, "budget.max_steps", "a time budget needs a positive step cap");
  }

  if (const auto* t = r.table(root, "loss", "loss")) {
    if (c.is_nv()) r.allow(*t, "loss.", {"mode", "eta_form", "weights"});
    else if (c.model == "dolinar") r.allow(*t, "loss.", {"mode", "dolinar_variant"});
    else r.allow(*t, "loss.", {"mode"});
    if (const auto* n = t->get("mode")) {
      LossMode mode;
      try {
        mode = parse_loss_mode(r.string(*n, "loss.mode"));
      } catch (const std::invalid_argument& e) {
        r.fail(*n, "loss.mode", e.what());
      }
      const bool nv_mode = mode == LossMode::Cumulative || mode == LossMode::Log || mode == LossMode::Terminal;
      if (c.is_nv() != nv_mode || (c.model == "dolinar" && mode != LossMode::Dolinar) ||
          (!c.is_nv() && c.model != "dolinar" && mode != LossMode::Classification))
        r.fail(*n, "loss.mode", fmt::format("mode '{}' does not apply to {}", to_string(mode), c.model));
      c.loss.mode = mode;
    }
    if (const auto* n = t->get("eta_form")) {
      const auto form = r.string(*n, "loss.eta_form");
      if (form == "linear") c.loss.eta_form = EtaForm::Linear;
      else if (form == "variance") c.loss.eta_form = EtaForm::Variance;
      else r.fail(*n, "loss.eta_form", "expected \"linear\" or \"variance\"");
    }
    if (const auto* n = t->get("dolinar_variant")) {
      const auto v = r.integer(*n, "loss.dolinar_variant");
      if (v < 0 || v > 8) r.fail(*n, "loss.dolinar_variant", "must be in 0..8");
      c.loss.dolinar_variant = static_cast<int>(v);
      c.dolinar.loss_variant = static_cast<int>(v);
    }
    if (const auto* w = r.table(*t, "weights", "loss.weights")) {
      c.nv.weights.clear();
      r.each(*w, "loss.weights", [&](const std::string& name, const toml::node& v, const std::string& key) {
        c.nv.weights[name] = r.number(v, key);
      });
    }
  }
  c.nv.loss = c.loss;

  if (const auto* t = r.table(root, "training", "training")) {
    r.allow(*t, "training.", {"batch_size", "steps", "learning_rate", "decay_steps", "pretrain", "pretrain_steps",
                              "checkpoint_every"});
    auto& s = c.training;
    if (const auto* n = t->get("batch_size")) s.batch_size = r.count(*n, "training.batch_size");
    if (const auto* n = t->get("steps")) s.steps = r.count(*n, "training.steps");
    if (const auto* n = t->get("learning_rate")) s.learning_rate = r.number(*n, "training.learning_rate");
    if (const auto* n = t->get("decay_steps")) s.decay_steps = r.number(*n, "training.decay_steps");
    if (const auto* n = t->get("pretrain")) s.pretrain = r.boolean(*n, "training.pretrain");
    if (const auto* n = t->get("pretrain_steps")) s.pretrain_steps = r.count(*n, "training.pretrain_steps");
    if (const auto* n = t->get("checkpoint_every")) s.checkpoint_every = r.count(*n, "training.checkpoint_every");
    if (s.batch_size < 2) r.fail(*t, "training.batch_size", "needs at least two episodes");
  }

  if (const auto* t = r.table(root, "particles", "particles")) {
    if (pf_of(c) == nullptr) r.fail(*root.get("particles"), "particles", "this model has no particle settings");
    r.allow(*t, "particles.", {"count", "ess_threshold", "jitter_scale", "resample_gradient"});
    if (const auto* n = t->get("count")) *particle_count_of(c) = r.count(*n, "particles.count");
    if (const auto* n = t->get("ess_threshold")) pf_of(c)->ess_threshold = r.number(*n, "particles.ess_threshold");
    if (const auto* n = t->get("jitter_scale")) pf_of(c)->jitter_scale = r.number(*n, "particles.jitter_scale");
    if (const auto* n = t->get("resample_gradient")) {
      try {
        pf_of(c)->gradient = parse_resample_gradient(r.string(*n, "particles.resample_gradient"));
      } catch (const std::invalid_argument& e) {
        r.fail(*n, "particles.resample_gradient", e.what());
      }
    }
  }

  if (const auto* t = r.table(root, "eval", "eval")) {
    r.allow(*t, "eval.", {"episodes", "grid"});
    if (const auto* n = t->get("episodes")) c.eval.episodes = r.count(*n, "eval.episodes");
    if (const auto* n = t->get("grid")) c.eval.grid = r.numbers(*n, "eval.grid");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string dump_config(const RunConfig& c) {
  toml::table root{{"seed", static_cast<std::int64_t>(c.seed)}, {"workers", static_cast<std::int64_t>(c.workers)}};
  root.insert("model", model_table(c));
  root.insert("agent", agent_table(c));
  if (c.is_nv()) root.insert("budget", budget_table(c));
  toml::table loss{{"mode", to_string(c.loss.mode)}};
  if (c.is_nv()) {
    loss.insert("eta_form", eta_form_name(c.loss.eta_form));
    toml::table weights;
    for (const auto& [k, v] : c.nv.weights) weights.insert(k, v);
    loss.insert("weights", std::move(weights));
  } else if (c.model == "dolinar") {
    loss.insert("dolinar_variant", static_cast<std::int64_t>(c.loss.dolinar_variant));
  }
  root.insert("loss", std::move(loss));
  const auto& s = c.training;
  root.insert("training", toml::table{{"batch_size", static_cast<std::int64_t>(s.batch_size)},
                                      {"steps", static_cast<std::int64_t>(s.steps)},
                                      {"learning_rate", s.learning_rate},
                                      {"decay_steps", s.decay_steps},
                                      {"pretrain", s.pretrain},
                                      {"pretrain_steps", static_cast<std::int64_t>(s.pretrain_steps)},
                                      {"checkpoint_every", static_cast<std::int64_t>(s.checkpoint_every)}});
  if (has_particles(c)) root.insert("particles", particles_table(c));
  toml::array grid;
  for (double g : c.eval.grid) grid.push_back(g);
  root.insert("eval", toml::table{{"episodes", static_cast<std::int64_t>(c.eval.episodes)}, {"grid", std::move(grid)}});
  return to_text(root);
}

std::uint64_t config_hash(const RunConfig& c) {
  toml::table t;
  t.insert("model", model_table(c));
  t.insert("agent", agent_table(c));
  if (c.is_nv()) t.insert("budget", budget_table(c));
  if (has_particles(c)) t.insert("particles", particles_table(c));
  std::uint64_t h = kFnvOffset;
  for (unsigned char ch : to_text(t)) {
    h ^= ch;
    h *= kFnvPrime;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

std::unique_ptr<Task> make_task(const RunConfig& c) {
  try {
    if (c.is_nv()) {
      auto s = c.nv;
      s.loss = c.loss;
      return std::make_unique<NvTask>(std::move(s));
    }
    if (c.model == "dolinar") {
      auto s = c.dolinar;
      s.loss_variant = c.loss.dolinar_variant;
      return std::make_unique<DolinarTask>(s);
    }
    if (c.model == "qml3") return std::make_unique<QmlTask>(c.qml);
    if (c.model == "multiphase") return std::make_unique<MultiphaseTask>(c.multiphase);
    return std::make_unique<BsClassifierTask>(c.classifier);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("invalid {} settings: {}", c.model, e.what()));
  }
}

}  // namespace qmetro
