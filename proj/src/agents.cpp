#include "qmetro/agents.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace qmetro {

namespace {

class ParameterLeafOp final : public ad::ExternalOp {
 public:
  ParameterLeafOp(std::uint32_t first, std::size_t offset, std::size_t count)
      : first_(first), offset_(offset), count_(count) {}

  void backward(ad::Tape& tape, std::span<double> param_grad) override {
    for (std::size_t i = 0; i < count_; ++i)
      param_grad[offset_ + i] += tape.adjoint(first_ + static_cast<std::uint32_t>(i));
  }

 private:
  std::uint32_t first_;
  std::size_t offset_;
  std::size_t count_;
};

struct MlpTrace {
  std::vector<std::vector<double>> activations;  // activations[0] is the input
};

std::vector<double> mlp_forward(std::span<const std::size_t> widths, const double* params,
                                std::span<const double> input, MlpTrace* trace) {
  std::vector<double> a(input.begin(), input.end());
  if (trace != nullptr) trace->activations.push_back(a);
  std::size_t offset = 0;
  const std::size_t layers = widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    const double* w = params + offset;
    const double* b = w + in * out;
    std::vector<double> z(out);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = b[r];
      const double* row = w + r * in;
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * a[c];
      z[r] = l + 1 < layers ? std::tanh(acc) : acc;
    }
    offset += in * out + out;
    a = std::move(z);
    if (trace != nullptr && l + 1 < layers) trace->activations.push_back(a);
  }
  return a;
}

class MlpOp final : public ad::ExternalOp {
 public:
  MlpOp(std::vector<std::size_t> widths, const double* params, MlpTrace trace, std::vector<std::uint32_t> input_ids,
        std::uint32_t first_output)
      : widths_(std::move(widths)),
        params_(params),
        trace_(std::move(trace)),
        input_ids_(std::move(input_ids)),
        first_output_(first_output) {}

  void backward(ad::Tape& tape, std::span<double> param_grad) override {
    const std::size_t layers = widths_.size() - 1;
    std::vector<double> g(widths_.back());
    bool any = false;
    for (std::size_t r = 0; r < g.size(); ++r) {
      g[r] = tape.adjoint(first_output_ + static_cast<std::uint32_t>(r));
      any = any || g[r] != 0.0;
    }
    if (!any) return;

    std::vector<std::size_t> offsets(layers);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      offsets[l] = offset;
      offset += widths_[l] * widths_[l + 1] + widths_[l + 1];
    }
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = widths_[l];
      const std::size_t out = widths_[l + 1];
      const auto& a_prev = trace_.activations[l];
      const double* w = params_ + offsets[l];
      double* gw = param_grad.data() + offsets[l];
      double* gb = gw + in * out;
      std::vector<double> g_prev(in, 0.0);
      for (std::size_t r = 0; r < out; ++r) {
        const double gz = g[r];
        if (gz == 0.0) continue;
        gb[r] += gz;
        double* gw_row = gw + r * in;
        const double* w_row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) {
          gw_row[c] += gz * a_prev[c];
          g_prev[c] += gz * w_row[c];
        }
      }
      if (l > 0)
        for (std::size_t c = 0; c < in; ++c) g_prev[c] *= 1.0 - a_prev[c] * a_prev[c];
      g = std::move(g_prev);
    }
    for (std::size_t c = 0; c < input_ids_.size(); ++c) tape.accumulate(input_ids_[c], g[c]);
  }

 private:
  std::vector<std::size_t> widths_;
  const double* params_;
  MlpTrace trace_;
  std::vector<std::uint32_t> input_ids_;
  std::uint32_t first_output_;
};

std::size_t mlp_parameter_count(std::span<const std::size_t> widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

}  // namespace

std::vector<ad::Real> parameter_leaves(std::span<const double> params, std::size_t offset, std::size_t count) {
  std::vector<ad::Real> out;
  out.reserve(count);
  ad::Tape* tape = ad::Tape::active();
  if (tape == nullptr) {
    for (std::size_t i = 0; i < count; ++i) out.emplace_back(params[offset + i]);
    return out;
  }
  const std::uint32_t first = tape->new_variables(count);
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(params[offset + i], first + static_cast<std::uint32_t>(i));
  tape->push_external(std::make_unique<ParameterLeafOp>(first, offset, count));
  return out;
}

MlpAgent::MlpAgent(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2 || std::find(widths_.begin(), widths_.end(), 0u) != widths_.end())
    throw AgentError("network needs at least an input and an output layer of nonzero width");
  params_.assign(mlp_parameter_count(widths_), 0.0);
}

MlpAgent::MlpAgent(std::vector<std::size_t> widths, Rng& rng) : MlpAgent(std::move(widths)) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t k = 0; k < in * out; ++k) params_[offset + k] = uniform(rng, -limit, limit);
    offset += in * out + out;
  }
}

std::vector<std::size_t> MlpAgent::default_widths(std::size_t inputs, std::size_t outputs, std::size_t hidden_layers,
                                                  std::size_t hidden_width) {
  std::vector<std::size_t> w{inputs};
  w.insert(w.end(), hidden_layers, hidden_width);
  w.push_back(outputs);
  return w;
}

std::vector<std::uint64_t> MlpAgent::shape() const { return {widths_.begin(), widths_.end()}; }

std::vector<double> MlpAgent::evaluate(std::span<const double> input) const {
  if (input.size() != input_size()) throw AgentError("network input has the wrong length");
  return mlp_forward(widths_, params_.data(), input, nullptr);
}

std::vector<ad::Real> MlpAgent::forward(const AgentInput& input) const {
  if (input.features.size() != input_size())
    throw AgentError(fmt::format("network expects {} inputs, got {}", input_size(), input.features.size()));
  const auto x = ad::values(input.features);
  ad::Tape* tape = ad::Tape::active();
  if (tape == nullptr) {
    const auto y = mlp_forward(widths_, params_.data(), x, nullptr);
    return {y.begin(), y.end()};
  }
  MlpTrace trace;
  const auto y = mlp_forward(widths_, params_.data(), x, &trace);
  std::vector<std::uint32_t> ids(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ids[i] = input.features[i].id();
  const std::uint32_t first = tape->new_variables(y.size());
  tape->push_external(std::make_unique<MlpOp>(widths_, params_.data(), std::move(trace), std::move(ids), first));
  std::vector<ad::Real> out;
  out.reserve(y.size());
  for (std::size_t r = 0; r < y.size(); ++r) out.emplace_back(y[r], first + static_cast<std::uint32_t>(r));
  return out;
}

ControlTable::ControlTable(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw AgentError("control table needs at least one row and column");
  params_.assign(rows * cols, fill);
}

ControlTable::ControlTable(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi)
    : ControlTable(rows, cols) {
  for (auto& p : params_) p = uniform(rng, lo, hi);
}

std::vector<ad::Real> ControlTable::forward(const AgentInput& input) const {
  if (input.step >= rows_) throw AgentError(fmt::format("control table has no row for step {}", input.step));
  return parameter_leaves(params_, input.step * cols_, cols_);
}

TreeAgent::TreeAgent(std::size_t depth, std::size_t outputs) : depth_(depth), outputs_(outputs) {
  if (outputs == 0) throw AgentError("tree nodes need at least one control");
  if (depth > 18) throw AgentError("tree depth above 18 is not supported");
  params_.assign(node_count(depth) * outputs, 0.0);
}

TreeAgent::TreeAgent(std::size_t depth, std::size_t outputs, Rng& rng, double lo, double hi)
    : TreeAgent(depth, outputs) {
  for (auto& p : params_) p = uniform(rng, lo, hi);
}

std::size_t TreeAgent::node_count(std::size_t depth) {
  std::size_t power = 1;
  for (std::size_t i = 0; i <= depth; ++i) power *= 3;
  return (power - 1) / 2;
}

std::size_t TreeAgent::child(std::size_t node, int branch) {
  if (branch < 0 || branch > 2) throw AgentError("ternary branch must be 0, 1 or 2");
  return 3 * node + 1 + static_cast<std::size_t>(branch);
}

std::size_t TreeAgent::node_index(std::span<const int> path) {
  std::size_t node = 0;
  for (int b : path) node = child(node, b);
  return node;
}

std::vector<ad::Real> TreeAgent::forward(const AgentInput& input) const {
  if (input.node >= node_count(depth_)) throw AgentError(fmt::format("tree has no node {}", input.node));
  return parameter_leaves(params_, input.node * outputs_, outputs_);
}

AffineAgent::AffineAgent(std::size_t input_index, double offset, double slope) : input_index_(input_index) {
  params_ = {offset, slope};
}

std::vector<ad::Real> AffineAgent::forward(const AgentInput& input) const {
  if (input.features.size() <= input_index_) throw AgentError("affine rule input index out of range");
  const auto p = parameter_leaves(params_, 0, 2);
  return {p[0] + p[1] * input.features[input_index_]};
}

std::unique_ptr<Agent> make_agent(const std::string& kind, std::span<const std::uint64_t> shape) {
  if (kind == "mlp") return std::make_unique<MlpAgent>(std::vector<std::size_t>(shape.begin(), shape.end()));
  if (kind == "table" && shape.size() == 2) return std::make_unique<ControlTable>(shape[0], shape[1]);
  if (kind == "tree" && shape.size() == 2) return std::make_unique<TreeAgent>(shape[0], shape[1]);
  if (kind == "affine" && shape.size() == 1) return std::make_unique<AffineAgent>(shape[0], 0.0, 0.0);
  throw AgentError(fmt::format("cannot build agent '{}' with shape [{}]", kind, fmt::join(shape, ", ")));
}

ad::Real normalized_sigma(const ad::Real& variance, double cap) {
  if (!(variance.value() > 0.0)) return ad::Real(cap);
  const ad::Real s = -0.1 * ad::log(variance) - 1.0;
  if (s.value() > cap) return ad::Real(cap);
  return s;
}

std::vector<ad::Real> featurize_nv(const PosteriorMoments& moments, const ParameterSpace& space, std::size_t step,
                                   std::size_t max_steps, double resource, double max_resource, double sigma_cap) {
  if (max_steps == 0 || !(max_resource > 0.0)) throw AgentError("feature normalisation needs positive maxima");
  const std::size_t d = moments.dim;
  std::vector<ad::Real> f;
  f.reserve(nv_feature_count(d));
  for (std::size_t j = 0; j < d; ++j) {
    const double lo = space[j].lower;
    const double hi = space[j].is_continuous() ? space[j].upper : static_cast<double>(space[j].cardinality - 1);
    f.push_back(2.0 * (moments.mean[j] - lo) / (hi - lo) - 1.0);
  }
  for (std::size_t j = 0; j < d; ++j) f.push_back(normalized_sigma(moments.cov(j, j), sigma_cap));
  for (std::size_t k = 0; k < d * d; ++k) f.push_back(moments.correlation[k]);
  f.emplace_back(2.0 * static_cast<double>(step) / static_cast<double>(max_steps) - 1.0);
  f.emplace_back(2.0 * resource / max_resource - 1.0);
  return f;
}

NvControlReal nv_control(std::span<const ad::Real> outputs, double prefactor) {
  if (outputs.empty()) throw AgentError("agent produced no controls");
  NvControlReal c{prefactor * ad::abs(outputs[0]) + 1.0, ad::Real(0.0)};
  if (outputs.size() > 1) c.phi = std::numbers::pi * ad::abs(outputs[1]);
  return c;
}

double default_prefactor(const PrefactorSettings& s) {
  switch (s.kind) {
    case NvKind::Ac: return 1.0;
    case NvKind::Decoherence: return 100.0;
    case NvKind::Hyperfine: return s.t2 > 0.0 ? std::min(40.0, 0.5 * s.t2) : 40.0;
    case NvKind::Dc: break;
  }
  double h = s.regime == Regime::Time ? s.budget / 20.0 : std::ceil(std::exp2(std::sqrt(s.budget)));
  if (s.t2 > 0.0) h = std::max(h, s.t2);
  if (s.inv_t2_lower > 0.0) h = std::max(h, 1.0 / s.inv_t2_lower);
  return h;
}

namespace {

std::size_t draw_by_weight(std::span<const double> w, double total, Rng& rng) {
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    acc += w[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace

NvControls pgh_control(const ParticleEnsemble& ens, std::span<const std::size_t> dims, Rng& rng) {
  if (ens.size() < 2) throw AgentError("particle guess heuristic needs at least two particles");
  const auto w = ens.weight_values();
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const auto a = ens.particle(draw_by_weight(w, total, rng));
  const auto b = ens.particle(draw_by_weight(w, total, rng));
  double dist = 0.0;
  for (std::size_t j : dims) dist += (a[j] - b[j]) * (a[j] - b[j]);
  return {1.0 / (std::sqrt(dist) + kPghEpsilon), 0.0};
}

NvControls sigma_inverse_control(double covariance_trace, double inv_t2, SigmaVariant variant) {
  const double root = std::sqrt(std::max(covariance_trace, 0.0));
  if (variant == SigmaVariant::Sigma) return {1.0 / root, 0.0};
  return {1.0 / (root + inv_t2), 0.0};
}

NvControls inverse_time_control(double inv_t, double beta, Regime regime, bool literal) {
  if (!(inv_t > 0.0) || !(beta > 0.0)) throw AgentError("inverse-time rule needs positive estimates");
  const auto& k = bound_constants();
  const double alpha = regime == Regime::Measurements ? k.alpha_measurement : k.alpha_time;
  const double scale = std::pow(alpha, 1.0 / beta);
  return {literal ? scale * inv_t : scale / inv_t, 0.0};
}

NvControls random_control(double inv_lo, double inv_hi, Rng& rng) { return {1.0 / uniform(rng, inv_lo, inv_hi), 0.0}; }

namespace {

constexpr char kMagic[8] = {'Q', 'M', 'E', 'T', 'R', 'O', 'C', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_bytes(std::istream& in, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw AgentError("checkpoint is truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".meta";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Agent& agent, std::uint64_t config_hash,
                     std::uint64_t step) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw AgentError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    const auto kind = agent.kind();
    put_u32(out, static_cast<std::uint32_t>(kind.size()));
    out.write(kind.data(), static_cast<std::streamsize>(kind.size()));
    const auto shape = agent.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto s : shape) put_u64(out, s);
    put_u64(out, agent.parameter_count());
    for (double p : agent.parameters()) put_u64(out, std::bit_cast<std::uint64_t>(p));
    if (!out) throw AgentError("failed writing checkpoint " + path.string());
  }
  std::ofstream meta(checkpoint_sidecar(path), std::ios::trunc);
  meta << "format_version = " << kCheckpointVersion << '\n'
       << "kind = \"" << agent.kind() << "\"\n"
       << "shape = [" << fmt::format("{}", fmt::join(agent.shape(), ", ")) << "]\n"
       << "parameter_count = " << agent.parameter_count() << '\n'
       << "config_hash = \"" << fmt::format("{:016x}", config_hash) << "\"\n"
       << "step = " << step << '\n';
  if (!meta) throw AgentError("cannot write checkpoint sidecar for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AgentError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw AgentError(path.string() + " is not a checkpoint");
  const auto version = static_cast<std::uint32_t>(get_bytes(in, 4));
  if (version != kCheckpointVersion) throw AgentError(fmt::format("unsupported checkpoint version {}", version));
  LoadedCheckpoint out;
  const auto kind_len = get_bytes(in, 4);
  if (kind_len > 64) throw AgentError("corrupt checkpoint header");
  out.info.kind.resize(kind_len);
  in.read(out.info.kind.data(), static_cast<std::streamsize>(kind_len));
  const auto dims = get_bytes(in, 4);
  if (dims > 64) throw AgentError("corrupt checkpoint header");
  for (std::uint64_t i = 0; i < dims; ++i) out.info.shape.push_back(get_bytes(in, 8));
  const auto count = get_bytes(in, 8);
  out.agent = make_agent(out.info.kind, out.info.shape);
  if (count != out.agent->parameter_count())
    throw AgentError(fmt::format("checkpoint declares {} parameters, shape implies {}", count,
                                 out.agent->parameter_count()));
  auto params = out.agent->parameters();
  for (auto& p : params) p = std::bit_cast<double>(get_bytes(in, 8));

  std::ifstream meta(checkpoint_sidecar(path));
  if (!meta) throw AgentError("missing checkpoint sidecar " + checkpoint_sidecar(path).string());
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    value.erase(0, value.find_first_not_of(" \""));
    value.erase(value.find_last_not_of(" \"") + 1);
    if (key == "config_hash") out.info.config_hash = std::stoull(value, nullptr, 16);
    if (key == "step") out.info.step = std::stoull(value);
  }
  return out;
}

}  // namespace qmetro
