#include "qmetro/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace qmetro::ad {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* Tape::active() noexcept { return g_active; }

ScopedTape::ScopedTape(Tape* tape) : previous_(g_active) { g_active = tape; }
ScopedTape::~ScopedTape() { g_active = previous_; }

std::uint32_t Tape::new_variables(std::size_t count) {
  if (n_vars_ + count >= kUntracked) throw std::length_error("tape variable space exhausted");
  const std::uint32_t first = n_vars_;
  n_vars_ += static_cast<std::uint32_t>(count);
  return first;
}

Real Tape::record(double value, std::span<const Real> args, std::span<const double> partials) {
  const auto begin = static_cast<std::uint32_t>(arg_ids_.size());
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (!args[k].tracked() || partials[k] == 0.0) continue;
    arg_ids_.push_back(args[k].id());
    partials_.push_back(partials[k]);
  }
  const auto end = static_cast<std::uint32_t>(arg_ids_.size());
  if (end == begin) return Real(value);
  const std::uint32_t id = new_variables(1);
  entries_.push_back({id, begin, end});
  return Real(value, id);
}

Real Tape::record(double value, const Real& a, double da) {
  if (!a.tracked() || da == 0.0) return Real(value);
  const auto begin = static_cast<std::uint32_t>(arg_ids_.size());
  arg_ids_.push_back(a.id());
  partials_.push_back(da);
  const std::uint32_t id = new_variables(1);
  entries_.push_back({id, begin, begin + 1});
  return Real(value, id);
}

Real Tape::record(double value, const Real& a, double da, const Real& b, double db) {
  const auto begin = static_cast<std::uint32_t>(arg_ids_.size());
  if (a.tracked() && da != 0.0) {
    arg_ids_.push_back(a.id());
    partials_.push_back(da);
  }
  if (b.tracked() && db != 0.0) {
    arg_ids_.push_back(b.id());
    partials_.push_back(db);
  }
  const auto end = static_cast<std::uint32_t>(arg_ids_.size());
  if (end == begin) return Real(value);
  const std::uint32_t id = new_variables(1);
  entries_.push_back({id, begin, end});
  return Real(value, id);
}

void Tape::push_external(std::unique_ptr<ExternalOp> op) {
  entries_.push_back({kExternal, static_cast<std::uint32_t>(externals_.size()), 0});
  externals_.push_back(std::move(op));
}

void Tape::ensure_adjoints() {
  if (adj_.size() < n_vars_) adj_.resize(n_vars_, 0.0);
}

void Tape::seed(const Real& r, double adjoint) {
  if (!r.tracked()) return;
  ensure_adjoints();
  adj_[r.id()] += adjoint;
}

void Tape::backward(std::span<double> param_grad) {
  ensure_adjoints();
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->result == kExternal) {
      externals_[it->begin]->backward(*this, param_grad);
      continue;
    }
    const double a = adj_[it->result];
    if (a == 0.0) continue;
    for (std::uint32_t k = it->begin; k < it->end; ++k) adj_[arg_ids_[k]] += partials_[k] * a;
  }
}

void Tape::clear() {
  n_vars_ = 0;
  entries_.clear();
  arg_ids_.clear();
  partials_.clear();
  externals_.clear();
  std::fill(adj_.begin(), adj_.end(), 0.0);
  adj_.clear();
}

Real make(double value, const Real& a, double da) {
  Tape* t = g_active;
  if (t == nullptr || !a.tracked()) return Real(value);
  return t->record(value, a, da);
}

Real make(double value, const Real& a, double da, const Real& b, double db) {
  Tape* t = g_active;
  if (t == nullptr || (!a.tracked() && !b.tracked())) return Real(value);
  return t->record(value, a, da, b, db);
}

Real make(double value, std::span<const Real> args, std::span<const double> partials) {
  Tape* t = g_active;
  if (t == nullptr) return Real(value);
  return t->record(value, args, partials);
}

Real variable(double value) {
  Tape* t = g_active;
  if (t == nullptr) return Real(value);
  return Real(value, t->new_variables(1));
}

Real sum(std::span<const Real> xs) {
  double s = 0.0;
  for (const Real& x : xs) s += x.value();
  Tape* t = g_active;
  if (t == nullptr) return Real(s);
  const std::vector<double> ones(xs.size(), 1.0);
  return t->record(s, xs, ones);
}

Real weighted_sum(std::span<const Real> xs, std::span<const double> coeffs) {
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += coeffs[i] * xs[i].value();
  Tape* t = g_active;
  if (t == nullptr) return Real(s);
  return t->record(s, xs, coeffs);
}

Real dot(std::span<const Real> xs, std::span<const Real> ys) {
  Real acc(0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i] * ys[i];
  return acc;
}

Real sin(const Real& x) { return make(std::sin(x.value()), x, std::cos(x.value())); }
Real cos(const Real& x) { return make(std::cos(x.value()), x, -std::sin(x.value())); }
Real exp(const Real& x) {
  const double e = std::exp(x.value());
  return make(e, x, e);
}
Real log(const Real& x) { return make(std::log(x.value()), x, 1.0 / x.value()); }
Real sqrt(const Real& x) {
  const double s = std::sqrt(x.value());
  return make(s, x, s > 0.0 ? 0.5 / s : 0.0);
}
Real abs(const Real& x) {
  const double v = x.value();
  return make(std::fabs(v), x, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}
Real tanh(const Real& x) {
  const double t = std::tanh(x.value());
  return make(t, x, 1.0 - t * t);
}
Real pow(const Real& x, double p) {
  const double v = std::pow(x.value(), p);
  const double d = x.value() != 0.0 ? p * v / x.value() : (p == 1.0 ? 1.0 : 0.0);
  return make(v, x, d);
}
Real square(const Real& x) { return make(x.value() * x.value(), x, 2.0 * x.value()); }
Real min(const Real& a, const Real& b) { return a.value() <= b.value() ? a : b; }
Real max(const Real& a, const Real& b) { return a.value() >= b.value() ? a : b; }

Complex operator*(const Complex& a, const Complex& b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

Complex operator*(const Complex& a, std::complex<double> b) {
  const double br = b.real();
  const double bi = b.imag();
  return {make(a.re.value() * br - a.im.value() * bi, a.re, br, a.im, -bi),
          make(a.re.value() * bi + a.im.value() * br, a.re, bi, a.im, br)};
}

Real norm(const Complex& a) {
  const double r = a.re.value();
  const double i = a.im.value();
  return make(r * r + i * i, a.re, 2.0 * r, a.im, 2.0 * i);
}

Complex expi(const Real& x) { return {cos(x), sin(x)}; }

}  // namespace qmetro::ad
