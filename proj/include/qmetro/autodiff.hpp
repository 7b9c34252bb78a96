#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace qmetro::ad {

inline constexpr std::uint32_t kUntracked = 0xFFFFFFFFu;

// A scalar that optionally lives on the active tape. Without an active tape
// every operation reduces to plain double arithmetic.
class Real {
 public:
  Real() = default;
  Real(double value) : value_(value) {}  // NOLINT: constants convert implicitly
  Real(double value, std::uint32_t id) : value_(value), id_(id) {}

  double value() const { return value_; }
  std::uint32_t id() const { return id_; }
  bool tracked() const { return id_ != kUntracked; }

 private:
  double value_ = 0.0;
  std::uint32_t id_ = kUntracked;
};

class Tape;

class ExternalOp {
 public:
  virtual ~ExternalOp() = default;
  virtual void backward(Tape& tape, std::span<double> param_grad) = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  static Tape* active() noexcept;

  std::uint32_t new_variables(std::size_t count);

  // Records value = f(args) with the given local partials; untracked args are skipped.
  Real record(double value, std::span<const Real> args, std::span<const double> partials);
  Real record(double value, const Real& a, double da);
  Real record(double value, const Real& a, double da, const Real& b, double db);

  void push_external(std::unique_ptr<ExternalOp> op);

  void seed(const Real& r, double adjoint);
  double adjoint(std::uint32_t id) const { return id < adj_.size() ? adj_[id] : 0.0; }
  void accumulate(std::uint32_t id, double value) {
    if (id != kUntracked) adj_[id] += value;
  }

  // Propagates seeded adjoints to every variable and into param_grad (accumulating).
  void backward(std::span<double> param_grad);

  void clear();
  std::size_t variable_count() const { return n_vars_; }
  std::size_t statement_count() const { return entries_.size(); }

 private:
  struct Entry {
    std::uint32_t result;
    std::uint32_t begin;
    std::uint32_t end;
  };
  static constexpr std::uint32_t kExternal = 0xFFFFFFFFu;

  void ensure_adjoints();

  std::uint32_t n_vars_ = 0;
  std::vector<Entry> entries_;
  std::vector<std::uint32_t> arg_ids_;
  std::vector<double> partials_;
  std::vector<std::unique_ptr<ExternalOp>> externals_;
  std::vector<double> adj_;
};

// Activates a tape for the current thread for the lifetime of the scope.
class ScopedTape {
 public:
  explicit ScopedTape(Tape* tape);
  ~ScopedTape();
  ScopedTape(const ScopedTape&) = delete;
  ScopedTape& operator=(const ScopedTape&) = delete;

 private:
  Tape* previous_;
};

Real make(double value, const Real& a, double da);
Real make(double value, const Real& a, double da, const Real& b, double db);
Real make(double value, std::span<const Real> args, std::span<const double> partials);

// Marks a plain value as an independent variable on the active tape.
Real variable(double value);

Real sum(std::span<const Real> xs);
Real weighted_sum(std::span<const Real> xs, std::span<const double> coeffs);
Real dot(std::span<const Real> xs, std::span<const Real> ys);

inline Real operator+(const Real& a, const Real& b) { return make(a.value() + b.value(), a, 1.0, b, 1.0); }
inline Real operator-(const Real& a, const Real& b) { return make(a.value() - b.value(), a, 1.0, b, -1.0); }
inline Real operator*(const Real& a, const Real& b) {
  return make(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Real operator/(const Real& a, const Real& b) {
  const double q = a.value() / b.value();
  return make(q, a, 1.0 / b.value(), b, -q / b.value());
}
inline Real operator-(const Real& a) { return make(-a.value(), a, -1.0); }
inline Real operator+(const Real& a, double b) { return make(a.value() + b, a, 1.0); }
inline Real operator+(double a, const Real& b) { return make(a + b.value(), b, 1.0); }
inline Real operator-(const Real& a, double b) { return make(a.value() - b, a, 1.0); }
inline Real operator-(double a, const Real& b) { return make(a - b.value(), b, -1.0); }
inline Real operator*(const Real& a, double b) { return make(a.value() * b, a, b); }
inline Real operator*(double a, const Real& b) { return make(a * b.value(), b, a); }
inline Real operator/(const Real& a, double b) { return make(a.value() / b, a, 1.0 / b); }
inline Real operator/(double a, const Real& b) {
  const double q = a / b.value();
  return make(q, b, -q / b.value());
}
inline Real& operator+=(Real& a, const Real& b) { return a = a + b; }
inline Real& operator-=(Real& a, const Real& b) { return a = a - b; }
inline Real& operator*=(Real& a, const Real& b) { return a = a * b; }
inline Real& operator/=(Real& a, const Real& b) { return a = a / b; }

inline bool operator<(const Real& a, const Real& b) { return a.value() < b.value(); }
inline bool operator>(const Real& a, const Real& b) { return a.value() > b.value(); }

Real sin(const Real& x);
Real cos(const Real& x);
Real exp(const Real& x);
Real log(const Real& x);
Real sqrt(const Real& x);
Real abs(const Real& x);
Real tanh(const Real& x);
Real pow(const Real& x, double p);
Real square(const Real& x);
Real min(const Real& a, const Real& b);
Real max(const Real& a, const Real& b);
// Value-preserving cut of the derivative.
inline Real stop_gradient(const Real& x) { return Real(x.value()); }

inline std::vector<double> values(std::span<const Real> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].value();
  return out;
}

struct Complex {
  Real re;
  Real im;

  Complex() = default;
  Complex(Real r, Real i = Real(0.0)) : re(r), im(i) {}
  Complex(std::complex<double> z) : re(z.real()), im(z.imag()) {}  // NOLINT

  std::complex<double> value() const { return {re.value(), im.value()}; }
};

inline Complex operator+(const Complex& a, const Complex& b) { return {a.re + b.re, a.im + b.im}; }
inline Complex operator-(const Complex& a, const Complex& b) { return {a.re - b.re, a.im - b.im}; }
inline Complex operator-(const Complex& a) { return {-a.re, -a.im}; }
Complex operator*(const Complex& a, const Complex& b);
Complex operator*(const Complex& a, std::complex<double> b);
inline Complex operator*(std::complex<double> a, const Complex& b) { return b * a; }
inline Complex operator*(const Complex& a, const Real& s) { return {a.re * s, a.im * s}; }
inline Complex operator*(const Real& s, const Complex& a) { return {a.re * s, a.im * s}; }
inline Complex conj(const Complex& a) { return {a.re, -a.im}; }
// |z|^2
Real norm(const Complex& a);
// e^{i x}
Complex expi(const Real& x);

}  // namespace qmetro::ad
