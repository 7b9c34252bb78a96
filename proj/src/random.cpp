#include "qmetro/random.hpp"

#include <cmath>
#include <numbers>

namespace qmetro {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0xD1B54A32D192ED03ull));
  h = splitmix64(h ^ (c * 0x8CB92BA72F3D8DD7ull));
  return h;
}

Rng make_stream(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return Rng(derive_seed(master, a, b, c));
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int poisson_inverse_cdf(double mean, double u) {
  if (mean <= 0.0) return 0;
  const double log_mean = std::log(mean);
  double cdf = 0.0;
  for (int k = 0;; ++k) {
    cdf += std::exp(k * log_mean - mean - std::lgamma(k + 1.0));
    if (u < cdf || (k > mean && 1.0 - cdf <= 1e-14)) return k;
  }
}

int sample_poisson(double mean, Rng& rng) { return poisson_inverse_cdf(mean, uniform01(rng)); }

}  // namespace qmetro
