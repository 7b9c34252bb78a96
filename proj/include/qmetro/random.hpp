#pragma once

#include <cstdint>
#include <random>

namespace qmetro {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream for (master seed, a, b, c); the mapping is fixed so runs reproduce.
Rng make_stream(std::uint64_t master, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0);

// Uniform on [0, 1) with 53 random bits.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);

// Smallest k with CDF(k) >= u, truncating once the remaining tail mass is below 1e-14.
int poisson_inverse_cdf(double mean, double u);
int sample_poisson(double mean, Rng& rng);

}  // namespace qmetro
