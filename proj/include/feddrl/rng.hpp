#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "feddrl/error.hpp"

namespace feddrl::rng {

// All randomness in the project flows through the helpers below rather than
// <random> distributions. mt19937_64 output is pinned by the standard, but
// distribution algorithms are not, and reproducible manifests and checkpoints
// require draws that are identical across standard libraries.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a path of indices.
// Used to give every (purpose, round, client) combination its own engine so
// concurrent clients never share state.
inline std::uint64_t derive(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p));
  return h;
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

// Uniform double in [lo, hi). 53-bit mantissa fill.
inline double uniform(std::mt19937_64& g, double lo = 0.0, double hi = 1.0) {
  const double u = static_cast<double>(g() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

// Uniform integer in [lo, hi]. Modulo mapping; the bias is ~range/2^64 and
// irrelevant next to the need for a fixed draw count per call.
inline std::int64_t uniform_int(std::mt19937_64& g, std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw ConfigError("uniform_int: empty range");
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1ULL;
  if (range == 0) return static_cast<std::int64_t>(g());  // full 64-bit span
  return lo + static_cast<std::int64_t>(g() % range);
}

// One Box-Muller normal per call; consumes exactly two engine draws.
inline double gaussian(std::mt19937_64& g, double mean = 0.0, double stddev = 1.0) {
  const double u1 = 1.0 - uniform(g);  // (0, 1]
  const double u2 = uniform(g);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

// Pareto with scale 1: x = (1-u)^{-1/shape}, so P(X > x) = x^{-shape}.
inline double pareto(std::mt19937_64& g, double shape) {
  if (shape <= 0.0) throw ConfigError("pareto: shape must be positive");
  const double u = uniform(g);
  return std::pow(1.0 - u, -1.0 / shape);
}

inline double log_uniform(std::mt19937_64& g, double lo, double hi) {
  if (lo <= 0.0 || hi < lo) throw ConfigError("log_uniform: need 0 < lo <= hi");
  return std::exp(uniform(g, std::log(lo), std::log(hi)));
}

template <typename T>
void shuffle(std::mt19937_64& g, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(g, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct indices from [0, n), in draw order.
inline std::vector<int> sample_without_replacement(std::mt19937_64& g, int n, int k) {
  if (k < 0 || n < 0 || k > n) throw ConfigError("sample_without_replacement: need 0 <= k <= n");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(g, i, n - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace feddrl::rng
