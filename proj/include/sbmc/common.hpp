#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbmc {

/// Flat network parameters. Layout is owned by the producer (see nn.hpp).
using ParamVector = std::vector<double>;

/// Raised when an evaluation that must be finite (likelihood, gradient)
/// produced NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the file parsers; the message carries the offending location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-chain random stream. Every chain, particle and island owns one.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream seed for (base seed, island p, particle i). Distinct tuples give
/// unrelated seeds without any coordination between islands.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t island,
                                    std::uint64_t particle) {
  return mix64(mix64(mix64(base) ^ island) ^ (particle + 0x632be59bd9b4e019ULL));
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline bool all_finite(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

/// log(sum(exp(x))) with the max subtracted first.
double log_sum_exp(std::span<const double> x);

/// log((1/n) sum(exp(x))).
double log_mean_exp(std::span<const double> x);

/// exp(x - logsumexp(x)); the result sums to one.
std::vector<double> normalize_log_weights(std::span<const double> log_w);

/// Runs fn(0..n-1) on up to `threads` workers (0 means hardware
/// concurrency). Tasks must not share mutable state. If any task throws, the
/// exception of the lowest failing index is rethrown after all finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace sbmc
