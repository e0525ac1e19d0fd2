#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "lbam/tensor.hpp"

namespace lbam {

/// splitmix64 finalizer; used to derive independent stream seeds from
/// (base seed, counters) so that every random draw is a pure function of
/// its coordinates.
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> parts) {
  uint64_t h = mix64(base);
  for (uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor randn(const Shape& shape, Rng& rng, double mean = 0.0, double stddev = 1.0);
Tensor rand_uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);
/// Values drawn independently from {0, 1} with P(1) = p_one.
Tensor rand_binary(const Shape& shape, Rng& rng, double p_one = 0.5);

}  // namespace lbam
