#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "tv3s/errors.hpp"

namespace tv3s {

// Deterministic random source. mt19937_64 has a portable, standardized bit
// stream; the distribution transforms below are hand-rolled because the
// std::*_distribution classes are implementation-defined and would break
// byte-identical reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps the
  // distribution exact.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(bits());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v = bits();
    while (v >= limit) v = bits();
    return lo + static_cast<int64_t>(v % span);
  }

  // Standard normal via Box-Muller. Computes a fresh pair per call and
  // discards the second member: slightly wasteful, fully stateless.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool coin(double p = 0.5) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

// Mixes a base seed with a stream index so independent substreams (one per
// video, per parameter group, ...) never share state.
inline uint64_t substream_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace tv3s
