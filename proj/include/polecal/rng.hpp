#pragma once

#include <cmath>
#include <cstdint>

#include "polecal/geometry.hpp"

// Deterministic random helpers. The standard distributions are
// implementation-defined, so everything random in the library goes through
// these to keep identical seeds producing identical streams.

namespace polecal {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // splitmix-style warmup so nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Poisson count by summing exponential gaps; O(mean) but underflow-free.
  std::uint64_t poisson(double mean) {
    double acc = 0.0;
    std::uint64_t count = 0;
    while (true) {
      acc += -std::log(1.0 - uniform());
      if (acc >= mean) break;
      ++count;
    }
    return count;
  }

  /// Uniformly distributed unit vector.
  Vector3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return Vector3(r * std::cos(phi), r * std::sin(phi), z);
  }

  /// Derives an independent stream for a keyed sub-task.
  Rng fork(std::uint64_t key) const {
    std::uint64_t z = state_ ^ (0x165667b19e3779f9ULL * (key + 1));
    z = (z ^ (z >> 29)) * 0xff51afd7ed558ccdULL;
    return Rng(z ^ (z >> 33));
  }

 private:
  std::uint64_t state_;
};

}  // namespace polecal
