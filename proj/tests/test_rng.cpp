#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "polecal/rng.hpp"

using namespace polecal;
using Catch::Approx;

TEST_CASE("identical seeds reproduce identical streams") {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
  Rng c(42);
  Rng d(42);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(c.uniform() == d.uniform());
    REQUIRE((c.unit_vector() - d.unit_vector()).norm() == 0.0);
  }
}

TEST_CASE("nearby seeds decorrelate") {
  Rng a(1);
  Rng b(2);
  int agree = 0;
  for (int i = 0; i < 256; ++i) {
    if (a.next_u64() == b.next_u64()) ++agree;
  }
  REQUIRE(agree == 0);
}

TEST_CASE("forked streams are independent of the parent and of each other") {
  Rng parent(7);
  // Forking is const: it must not advance the parent.
  Rng reference(7);
  Rng f1 = parent.fork(1);
  Rng f2 = parent.fork(2);
  for (int i = 0; i < 64; ++i) {
    REQUIRE(parent.next_u64() == reference.next_u64());
  }

  // Same key twice gives the same stream; different keys differ.
  Rng again(7);
  Rng f1b = again.fork(1);
  int same_key_agree = 0;
  int diff_key_agree = 0;
  for (int i = 0; i < 256; ++i) {
    const std::uint64_t x = f1.next_u64();
    if (x == f1b.next_u64()) ++same_key_agree;
    if (x == f2.next_u64()) ++diff_key_agree;
  }
  REQUIRE(same_key_agree == 256);
  REQUIRE(diff_key_agree == 0);
}

TEST_CASE("uniform() covers [0,1) with the right mean and variance") {
  Rng rng(101);
  const int n = 200000;
  double sum = 0.0;
  double sumsq = 0.0;
  double lo = 1.0;
  double hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sumsq += u * u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  // Mean 0.5 +- 5 sigma, variance 1/12.
  REQUIRE(mean == Approx(0.5).margin(5.0 / std::sqrt(12.0 * n)));
  REQUIRE(var == Approx(1.0 / 12.0).margin(0.002));
  REQUIRE(lo < 0.001);
  REQUIRE(hi > 0.999);
}

TEST_CASE("uniform(lo, hi) stays inside its interval") {
  Rng rng(102);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(-3.5, 2.25);
    REQUIRE(u >= -3.5);
    REQUIRE(u < 2.25);
  }
}

TEST_CASE("uniform_index hits every bucket roughly evenly") {
  Rng rng(103);
  const std::uint64_t buckets = 10;
  std::vector<int> counts(buckets, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t k = rng.uniform_index(buckets);
    REQUIRE(k < buckets);
    ++counts[static_cast<std::size_t>(k)];
  }
  for (int c : counts) {
    // Expected 10000, sd ~95; allow 6 sigma.
    REQUIRE(std::abs(c - n / 10) < 600);
  }
  REQUIRE(rng.uniform_index(0) == 0);
  REQUIRE(rng.uniform_index(1) == 0);
}

TEST_CASE("bernoulli tracks its probability") {
  Rng rng(104);
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    if (rng.bernoulli(0.3)) ++hits;
  }
  const double sd = std::sqrt(0.3 * 0.7 * n);
  REQUIRE(std::abs(hits - 0.3 * n) < 5.0 * sd);
  Rng rng2(105);
  for (int i = 0; i < 100; ++i) {
    REQUIRE_FALSE(rng2.bernoulli(0.0));
  }
}

TEST_CASE("poisson counts match mean and variance") {
  Rng rng(106);
  const double mean = 4.5;
  const int n = 50000;
  double sum = 0.0;
  double sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = static_cast<double>(rng.poisson(mean));
    sum += k;
    sumsq += k * k;
  }
  const double m = sum / n;
  const double v = sumsq / n - m * m;
  REQUIRE(m == Approx(mean).margin(5.0 * std::sqrt(mean / n)));
  REQUIRE(v == Approx(mean).margin(0.25));
  // Zero mean produces all-zero counts.
  REQUIRE(rng.poisson(0.0) == 0);
}

TEST_CASE("unit_vector samples the sphere uniformly") {
  Rng rng(107);
  const int n = 50000;
  Vector3 acc = Vector3::Zero();
  int upper = 0;
  for (int i = 0; i < n; ++i) {
    const Vector3 v = rng.unit_vector();
    REQUIRE(v.norm() == Approx(1.0).margin(1e-12));
    acc += v;
    if (v.z() > 0) ++upper;
  }
  // Mean direction near zero; hemispheres balanced.
  REQUIRE((acc / n).norm() < 0.02);
  REQUIRE(std::abs(upper - n / 2) < 5.0 * std::sqrt(0.25 * n));
}
