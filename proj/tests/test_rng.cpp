// Determinism and distributional sanity of the seeded random source. The
// transforms are hand-rolled so that streams are reproducible across
// standard libraries; these tests pin both the reproducibility and the
// statistical shape.

#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "simpleconv/rng.hpp"

using simpleconv::derive_seed;
using simpleconv::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(123), d(124);
  int diff = 0;
  for (int i = 0; i < 100; ++i) diff += c.next_u64() != d.next_u64();
  REQUIRE(diff > 90);
}

TEST_CASE("derive_seed separates subcomponent streams") {
  const auto s1 = derive_seed(7, 1, 2);
  const auto s2 = derive_seed(7, 1, 3);
  const auto s3 = derive_seed(7, 2, 2);
  REQUIRE(s1 != s2);
  REQUIRE(s1 != s3);
  REQUIRE(derive_seed(7, 1, 2) == s1);  // pure function
}

TEST_CASE("uniform stays in range with correct mean") {
  Rng rng(5);
  double acc = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    acc += u;
  }
  REQUIRE(acc / 20000 == Catch::Approx(0.5).margin(0.01));
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-3.0, 2.0);
    REQUIRE(v >= -3.0);
    REQUIRE(v < 2.0);
  }
}

TEST_CASE("uniform_int is unbiased across small ranges") {
  Rng rng(6);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[static_cast<std::size_t>(rng.uniform_int(7))];
  for (const int c : counts) REQUIRE(std::abs(c - 10000) < 400);  // ~4 sigma
}

TEST_CASE("normal moments") {
  Rng rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  REQUIRE(sum / n == Catch::Approx(0.0).margin(0.02));
  REQUIRE(sq / n == Catch::Approx(1.0).margin(0.03));
}

TEST_CASE("gamma and beta shapes") {
  Rng rng(8);
  // Gamma(k) has mean k and variance k.
  for (const double k : {0.2, 0.5, 2.0, 7.5}) {
    double sum = 0.0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      const double g = rng.gamma(k);
      REQUIRE(g >= 0.0);
      sum += g;
    }
    REQUIRE(sum / n == Catch::Approx(k).epsilon(0.05));
  }
  // Beta(a,a) is symmetric with mean 1/2 and stays in [0,1].
  for (const double a : {0.2, 1.0, 3.0}) {
    double sum = 0.0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
      const double b = rng.beta(a, a);
      REQUIRE(b >= 0.0);
      REQUIRE(b <= 1.0);
      sum += b;
    }
    REQUIRE(sum / n == Catch::Approx(0.5).margin(0.02));
  }
  // Small alpha pushes mass to the endpoints (the mixup regime).
  Rng rng2(9);
  int extreme = 0;
  for (int i = 0; i < 1000; ++i) {
    const double b = rng2.beta(0.2, 0.2);
    extreme += (b < 0.1 || b > 0.9);
  }
  REQUIRE(extreme > 500);
}

TEST_CASE("shuffle is a uniform permutation") {
  Rng rng(10);
  std::vector<int> v(8);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> first_slot(8, 0);
  for (int i = 0; i < 16000; ++i) {
    std::vector<int> w = v;
    rng.shuffle(w);
    std::vector<int> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == v);  // still a permutation
    ++first_slot[static_cast<std::size_t>(w[0])];
  }
  for (const int c : first_slot) REQUIRE(std::abs(c - 2000) < 250);
}
