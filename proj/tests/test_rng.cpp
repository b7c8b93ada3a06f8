#include <cmath>
#include <set>

#include "doctest.h"
#include "factory/rng.hpp"

using factory::Rng;

TEST_CASE("same seed reproduces the sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0,1) and normal is roughly standard") {
  Rng r(7);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double g = r.normal();
    sum += g;
    sum2 += g * g;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("forks with distinct tags decorrelate, same tag repeats") {
  Rng base(123);
  Rng f1 = base.fork("stage-a");
  Rng f2 = base.fork("stage-b");
  Rng f1_again = base.fork("stage-a");
  CHECK(f1.next_u64() != f2.next_u64());
  Rng f1b = base.fork("stage-a");
  CHECK(f1_again.next_u64() == f1b.next_u64());
}

TEST_CASE("uniform_int covers the range") {
  Rng r(9);
  std::set<int> seen;
  for (int i = 0; i < 200; ++i) seen.insert(r.uniform_int(5));
  CHECK(seen.size() == 5);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 4);
}
