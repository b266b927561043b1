#include "doctest.h"
#include "otto/rng.hpp"

using namespace otto;

TEST_CASE("rng streams are deterministic") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in range") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform(-0.5, 0.5);
    CHECK(u >= -0.5);
    CHECK(u < 0.5);
  }
}

TEST_CASE("uniform_int covers [0, n)") {
  Rng rng(9);
  bool seen[5] = {};
  for (int i = 0; i < 1000; ++i) {
    uint64_t v = rng.uniform_int(5);
    CHECK(v < 5);
    seen[v] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("derived streams differ by tag and index") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 3) == derive_seed(1, "a", 3));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("gaussian moments are sane") {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
