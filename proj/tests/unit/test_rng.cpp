#include <doctest.h>

#include <set>

#include "bmax/rng.hpp"

using namespace bmax;

TEST_CASE("identical construction replays the identical sequence") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct seeds and streams decorrelate") {
  RngStream a(42, 0), b(43, 0), c(42, 1);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 256; ++i) {
    const auto va = a.next_u64();
    if (va == b.next_u64()) ++same_ab;
    if (va == c.next_u64()) ++same_ac;
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("children are independent of parent consumption") {
  RngStream parent(9, 3);
  RngStream child_before = parent.child(5);
  parent.next_u64();
  parent.next_u64();
  RngStream child_after = parent.child(5);
  for (int i = 0; i < 64; ++i) CHECK(child_before.next_u64() == child_after.next_u64());
}

TEST_CASE("uniform stays in range and normal draws are sane") {
  RngStream rng(1);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  sq /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq - 1.0) < 0.05);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  RngStream a(5, 1), b(5, 1);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
  CHECK(std::set<int>(v1.begin(), v1.end()).size() == 8);
}
