#include "doctest.h"
#include "factory/rng.hpp"
#include "factory/tensor.hpp"

using factory::Rng;
using factory::Tensor;

TEST_CASE("construction and indexing") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.sum() == 0.0);
  t.at4(1, 2, 3, 4) = 7.0;
  CHECK(t[119] == 7.0);
  CHECK(t.at4(1, 2, 3, 4) == 7.0);
}

TEST_CASE("scalar and from") {
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  Tensor v = Tensor::from({1, 2, 3});
  CHECK(v.ndim() == 1);
  CHECK(v.sum() == 6.0);
}

TEST_CASE("add_inplace with scale") {
  Tensor a = Tensor::full({4}, 1.0);
  Tensor b = Tensor::from({1, 2, 3, 4});
  a.add_inplace(b, 0.5);
  CHECK(a[0] == doctest::Approx(1.5));
  CHECK(a[3] == doctest::Approx(3.0));
}

TEST_CASE("randn is seeded deterministically") {
  Rng r1(5), r2(5);
  Tensor a = Tensor::randn({16}, r1);
  Tensor b = Tensor::randn({16}, r2);
  CHECK(a == b);
  CHECK(a.all_finite());
}
