#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "factory/autodiff.hpp"
#include "factory/rng.hpp"
#include "factory/tensor.hpp"

namespace testutil {

inline std::string fixtures_dir() {
  const char* p = std::getenv("FACTORY_TEST_DATA");
  return p ? std::string(p) : std::string("tests/fixtures");
}

/// Central finite differences of a scalar-valued function around the current
/// values of `leaf`, compared against the analytic gradient accumulated in
/// leaf->grad by a prior backward() call. Returns the max relative error,
/// with |analytic| + |numeric| + floor in the denominator.
inline double max_rel_grad_error(const std::function<factory::Var()>& loss_fn,
                                 const factory::Var& leaf, double step = 1e-3,
                                 double floor_scale = 1e-6) {
  using namespace factory;
  zero_grad({leaf});
  Var loss = loss_fn();
  backward(loss);
  Tensor analytic = leaf->grad.empty() ? Tensor(leaf->value.shape()) : leaf->grad;

  double max_err = 0.0;
  double gmax = 0.0;
  for (std::int64_t i = 0; i < analytic.size(); ++i) gmax = std::max(gmax, std::abs(analytic[i]));
  const double denom_floor = std::max(gmax, 1.0) * floor_scale;

  for (std::int64_t i = 0; i < leaf->value.size(); ++i) {
    const double orig = leaf->value[i];
    leaf->value[i] = orig + step;
    const double fp = loss_fn()->value.item();
    leaf->value[i] = orig - step;
    const double fm = loss_fn()->value.item();
    leaf->value[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(numeric - analytic[i]) /
                       std::max(std::abs(numeric) + std::abs(analytic[i]), denom_floor);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

inline factory::Tensor random_tensor(std::vector<int> shape, factory::Rng& rng, double scale = 1.0) {
  return factory::Tensor::randn(std::move(shape), rng, scale);
}

}  // namespace testutil
