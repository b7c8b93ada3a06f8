#include <cmath>
#include <vector>

#include "doctest.h"
#include "factory/autodiff.hpp"
#include "factory/nn.hpp"
#include "factory/rng.hpp"
#include "testutil.hpp"

using namespace factory;

namespace {
constexpr double kTol = 1e-6;

Var leaf_from(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  return make_param(Tensor::randn(std::move(shape), rng, scale));
}
}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(11);
  auto x = leaf_from(rng, {3, 4});
  auto y = leaf_from(rng, {3, 4});

  auto check = [&](const char* name, std::function<Var()> fn, const Var& leaf) {
    INFO(name);
    CHECK(testutil::max_rel_grad_error(fn, leaf) < kTol * 100);
  };

  check("add", [&] { return sum_all(mul(add(x, y), y)); }, x);
  check("sub", [&] { return sum_all(mul(sub(x, y), x)); }, y);
  check("scale", [&] { return sum_all(scale(x, -2.5)); }, x);
  check("tanh", [&] { return sum_all(tanh_act(x)); }, x);
  check("sigmoid", [&] { return sum_all(sigmoid_act(x)); }, x);
  check("softplus", [&] { return sum_all(softplus_act(x)); }, x);
  check("leaky_relu", [&] { return sum_all(leaky_relu(x, 0.2)); }, x);
  check("mean", [&] { return mean_all(mul(x, x)); }, x);
  check("dot", [&] { return dot(x, y); }, x);
}

TEST_CASE("log, pow, abs, sqrt, clamp gradients") {
  Rng rng(13);
  Tensor pos({5});
  for (int i = 0; i < 5; ++i) pos[i] = 0.3 + 0.1 * i;
  auto x = make_param(pos);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(log_act(x)); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(pow_const(x, 3.0)); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(sqrt_act(x)); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(abs_act(x)); }, x) < 1e-4);
  // interior region only: clamp kinks would break the FD comparison
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(clamp_act(x, 0.0, 10.0)); }, x) < 1e-4);
}

TEST_CASE("matmul and bias gradients") {
  Rng rng(17);
  auto a = leaf_from(rng, {4, 3});
  auto b = leaf_from(rng, {3, 5});
  auto bias = leaf_from(rng, {5});
  auto fn = [&] { return sum_all(tanh_act(bias_add(matmul(a, b), bias))); };
  CHECK(testutil::max_rel_grad_error(fn, a) < 1e-4);
  CHECK(testutil::max_rel_grad_error(fn, b) < 1e-4);
  CHECK(testutil::max_rel_grad_error(fn, bias) < 1e-4);
}

TEST_CASE("conv2d gradients, stride and padding") {
  Rng rng(19);
  for (int stride : {1, 2}) {
    auto x = leaf_from(rng, {2, 3, 6, 6});
    auto w = leaf_from(rng, {4, 3, 3, 3});
    auto b = leaf_from(rng, {4});
    auto fn = [&] { return sum_all(tanh_act(bias_add(conv2d(x, w, stride, 1), b))); };
    CHECK(testutil::max_rel_grad_error(fn, x) < 1e-4);
    CHECK(testutil::max_rel_grad_error(fn, w) < 1e-4);
    CHECK(testutil::max_rel_grad_error(fn, b) < 1e-4);
  }
}

TEST_CASE("conv2d 1x1 kernel") {
  Rng rng(23);
  auto x = leaf_from(rng, {1, 4, 5, 5});
  auto w = leaf_from(rng, {2, 4, 1, 1});
  auto fn = [&] { return sum_all(conv2d(x, w, 1, 0)); };
  CHECK(testutil::max_rel_grad_error(fn, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error(fn, w) < 1e-4);
}

TEST_CASE("spatial resampling gradients") {
  Rng rng(29);
  auto x = leaf_from(rng, {1, 2, 4, 4});
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(mul(upsample2x_nearest(x), upsample2x_nearest(x))); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(pow_const(resize_bilinear(x, 7, 9), 2.0)); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(pow_const(resize_bilinear(x, 3, 2), 2.0)); }, x) < 1e-4);
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(pow_const(avg_pool(x, 2), 2.0)); }, x) < 1e-4);
}

TEST_CASE("bilinear resize keeps constants constant") {
  Tensor t = Tensor::full({1, 1, 4, 4}, 3.25);
  auto y = resize_bilinear(make_const(t), 11, 5);
  for (std::int64_t i = 0; i < y->value.size(); ++i) CHECK(y->value[i] == doctest::Approx(3.25));
}

TEST_CASE("softmax, row_pixel_norm, mul_channels, shape ops") {
  Rng rng(31);
  auto v = leaf_from(rng, {6});
  auto w = leaf_from(rng, {6});
  CHECK(testutil::max_rel_grad_error([&] { return dot(softmax_1d(v), w->value.all_finite() ? w : w); }, v) < 1e-4);

  auto m = leaf_from(rng, {3, 8});
  CHECK(testutil::max_rel_grad_error([&] { return sum_all(pow_const(row_pixel_norm(m), 2.0)); }, m) < 1e-4);

  auto x4 = leaf_from(rng, {2, 3, 4, 4});
  auto s = leaf_from(rng, {2, 3});
  auto fn = [&] { return sum_all(pow_const(mul_channels(x4, s), 2.0)); };
  CHECK(testutil::max_rel_grad_error(fn, x4) < 1e-4);
  CHECK(testutil::max_rel_grad_error(fn, s) < 1e-4);

  CHECK(testutil::max_rel_grad_error(
            [&] { return sum_all(pow_const(reshape(x4, {6, 16}), 2.0)); }, x4) < 1e-4);
  CHECK(testutil::max_rel_grad_error(
            [&] { return sum_all(pow_const(select_batch(x4, 1), 2.0)); }, x4) < 1e-4);
  CHECK(testutil::max_rel_grad_error(
            [&] { return sum_all(pow_const(concat_channels({x4, x4}), 2.0)); }, x4) < 1e-4);
  CHECK(testutil::max_rel_grad_error(
            [&] { return sum_all(pow_const(concat_1d({v, v, w}), 2.0)); }, v) < 1e-4);
}

TEST_CASE("softmax matches direct computation") {
  auto x = make_const(Tensor::from({0.0, std::log(2.0)}));
  auto y = softmax_1d(x);
  CHECK(y->value[0] == doctest::Approx(1.0 / 3.0));
  CHECK(y->value[1] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("detach blocks gradients") {
  Rng rng(37);
  auto x = leaf_from(rng, {4});
  auto loss = sum_all(mul(detach(x), x));
  backward(loss);
  // gradient is x itself (from the non-detached factor), not 2x
  for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(x->value[i]));
}

TEST_CASE("no-grad mode builds plain values") {
  Rng rng(41);
  auto x = leaf_from(rng, {4});
  NoGradGuard ng;
  auto y = sum_all(mul(x, x));
  CHECK_FALSE(y->requires_grad);
}

TEST_CASE("frozen parents are pruned from the tape") {
  Rng rng(43);
  auto c = make_const(Tensor::randn({4}, rng));
  auto y = sum_all(mul(c, c));
  CHECK_FALSE(y->requires_grad);
}

TEST_CASE("gradient accumulates across two backward calls") {
  Rng rng(47);
  auto x = leaf_from(rng, {3});
  auto loss1 = sum_all(x);
  backward(loss1);
  auto loss2 = sum_all(x);
  backward(loss2);
  for (int i = 0; i < 3; ++i) CHECK(x->grad[i] == doctest::Approx(2.0));
  zero_grad({x});
  CHECK(x->grad[0] == 0.0);
}

TEST_CASE("adam and sgd take descent steps") {
  Rng rng(53);
  auto x = make_param(Tensor::from({4.0, -3.0}));
  Adam adam(0.1);
  for (int i = 0; i < 200; ++i) {
    zero_grad({x});
    backward(sum_all(mul(x, x)));
    adam.step({x});
  }
  CHECK(std::abs(x->value[0]) < 0.5);
  CHECK(std::abs(x->value[1]) < 0.5);

  auto y = make_param(Tensor::from({2.0}));
  Sgd sgd(0.1, 0.9, 0.0);
  for (int i = 0; i < 100; ++i) {
    zero_grad({y});
    backward(sum_all(mul(y, y)));
    sgd.step({y});
  }
  CHECK(std::abs(y->value[0]) < 1e-3);
}
