#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "factory/autodiff.hpp"
#include "factory/rng.hpp"
#include "factory/tensor.hpp"

namespace factory {

/// He-style normal init: stddev = gain / sqrt(fan_in).
Tensor init_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain = 1.0);

/// Adam with StyleGAN-flavoured defaults (beta1 = 0, beta2 = 0.99).
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.0, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Var>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  struct State {
    Tensor m, v;
    std::int64_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<Node*, State> state_;
};

/// SGD with classical L2 weight decay and optional momentum.
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Var>& params);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, momentum_, weight_decay_;
  std::unordered_map<Node*, Tensor> velocity_;
};

}  // namespace factory
