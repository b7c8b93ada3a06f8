#include "factory/nn.hpp"

#include <cmath>

namespace factory {

Tensor init_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  return Tensor::randn(std::move(shape), rng, stddev);
}

void Adam::step(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (p->grad.empty()) continue;
    auto& s = state_[p.get()];
    if (s.m.empty()) {
      s.m = Tensor(p->value.shape());
      s.v = Tensor(p->value.shape());
    }
    ++s.t;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    const std::int64_t n = p->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double g = p->grad[i];
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Sgd::step(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (p->grad.empty()) continue;
    const std::int64_t n = p->value.size();
    if (momentum_ != 0.0) {
      auto& vel = velocity_[p.get()];
      if (vel.empty()) vel = Tensor(p->value.shape());
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = p->grad[i] + weight_decay_ * p->value[i];
        vel[i] = momentum_ * vel[i] + g;
        p->value[i] -= lr_ * vel[i];
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = p->grad[i] + weight_decay_ * p->value[i];
        p->value[i] -= lr_ * g;
      }
    }
  }
}

}  // namespace factory
