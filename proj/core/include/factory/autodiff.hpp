#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "factory/tensor.hpp"

namespace factory {

/// Reverse-mode automatic differentiation on a dynamically built tape.
///
/// Every op returns a fresh Node holding the forward value. Nodes created
/// from at least one grad-requiring parent carry a backward closure; all
/// others are plain values, so forward passes through frozen weights build
/// no tape at all. backward() walks reachable nodes in reverse creation
/// order, which is a valid topological order because an op's node is always
/// created after its parents.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by ensure_grad()
  bool requires_grad = false;
  std::int64_t id = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

Var make_param(Tensor value);
Var make_const(Tensor value);

/// Run reverse-mode accumulation from a scalar root. Gradients accumulate
/// into .grad of every reachable grad-requiring node (notably parameters).
void backward(const Var& root);

void zero_grad(const std::vector<Var>& params);

/// While a guard is alive on this thread, ops build values only (no tape).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh_act(const Var& a);
Var sigmoid_act(const Var& a);
Var softplus_act(const Var& a);
Var log_act(const Var& a);
Var pow_const(const Var& a, double p);
Var abs_act(const Var& a);
Var sqrt_act(const Var& a);
Var clamp_act(const Var& a, double lo, double hi);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);     // [N,K] x [K,M] -> [N,M]
Var bias_add(const Var& x, const Var& b);   // [N,M]+[M] or [N,C,H,W]+[C]
Var mul_channels(const Var& x, const Var& s);  // [N,C,H,W] * [N,C]
Var row_pixel_norm(const Var& x);           // per-row x / sqrt(mean(x^2)+1e-8)

// ---- convolution / spatial ----
Var conv2d(const Var& x, const Var& w, int stride, int pad);
Var upsample2x_nearest(const Var& x);
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var avg_pool(const Var& x, int k);          // non-overlapping k x k mean

// ---- reductions / shape ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var dot(const Var& a, const Var& b);        // flattened inner product -> scalar
Var softmax_1d(const Var& a);               // 1-D
Var reshape(const Var& a, std::vector<int> shape);
Var select_batch(const Var& x, int n);      // drop leading axis at index n
Var concat_1d(const std::vector<Var>& parts);
Var concat_channels(const std::vector<Var>& parts);  // 4-D along C
Var detach(const Var& a);

}  // namespace factory
