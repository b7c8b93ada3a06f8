#include "factory/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace factory {

namespace {

std::atomic<std::int64_t> g_next_id{1};
thread_local int g_no_grad_depth = 0;

Var new_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool rg = false;
  if (g_no_grad_depth == 0) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
  return grad;
}

Var make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

void backward(const Var& root) {
  if (root->value.size() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root->ensure_grad().fill(1.0);
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (!p->grad.empty()) p->grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return new_node(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      self.parents[k]->ensure_grad().add_inplace(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return new_node(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().add_inplace(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad().add_inplace(self.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return new_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const std::int64_t n = self.grad.size();
    if (self.parents[0]->requires_grad) {
      Tensor& ga = self.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gb = self.parents[1]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
  return new_node(std::move(out), {a}, [s](Node& self) {
    self.parents[0]->ensure_grad().add_inplace(self.grad, s);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + s;
  return new_node(std::move(out), {a}, [](Node& self) {
    self.parents[0]->ensure_grad().add_inplace(self.grad);
  });
}

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(const Var& a, Fwd fwd, Bwd dfdx_from_input) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(a->value[i]);
  return new_node(std::move(out), {a}, [dfdx_from_input](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor& gx = self.parents[0]->ensure_grad();
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += self.grad[i] * dfdx_from_input(x[i]);
  });
}

}  // namespace

Var relu(const Var& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x) { return x > 0 ? 1.0 : slope; });
}

Var tanh_act(const Var& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Var sigmoid_act(const Var& a) {
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return unary_op(a, sig, [sig](double x) {
    const double s = sig(x);
    return s * (1.0 - s);
  });
}

Var softplus_act(const Var& a) {
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return unary_op(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }, sig);
}

Var log_act(const Var& a) {
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var pow_const(const Var& a, double p) {
  return unary_op(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x) { return p * std::pow(x, p - 1.0); });
}

Var abs_act(const Var& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var sqrt_act(const Var& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double x) { return 0.5 / std::sqrt(x); });
}

Var clamp_act(const Var& a, double lo, double hi) {
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes");
  }
  const int N = a->value.dim(0), K = a->value.dim(1), M = b->value.dim(1);
  Tensor out({N, M});
  for (int i = 0; i < N; ++i) {
    const double* arow = a->value.data() + static_cast<std::size_t>(i) * K;
    double* orow = out.data() + static_cast<std::size_t>(i) * M;
    for (int k = 0; k < K; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b->value.data() + static_cast<std::size_t>(k) * M;
      for (int j = 0; j < M; ++j) orow[j] += av * brow[j];
    }
  }
  return new_node(std::move(out), {a, b}, [N, K, M](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor& ga = self.parents[0]->ensure_grad();
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
          double acc = 0;
          const double* grow = self.grad.data() + static_cast<std::size_t>(i) * M;
          const double* brow = bv.data() + static_cast<std::size_t>(k) * M;
          for (int j = 0; j < M; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::int64_t>(i) * K + k] += acc;
        }
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gb = self.parents[1]->ensure_grad();
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < N; ++i) {
          const double av_ik = av[static_cast<std::int64_t>(i) * K + k];
          if (av_ik == 0.0) continue;
          const double* grow = self.grad.data() + static_cast<std::size_t>(i) * M;
          double* gbrow = gb.data() + static_cast<std::size_t>(k) * M;
          for (int j = 0; j < M; ++j) gbrow[j] += av_ik * grow[j];
        }
    }
  });
}

Var bias_add(const Var& x, const Var& b) {
  const auto& xs = x->value.shape();
  const int C = b->value.dim(0);
  Tensor out = x->value;
  if (x->value.ndim() == 2) {
    if (xs[1] != C) throw std::invalid_argument("bias_add: size mismatch");
    for (int i = 0; i < xs[0]; ++i)
      for (int j = 0; j < C; ++j) out[static_cast<std::int64_t>(i) * C + j] += b->value[j];
  } else if (x->value.ndim() == 4) {
    if (xs[1] != C) throw std::invalid_argument("bias_add: channel mismatch");
    const std::int64_t hw = static_cast<std::int64_t>(xs[2]) * xs[3];
    for (int n = 0; n < xs[0]; ++n)
      for (int c = 0; c < C; ++c) {
        double* p = out.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
        const double bv = b->value[c];
        for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
      }
  } else {
    throw std::invalid_argument("bias_add: rank must be 2 or 4");
  }
  return new_node(std::move(out), {x, b}, [C](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().add_inplace(self.grad);
    if (!self.parents[1]->requires_grad) return;
    Tensor& gb = self.parents[1]->ensure_grad();
    const auto& gs = self.grad.shape();
    if (self.grad.ndim() == 2) {
      for (int i = 0; i < gs[0]; ++i)
        for (int j = 0; j < C; ++j) gb[j] += self.grad[static_cast<std::int64_t>(i) * C + j];
    } else {
      const std::int64_t hw = static_cast<std::int64_t>(gs[2]) * gs[3];
      for (int n = 0; n < gs[0]; ++n)
        for (int c = 0; c < C; ++c) {
          const double* p = self.grad.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
          double acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
          gb[c] += acc;
        }
    }
  });
}

Var mul_channels(const Var& x, const Var& s) {
  if (x->value.ndim() != 4 || s->value.ndim() != 2 || x->value.dim(0) != s->value.dim(0) ||
      x->value.dim(1) != s->value.dim(1)) {
    throw std::invalid_argument("mul_channels: need x [N,C,H,W] and s [N,C]");
  }
  const int N = x->value.dim(0), C = x->value.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(x->value.dim(2)) * x->value.dim(3);
  Tensor out(x->value.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double sv = s->value.at2(n, c);
      const double* px = x->value.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
      double* po = out.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) po[i] = px[i] * sv;
    }
  return new_node(std::move(out), {x, s}, [N, C, hw](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& sv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor& gx = self.parents[0]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const double s_nc = sv.at2(n, c);
          const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) gx[off + i] += self.grad[off + i] * s_nc;
        }
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gs = self.parents[1]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
          double acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) acc += self.grad[off + i] * xv[off + i];
          gs.at2(n, c) += acc;
        }
    }
  });
}

Var row_pixel_norm(const Var& x) {
  if (x->value.ndim() != 2) throw std::invalid_argument("row_pixel_norm: rank-2 input expected");
  const int N = x->value.dim(0), K = x->value.dim(1);
  constexpr double kEps = 1e-8;
  Tensor out({N, K});
  for (int i = 0; i < N; ++i) {
    const double* row = x->value.data() + static_cast<std::int64_t>(i) * K;
    double m = 0;
    for (int j = 0; j < K; ++j) m += row[j] * row[j];
    const double r = 1.0 / std::sqrt(m / K + kEps);
    double* orow = out.data() + static_cast<std::int64_t>(i) * K;
    for (int j = 0; j < K; ++j) orow[j] = row[j] * r;
  }
  return new_node(std::move(out), {x}, [N, K](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& gx = self.parents[0]->ensure_grad();
    for (int i = 0; i < N; ++i) {
      const double* row = xv.data() + static_cast<std::int64_t>(i) * K;
      const double* grow = self.grad.data() + static_cast<std::int64_t>(i) * K;
      double m = 0, gdotx = 0;
      for (int j = 0; j < K; ++j) m += row[j] * row[j];
      const double r = 1.0 / std::sqrt(m / K + kEps);
      for (int j = 0; j < K; ++j) gdotx += grow[j] * row[j];
      const double r3_over_k = r * r * r / K;
      double* gxrow = gx.data() + static_cast<std::int64_t>(i) * K;
      for (int j = 0; j < K; ++j) gxrow[j] += r * grow[j] - r3_over_k * row[j] * gdotx;
    }
  });
}

// ---------------------------------------------------------------------------
// convolution / spatial
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
  if (x->value.ndim() != 4 || w->value.ndim() != 4 || x->value.dim(1) != w->value.dim(1)) {
    throw std::invalid_argument("conv2d: need x [N,Cin,H,W], w [Cout,Cin,kh,kw]");
  }
  const int N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int Cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

  Tensor out({N, Cout, Ho, Wo});
  const double* xd = x->value.data();
  const double* wd = w->value.data();
  double* od = out.data();
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      double* oplane = od + (static_cast<std::int64_t>(n) * Cout + co) * Ho * Wo;
      for (int ci = 0; ci < Cin; ++ci) {
        const double* xplane = xd + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
        const double* wbase = wd + (static_cast<std::int64_t>(co) * Cin + ci) * kh * kw;
        for (int oy = 0; oy < Ho; ++oy) {
          double* orow = oplane + static_cast<std::int64_t>(oy) * Wo;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const double* xrow = xplane + static_cast<std::int64_t>(iy) * W;
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = wbase[ky * kw + kx];
              if (wv == 0.0) continue;
              const int ix0 = -pad + kx;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ix0 + ox * stride;
                if (ix < 0 || ix >= W) continue;
                orow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }

  return new_node(std::move(out), {x, w}, [=](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    const bool need_gx = self.parents[0]->requires_grad;
    const bool need_gw = self.parents[1]->requires_grad;
    Tensor* gx = need_gx ? &self.parents[0]->ensure_grad() : nullptr;
    Tensor* gw = need_gw ? &self.parents[1]->ensure_grad() : nullptr;
    const double* gd = self.grad.data();
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Cout; ++co) {
        const double* gplane = gd + (static_cast<std::int64_t>(n) * Cout + co) * Ho * Wo;
        for (int ci = 0; ci < Cin; ++ci) {
          const double* xplane = xv.data() + (static_cast<std::int64_t>(n) * Cin + ci) * H * W;
          const double* wbase = wv.data() + (static_cast<std::int64_t>(co) * Cin + ci) * kh * kw;
          double* gxplane = need_gx ? gx->data() + (static_cast<std::int64_t>(n) * Cin + ci) * H * W : nullptr;
          double* gwbase = need_gw ? gw->data() + (static_cast<std::int64_t>(co) * Cin + ci) * kh * kw : nullptr;
          for (int oy = 0; oy < Ho; ++oy) {
            const double* grow = gplane + static_cast<std::int64_t>(oy) * Wo;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xplane + static_cast<std::int64_t>(iy) * W;
              double* gxrow = need_gx ? gxplane + static_cast<std::int64_t>(iy) * W : nullptr;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix0 = -pad + kx;
                const double wtap = wbase[ky * kw + kx];
                double gw_acc = 0;
                for (int ox = 0; ox < Wo; ++ox) {
                  const int ix = ix0 + ox * stride;
                  if (ix < 0 || ix >= W) continue;
                  const double g = grow[ox];
                  if (need_gx) gxrow[ix] += g * wtap;
                  gw_acc += g * xrow[ix];
                }
                if (need_gw) gwbase[ky * kw + kx] += gw_acc;
              }
            }
          }
        }
      }
    }
  });
}

Var upsample2x_nearest(const Var& x) {
  if (x->value.ndim() != 4) throw std::invalid_argument("upsample2x_nearest: rank-4 input expected");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const double* xrow = x->value.data() + ((static_cast<std::int64_t>(n) * C + c) * H + y) * W;
        double* o0 = out.data() + ((static_cast<std::int64_t>(n) * C + c) * 2 * H + 2 * y) * 2 * W;
        double* o1 = o0 + 2 * W;
        for (int xx = 0; xx < W; ++xx) {
          const double v = xrow[xx];
          o0[2 * xx] = v;
          o0[2 * xx + 1] = v;
          o1[2 * xx] = v;
          o1[2 * xx + 1] = v;
        }
      }
  return new_node(std::move(out), {x}, [N, C, H, W](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
          double* gxrow = gx.data() + ((static_cast<std::int64_t>(n) * C + c) * H + y) * W;
          const double* g0 =
              self.grad.data() + ((static_cast<std::int64_t>(n) * C + c) * 2 * H + 2 * y) * 2 * W;
          const double* g1 = g0 + 2 * W;
          for (int xx = 0; xx < W; ++xx) {
            gxrow[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
          }
        }
  });
}

namespace {
struct BilinearTap {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-centre sampling; weights for each output index along one axis.
std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(out));
  const double s = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * s - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}
}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  if (x->value.ndim() != 4) throw std::invalid_argument("resize_bilinear: rank-4 input expected");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  Tensor out({N, C, out_h, out_w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xp = x->value.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      double* op = out.data() + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& t0 = ty[static_cast<std::size_t>(oy)];
        const double* r0 = xp + static_cast<std::int64_t>(t0.i0) * W;
        const double* r1 = xp + static_cast<std::int64_t>(t0.i1) * W;
        double* orow = op + static_cast<std::int64_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& t1 = tx[static_cast<std::size_t>(ox)];
          orow[ox] = t0.w0 * (t1.w0 * r0[t1.i0] + t1.w1 * r0[t1.i1]) +
                     t0.w1 * (t1.w0 * r1[t1.i0] + t1.w1 * r1[t1.i1]);
        }
      }
    }
  return new_node(std::move(out), {x}, [N, C, H, W, out_h, out_w, ty, tx](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double* gxp = gx.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
        const double* gp = self.grad.data() + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const auto& t0 = ty[static_cast<std::size_t>(oy)];
          const double* grow = gp + static_cast<std::int64_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const auto& t1 = tx[static_cast<std::size_t>(ox)];
            const double g = grow[ox];
            gxp[static_cast<std::int64_t>(t0.i0) * W + t1.i0] += g * t0.w0 * t1.w0;
            gxp[static_cast<std::int64_t>(t0.i0) * W + t1.i1] += g * t0.w0 * t1.w1;
            gxp[static_cast<std::int64_t>(t0.i1) * W + t1.i0] += g * t0.w1 * t1.w0;
            gxp[static_cast<std::int64_t>(t0.i1) * W + t1.i1] += g * t0.w1 * t1.w1;
          }
        }
      }
  });
}

Var avg_pool(const Var& x, int k) {
  if (x->value.ndim() != 4) throw std::invalid_argument("avg_pool: rank-4 input expected");
  const int N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (H % k != 0 || W % k != 0) throw std::invalid_argument("avg_pool: size not divisible by k");
  const int Ho = H / k, Wo = W / k;
  const double inv = 1.0 / (k * k);
  Tensor out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xp = x->value.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      double* op = out.data() + (static_cast<std::int64_t>(n) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              acc += xp[static_cast<std::int64_t>(oy * k + dy) * W + ox * k + dx];
          op[static_cast<std::int64_t>(oy) * Wo + ox] = acc * inv;
        }
    }
  return new_node(std::move(out), {x}, [N, C, H, W, Ho, Wo, k, inv](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double* gxp = gx.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
        const double* gp = self.grad.data() + (static_cast<std::int64_t>(n) * C + c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const double g = gp[static_cast<std::int64_t>(oy) * Wo + ox] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                gxp[static_cast<std::int64_t>(oy * k + dy) * W + ox * k + dx] += g;
          }
      }
  });
}

// ---------------------------------------------------------------------------
// reductions / shape
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return new_node(std::move(out), {a}, [](Node& self) {
    const double g = self.grad[0];
    Tensor& ga = self.parents[0]->ensure_grad();
    const std::int64_t n = ga.size();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  return scale(sum_all(a), inv);
}

Var dot(const Var& a, const Var& b) {
  if (a->value.size() != b->value.size()) throw std::invalid_argument("dot: size mismatch");
  double acc = 0;
  const std::int64_t n = a->value.size();
  for (std::int64_t i = 0; i < n; ++i) acc += a->value[i] * b->value[i];
  return new_node(Tensor::scalar(acc), {a, b}, [](Node& self) {
    const double g = self.grad[0];
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().add_inplace(bv, g);
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad().add_inplace(av, g);
  });
}

Var softmax_1d(const Var& a) {
  if (a->value.ndim() != 1) throw std::invalid_argument("softmax_1d: rank-1 input expected");
  const std::int64_t n = a->value.size();
  Tensor out(a->value.shape());
  double mx = a->value.max();
  double z = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(a->value[i] - mx);
    z += out[i];
  }
  for (std::int64_t i = 0; i < n; ++i) out[i] /= z;
  Tensor y = out;
  return new_node(std::move(out), {a}, [y = std::move(y)](Node& self) {
    Tensor& ga = self.parents[0]->ensure_grad();
    const std::int64_t n = ga.size();
    double gy = 0;
    for (std::int64_t i = 0; i < n; ++i) gy += self.grad[i] * y[i];
    for (std::int64_t i = 0; i < n; ++i) ga[i] += y[i] * (self.grad[i] - gy);
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (shape_size(shape) != a->value.size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(shape);
  for (std::int64_t i = 0; i < a->value.size(); ++i) out[i] = a->value[i];
  return new_node(std::move(out), {a}, [](Node& self) {
    Tensor& ga = self.parents[0]->ensure_grad();
    const std::int64_t n = ga.size();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
  });
}

Var select_batch(const Var& x, int n) {
  if (x->value.ndim() < 2) throw std::invalid_argument("select_batch: rank >= 2 expected");
  if (n < 0 || n >= x->value.dim(0)) throw std::invalid_argument("select_batch: index out of range");
  std::vector<int> shape(x->value.shape().begin() + 1, x->value.shape().end());
  const std::int64_t stride = shape_size(shape);
  Tensor out(shape);
  const double* src = x->value.data() + static_cast<std::int64_t>(n) * stride;
  for (std::int64_t i = 0; i < stride; ++i) out[i] = src[i];
  return new_node(std::move(out), {x}, [n, stride](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    double* dst = gx.data() + static_cast<std::int64_t>(n) * stride;
    for (std::int64_t i = 0; i < stride; ++i) dst[i] += self.grad[i];
  });
}

Var concat_1d(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_1d: empty input");
  std::int64_t total = 0;
  for (const auto& p : parts) total += p->value.size();
  Tensor out({static_cast<int>(total)});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    for (std::int64_t i = 0; i < p->value.size(); ++i) out[off + i] = p->value[i];
    off += p->value.size();
  }
  return new_node(std::move(out), parts, [](Node& self) {
    std::int64_t off = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        Tensor& gp = p->ensure_grad();
        for (std::int64_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
  const int N = parts[0]->value.dim(0), H = parts[0]->value.dim(2), W = parts[0]->value.dim(3);
  int Ctot = 0;
  for (const auto& p : parts) {
    if (p->value.ndim() != 4 || p->value.dim(0) != N || p->value.dim(2) != H || p->value.dim(3) != W)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    Ctot += p->value.dim(1);
  }
  Tensor out({N, Ctot, H, W});
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const int C = p->value.dim(1);
      const double* src = p->value.data() + static_cast<std::int64_t>(n) * C * hw;
      double* dst = out.data() + (static_cast<std::int64_t>(n) * Ctot + c0) * hw;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(C) * hw; ++i) dst[i] = src[i];
      c0 += C;
    }
  }
  return new_node(std::move(out), parts, [N, Ctot, hw](Node& self) {
    for (int n = 0; n < N; ++n) {
      int c0 = 0;
      for (auto& p : self.parents) {
        const int C = p->value.dim(1);
        if (p->requires_grad) {
          Tensor& gp = p->ensure_grad();
          double* dst = gp.data() + static_cast<std::int64_t>(n) * C * hw;
          const double* src = self.grad.data() + (static_cast<std::int64_t>(n) * Ctot + c0) * hw;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(C) * hw; ++i) dst[i] += src[i];
        }
        c0 += C;
      }
    }
  });
}

Var detach(const Var& a) { return make_const(a->value); }

}  // namespace factory
