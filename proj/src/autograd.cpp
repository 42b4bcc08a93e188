#include "vle/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace vle::ag {

namespace {
thread_local bool g_grad_enabled = true;

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + " shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_mask_shape(const Shape& x, const Shape& m, const char* op) {
  require(x.size() == 4 && m.size() == 4 && m[0] == x[0] && m[1] == 1 && m[2] == x[2] && m[3] == x[3],
          std::string(op) + ": mask " + shape_str(m) + " incompatible with " + shape_str(x));
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::add_grad(const Tensor<T>& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  T* d = grad.data();
  const T* s = g.data();
  for (int64_t i = 0; i < grad.numel(); ++i) d[i] += s[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(bw);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void backward(const Var<T>& root) {
  require(root.defined() && root.value().numel() == 1, "backward needs a single-element root");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->add_grad(Tensor<T>(root.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>(a.value(), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->add_grad(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    Node<T>& pa = *n.parents[0];
    Node<T>& pb = *n.parents[1];
    if (pa.requires_grad) {
      Tensor<T>& g = pa.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor<T>& g = pb.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  Tensor<T> sig(a.shape());
  const T* x = a.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    sig[i] = T(1) / (T(1) + std::exp(-x[i]));
    out[i] = x[i] * sig[i];
  }
  return make_result<T>(std::move(out), {a}, [sig = std::move(sig)](Node<T>& n) {
    const Tensor<T>& x = n.parents[0]->value;
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T s = sig[i];
      g[i] += n.grad[i] * s * (T(1) + x[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * n.value[i] * (T(1) - n.value[i]);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x[i]);
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (T(1) - n.value[i] * n.value[i]);
  });
}

template <typename T>
Var<T> exp_neg(const Var<T>& a) {
  Tensor<T> out(a.shape());
  const T* x = a.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(-x[i]);
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i] * n.value[i];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  require(a.value().numel() > 0, "mean of empty tensor");
  double acc = 0.0;
  for (T v : a.value().vec()) acc += double(v);
  const double inv = 1.0 / double(a.value().numel());
  return make_result<T>(Tensor<T>({1}, T(acc * inv)), {a}, [inv](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    const T d = T(double(n.grad[0]) * inv);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mul_mask(const Var<T>& x, const Var<T>& m) {
  require_mask_shape(x.shape(), m.shape(), "mul_mask");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  const T* mv = m.value().data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i) out[(b * C + c) * HW + i] = xv[(b * C + c) * HW + i] * mv[b * HW + i];
  return make_result<T>(std::move(out), {x, m}, [B, C, HW](Node<T>& n) {
    Node<T>& px = *n.parents[0];
    Node<T>& pm = *n.parents[1];
    if (px.requires_grad) {
      Tensor<T>& g = px.grad_buffer();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < HW; ++i) g[(b * C + c) * HW + i] += n.grad[(b * C + c) * HW + i] * pm.value[b * HW + i];
    }
    if (pm.requires_grad) {
      Tensor<T>& g = pm.grad_buffer();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < HW; ++i) g[b * HW + i] += n.grad[(b * C + c) * HW + i] * px.value[(b * C + c) * HW + i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
          "concat_channels shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  const int64_t B = sa[0], Ca = sa[1], Cb = sb[1], HW = sa[2] * sa[3];
  Tensor<T> out({B, Ca + Cb, sa[2], sa[3]});
  for (int64_t i = 0; i < B; ++i) {
    std::copy_n(a.value().data() + i * Ca * HW, Ca * HW, out.data() + i * (Ca + Cb) * HW);
    std::copy_n(b.value().data() + i * Cb * HW, Cb * HW, out.data() + i * (Ca + Cb) * HW + Ca * HW);
  }
  return make_result<T>(std::move(out), {a, b}, [B, Ca, Cb, HW](Node<T>& n) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& p = *n.parents[k];
      if (!p.requires_grad) continue;
      const int64_t C = k == 0 ? Ca : Cb;
      const int64_t off = k == 0 ? 0 : Ca * HW;
      Tensor<T>& g = p.grad_buffer();
      for (int64_t i = 0; i < B; ++i) {
        const T* src = n.grad.data() + i * (Ca + Cb) * HW + off;
        T* dst = g.data() + i * C * HW;
        for (int64_t j = 0; j < C * HW; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int64_t begin, int64_t count) {
  const Shape& s = a.shape();
  require(s.size() == 4 && begin >= 0 && count >= 1 && begin + count <= s[1], "slice_channels out of range");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out({B, count, s[2], s[3]});
  for (int64_t i = 0; i < B; ++i)
    std::copy_n(a.value().data() + (i * C + begin) * HW, count * HW, out.data() + i * count * HW);
  return make_result<T>(std::move(out), {a}, [B, C, HW, begin, count](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < B; ++i) {
      const T* src = n.grad.data() + i * count * HW;
      T* dst = g.data() + (i * C + begin) * HW;
      for (int64_t j = 0; j < count * HW; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& a) {
  const Shape& s = a.shape();
  require(s.size() == 4, "upsample2x expects rank 4");
  const int64_t BC = s[0] * s[1], H = s[2], W = s[3];
  Tensor<T> out({s[0], s[1], 2 * H, 2 * W});
  const T* x = a.value().data();
  for (int64_t p = 0; p < BC; ++p)
    for (int64_t h = 0; h < 2 * H; ++h)
      for (int64_t w = 0; w < 2 * W; ++w) out[(p * 2 * H + h) * 2 * W + w] = x[(p * H + h / 2) * W + w / 2];
  return make_result<T>(std::move(out), {a}, [BC, H, W](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->grad_buffer();
    for (int64_t p = 0; p < BC; ++p)
      for (int64_t h = 0; h < 2 * H; ++h)
        for (int64_t w = 0; w < 2 * W; ++w) g[(p * H + h / 2) * W + w / 2] += n.grad[(p * 2 * H + h) * 2 * W + w];
  });
}

template <typename T>
Var<T> mse_per_image(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mse_per_image");
  require(a.shape().size() >= 1 && a.dim(0) >= 1, "mse_per_image needs a batch axis");
  const int64_t B = a.dim(0), D = a.value().numel() / B;
  Tensor<T> out({B});
  const T* x = a.value().data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < B; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < D; ++j) {
      const double d = double(x[i * D + j]) - double(y[i * D + j]);
      acc += d * d;
    }
    out[i] = T(acc / double(D));
  }
  return make_result<T>(std::move(out), {a, b}, [B, D](Node<T>& n) {
    Node<T>& pa = *n.parents[0];
    Node<T>& pb = *n.parents[1];
    for (int64_t i = 0; i < B; ++i) {
      const T k = T(2.0 * double(n.grad[i]) / double(D));
      for (int64_t j = 0; j < D; ++j) {
        const T d = k * (pa.value[i * D + j] - pb.value[i * D + j]);
        if (pa.requires_grad) pa.grad_buffer()[i * D + j] += d;
        if (pb.requires_grad) pb.grad_buffer()[i * D + j] -= d;
      }
    }
  });
}

template <typename T>
Var<T> masked_sq_per_image(const Var<T>& m, const Var<T>& x, const Var<T>& y) {
  require_same(x.shape(), y.shape(), "masked_sq_per_image");
  require_mask_shape(x.shape(), m.shape(), "masked_sq_per_image");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), D = C * HW;
  Tensor<T> out({B});
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t k = (b * C + c) * HW + i;
        const double v = double(m.value()[b * HW + i]) * (double(x.value()[k]) - double(y.value()[k]));
        acc += v * v;
      }
    out[b] = T(acc / double(D));
  }
  return make_result<T>(std::move(out), {m, x, y}, [B, C, HW, D](Node<T>& n) {
    Node<T>& pm = *n.parents[0];
    Node<T>& px = *n.parents[1];
    Node<T>& py = *n.parents[2];
    for (int64_t b = 0; b < B; ++b) {
      const T k2 = T(2.0 * double(n.grad[b]) / double(D));
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < HW; ++i) {
          const int64_t k = (b * C + c) * HW + i;
          const T mv = pm.value[b * HW + i];
          const T r = px.value[k] - py.value[k];
          if (pm.requires_grad) pm.grad_buffer()[b * HW + i] += k2 * mv * r * r;
          if (px.requires_grad) px.grad_buffer()[k] += k2 * mv * mv * r;
          if (py.requires_grad) py.grad_buffer()[k] -= k2 * mv * mv * r;
        }
    }
  });
}

#define VLE_INSTANTIATE(T)                                                                            \
  template struct Node<T>;                                                                            \
  template class Var<T>;                                                                              \
  template Var<T> make_result(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>);        \
  template void backward(const Var<T>&);                                                              \
  template Var<T> detach(const Var<T>&);                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> scale(const Var<T>&, T);                                                            \
  template Var<T> silu(const Var<T>&);                                                                \
  template Var<T> sigmoid(const Var<T>&);                                                             \
  template Var<T> tanh(const Var<T>&);                                                                \
  template Var<T> exp_neg(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                                \
  template Var<T> mul_mask(const Var<T>&, const Var<T>&);                                             \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                      \
  template Var<T> slice_channels(const Var<T>&, int64_t, int64_t);                                    \
  template Var<T> upsample2x(const Var<T>&);                                                          \
  template Var<T> mse_per_image(const Var<T>&, const Var<T>&);                                        \
  template Var<T> masked_sq_per_image(const Var<T>&, const Var<T>&, const Var<T>&);

VLE_INSTANTIATE(float)
VLE_INSTANTIATE(double)

}  // namespace vle::ag
