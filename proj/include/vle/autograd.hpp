#pragma once

// Minimal reverse-mode differentiation over Tensor<T>. Every op records a
// closure that pushes its output gradient into its parents; `backward` walks
// the recorded graph in reverse topological order. Gradients of a leaf are
// accumulated across all uses.

#include <functional>
#include <memory>
#include <vector>

#include "vle/tensor.hpp"

namespace vle::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void add_grad(const Tensor<T>& g);
  Tensor<T>& grad_buffer();  // zero-allocates on first use
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int64_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  void zero_grad() { node_->grad = Tensor<T>(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Builds a result node; records `bw` only when some parent needs gradients.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bw);

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
template <typename T>
void backward(const Var<T>& root);

template <typename T> Var<T> detach(const Var<T>& a);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> silu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
/// exp(-a) elementwise.
template <typename T> Var<T> exp_neg(const Var<T>& a);
/// Mean of all elements, shape {1}.
template <typename T> Var<T> mean(const Var<T>& a);

/// x (B,C,H,W) times m (B,1,H,W), mask broadcast over channels.
template <typename T> Var<T> mul_mask(const Var<T>& x, const Var<T>& m);
/// Channel-axis concatenation of two (B,*,H,W) tensors.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
/// Channels [begin, begin+count) of a (B,C,H,W) tensor.
template <typename T> Var<T> slice_channels(const Var<T>& a, int64_t begin, int64_t count);
/// Nearest-neighbour 2x spatial upsampling.
template <typename T> Var<T> upsample2x(const Var<T>& a);

/// 2D cross-correlation. x (B,Cin,H,W), w (Cout,Cin,k,k), bias (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad);

/// Per-image mean of (a-b)^2 over C*H*W, shape {B}.
template <typename T> Var<T> mse_per_image(const Var<T>& a, const Var<T>& b);
/// Per-image mean of (m*(x-y))^2 over C*H*W with m (B,1,H,W) broadcast, shape {B}.
template <typename T> Var<T> masked_sq_per_image(const Var<T>& m, const Var<T>& x, const Var<T>& y);

}  // namespace vle::ag
