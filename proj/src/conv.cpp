#include <algorithm>
#include <memory>

#include <Eigen/Core>

#include "vle/autograd.hpp"

namespace vle::ag {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int64_t B, Cin, H, W, Cout, k, stride, pad, Ho, Wo;
  int64_t K() const { return Cin * k * k; }
  int64_t N() const { return Ho * Wo; }
};

// col is K x (B*N): column b*N + (oh*Wo + ow), row (c*k + kh)*k + kw.
// Output columns [lo, hi) read input column ow*stride - pad + kw inside [0, W).
inline void valid_range(const ConvGeom& g, int64_t kw, int64_t& lo, int64_t& hi) {
  const int64_t off = kw - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = g.W - off <= 0 ? 0 : std::min(g.Wo, (g.W - off + g.stride - 1) / g.stride);
  lo = std::min(lo, hi);
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t cols = g.B * g.N();
  for (int64_t c = 0; c < g.Cin; ++c)
    for (int64_t kh = 0; kh < g.k; ++kh)
      for (int64_t kw = 0; kw < g.k; ++kw) {
        T* row = col + ((c * g.k + kh) * g.k + kw) * cols;
        int64_t lo, hi;
        valid_range(g, kw, lo, hi);
        const int64_t off = kw - g.pad;
        for (int64_t b = 0; b < g.B; ++b) {
          const T* img = x + (b * g.Cin + c) * g.H * g.W;
          T* dst = row + b * g.N();
          for (int64_t oh = 0; oh < g.Ho; ++oh) {
            T* d = dst + oh * g.Wo;
            const int64_t ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.H) {
              std::fill_n(d, g.Wo, T(0));
              continue;
            }
            const T* src = img + ih * g.W + off;
            std::fill_n(d, lo, T(0));
            if (g.stride == 1) {
              std::copy(src + lo, src + hi, d + lo);
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) d[ow] = src[ow * g.stride];
            }
            std::fill(d + hi, d + g.Wo, T(0));
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const int64_t cols = g.B * g.N();
  for (int64_t c = 0; c < g.Cin; ++c)
    for (int64_t kh = 0; kh < g.k; ++kh)
      for (int64_t kw = 0; kw < g.k; ++kw) {
        const T* row = col + ((c * g.k + kh) * g.k + kw) * cols;
        int64_t lo, hi;
        valid_range(g, kw, lo, hi);
        const int64_t off = kw - g.pad;
        for (int64_t b = 0; b < g.B; ++b) {
          T* img = dx + (b * g.Cin + c) * g.H * g.W;
          const T* src = row + b * g.N();
          for (int64_t oh = 0; oh < g.Ho; ++oh) {
            const int64_t ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.H) continue;
            T* d = img + ih * g.W + off;
            const T* s = src + oh * g.Wo;
            for (int64_t ow = lo; ow < hi; ++ow) d[ow * g.stride] += s[ow];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3],
          "conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  g.Ho = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.k) / stride + 1;
  require(g.Ho >= 1 && g.Wo >= 1, "conv2d: output would be empty");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{g.Cout}, "conv2d: bias must be (Cout)");

  const int64_t K = g.K(), cols = g.B * g.N();
  std::unique_ptr<T[]> col(new T[static_cast<size_t>(K * cols)]);
  im2col(x.value().data(), g, col.get());
  RowMat<T> prod(g.Cout, cols);
  Eigen::Map<const RowMat<T>> wm(w.value().data(), g.Cout, K);
  Eigen::Map<const RowMat<T>> cm(col.get(), K, cols);
  prod.noalias() = wm * cm;

  Tensor<T> out({g.B, g.Cout, g.Ho, g.Wo});
  for (int64_t b = 0; b < g.B; ++b)
    for (int64_t o = 0; o < g.Cout; ++o) {
      const T bv = has_bias ? bias.value()[o] : T(0);
      const T* src = prod.data() + o * cols + b * g.N();
      T* dst = out.data() + (b * g.Cout + o) * g.N();
      for (int64_t i = 0; i < g.N(); ++i) dst[i] = src[i] + bv;
    }

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [g, has_bias](Node<T>& n) {
    Node<T>& px = *n.parents[0];
    Node<T>& pw = *n.parents[1];
    const int64_t K = g.K(), cols = g.B * g.N();
    // Gather dout into Cout x (B*N) to match the column layout.
    RowMat<T> dout(g.Cout, cols);
    for (int64_t b = 0; b < g.B; ++b)
      for (int64_t o = 0; o < g.Cout; ++o)
        std::copy_n(n.grad.data() + (b * g.Cout + o) * g.N(), g.N(), dout.data() + o * cols + b * g.N());
    if (has_bias && n.parents[2]->requires_grad) {
      Tensor<T>& gb = n.parents[2]->grad_buffer();
      for (int64_t o = 0; o < g.Cout; ++o) {
        T acc = T(0);
        for (int64_t i = 0; i < cols; ++i) acc += dout(o, i);
        gb[o] += acc;
      }
    }
    Eigen::Map<const RowMat<T>> wm(pw.value.data(), g.Cout, K);
    if (pw.requires_grad) {
      std::unique_ptr<T[]> col(new T[static_cast<size_t>(K * cols)]);
      im2col(px.value.data(), g, col.get());
      Eigen::Map<const RowMat<T>> cm(col.get(), K, cols);
      Eigen::Map<RowMat<T>> gw(pw.grad_buffer().data(), g.Cout, K);
      gw.noalias() += dout * cm.transpose();
    }
    if (px.requires_grad) {
      RowMat<T> dcol(K, cols);
      dcol.noalias() = wm.transpose() * dout;
      col2im_add(dcol.data(), g, px.grad_buffer().data());
    }
  });
}

template Var<float> conv2d(const Var<float>&, const Var<float>&, const Var<float>&, int, int);
template Var<double> conv2d(const Var<double>&, const Var<double>&, const Var<double>&, int, int);

}  // namespace vle::ag
