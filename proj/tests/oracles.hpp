#pragma once

// Independent reference computations for tests. Nothing here calls into the
// library's loss, metric, or autograd code.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vle/codec.hpp"

namespace vle::oracle {

struct Img {
  int B, C, H, W;
  std::vector<double> v;
  double at(int b, int c, int h, int w) const { return v[((size_t(b) * C + c) * H + h) * W + w]; }
};

template <typename T>
Img from(const Tensor<T>& t) {
  Img i{int(t.dim(0)), int(t.dim(1)), int(t.dim(2)), int(t.dim(3)), {}};
  for (T x : t.vec()) i.v.push_back(double(x));
  return i;
}

inline double mse_loop(const Img& a, const Img& b) {
  double batch = 0.0;
  for (int n = 0; n < a.B; ++n) {
    double s = 0.0;
    for (int c = 0; c < a.C; ++c)
      for (int h = 0; h < a.H; ++h)
        for (int w = 0; w < a.W; ++w) {
          const double d = a.at(n, c, h, w) - b.at(n, c, h, w);
          s += d * d;
        }
    batch += s / (a.C * a.H * a.W);
  }
  return batch / a.B;
}

inline double exp_neg_mse_loop(const Img& a, const Img& b) {
  double batch = 0.0;
  for (int n = 0; n < a.B; ++n) {
    double s = 0.0;
    for (int c = 0; c < a.C; ++c)
      for (int h = 0; h < a.H; ++h)
        for (int w = 0; w < a.W; ++w) {
          const double d = a.at(n, c, h, w) - b.at(n, c, h, w);
          s += d * d;
        }
    batch += std::exp(-s / (a.C * a.H * a.W));
  }
  return batch / a.B;
}

inline double masked_rec_loop(const Img& m, const Img& x, const Img& r) {
  double batch = 0.0;
  for (int n = 0; n < x.B; ++n) {
    double s = 0.0;
    for (int c = 0; c < x.C; ++c)
      for (int h = 0; h < x.H; ++h)
        for (int w = 0; w < x.W; ++w) {
          const double d = m.at(n, 0, h, w) * (x.at(n, c, h, w) - r.at(n, c, h, w));
          s += d * d;
        }
    batch += s / (x.C * x.H * x.W);
  }
  return batch / x.B;
}

inline Img zeros_like(const Img& a) { return {a.B, a.C, a.H, a.W, std::vector<double>(a.v.size(), 0.0)}; }

inline Img plus(const Img& a, const Img& b) {
  Img o = a;
  for (size_t i = 0; i < o.v.size(); ++i) o.v[i] += b.v[i];
  return o;
}

/// (1/N) Σ_n mse(X, Σ_{k<=n} out_k)
inline double vanilla_loss(const Img& x, const std::vector<Img>& outputs) {
  Img cum = zeros_like(x);
  double total = 0.0;
  for (const auto& o : outputs) {
    cum = plus(cum, o);
    total += mse_loop(x, cum);
  }
  return total / outputs.size();
}

/// (1/N) Σ_n [masked_rec(M_n, X, X̂_n) + exp(-mse(M_n, M̂_{n-1}))]
inline double combined_loss(const Img& x, const std::vector<Img>& outputs, const std::vector<Img>& masks) {
  Img cum = zeros_like(x);
  Img cum_mask = zeros_like(masks.front());
  double total = 0.0;
  for (size_t n = 0; n < outputs.size(); ++n) {
    cum = plus(cum, outputs[n]);
    total += masked_rec_loop(masks[n], x, cum) + exp_neg_mse_loop(masks[n], cum_mask);
    cum_mask = plus(cum_mask, masks[n]);
  }
  return total / outputs.size();
}

/// Direct SSIM: for every fully contained window position, weighted moments
/// are summed straight from the 2D Gaussian kernel.
inline double ssim_direct(const Img& x, const Img& y, int win = 11, double sigma = 1.5) {
  std::vector<double> k(size_t(win) * win);
  double ks = 0.0;
  const double c = (win - 1) / 2.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      k[size_t(i) * win + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      ks += k[size_t(i) * win + j];
    }
  for (auto& v : k) v /= ks;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const auto cl = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  double total = 0.0;
  for (int b = 0; b < x.B; ++b)
    for (int ch = 0; ch < x.C; ++ch) {
      double acc = 0.0;
      int count = 0;
      for (int oy = 0; oy + win <= x.H; ++oy)
        for (int ox = 0; ox + win <= x.W; ++ox) {
          double mx = 0, my = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              mx += k[size_t(i) * win + j] * cl(x.at(b, ch, oy + i, ox + j));
              my += k[size_t(i) * win + j] * cl(y.at(b, ch, oy + i, ox + j));
            }
          double vx = 0, vy = 0, cxy = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              const double dx = cl(x.at(b, ch, oy + i, ox + j)) - mx;
              const double dy = cl(y.at(b, ch, oy + i, ox + j)) - my;
              vx += k[size_t(i) * win + j] * dx * dx;
              vy += k[size_t(i) * win + j] * dy * dy;
              cxy += k[size_t(i) * win + j] * dx * dy;
            }
          acc += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
          ++count;
        }
      total += acc / count;
    }
  return total / (x.B * x.C);
}

/// P(clamp(round(|g|), n_min, n_cap) = k) for g ~ N(mu, sigma), by composite
/// Simpson integration of the folded-normal density over each rounding bin.
inline std::vector<double> folded_normal_bins(double mu, double sigma, int n_min, int n_cap) {
  const auto density = [&](double y) {
    const double a = (y - mu) / sigma, b = (y + mu) / sigma;
    return (std::exp(-0.5 * a * a) + std::exp(-0.5 * b * b)) / (sigma * std::sqrt(2.0 * M_PI));
  };
  const auto integrate = [&](double lo, double hi) {
    const int n = 2000;
    const double h = (hi - lo) / n;
    double s = density(lo) + density(hi);
    for (int i = 1; i < n; ++i) s += density(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
  };
  std::vector<double> p(size_t(n_cap - n_min + 1), 0.0);
  const double upper = std::abs(mu) + 12.0 * sigma + n_cap;
  for (int k = 0; k <= int(std::ceil(upper)); ++k) {
    const double lo = std::max(0.0, k - 0.5), hi = k + 0.5;
    const int slot = std::min(std::max(k, n_min), n_cap) - n_min;
    p[size_t(slot)] += integrate(lo, hi);
  }
  return p;
}

/// Central finite difference of f at coordinate i of parameter `name`.
inline double central_difference(const std::function<double(const CodecParams<double>&)>& f, CodecParams<double> p,
                                 const std::string& name, int64_t i, double h) {
  double& x = p.tensors.get(name)[i];
  const double x0 = x;
  x = x0 + h;
  const double fp = f(p);
  x = x0 - h;
  const double fm = f(p);
  return (fp - fm) / (2.0 * h);
}

template <typename T>
void randomize(CodecParams<T>& p, uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [n, t] : p.tensors.items())
    for (auto& v : t.vec()) v = T(u(rng));
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(s));
  for (auto& v : t.vec()) v = T(u(rng));
  return t;
}

}  // namespace vle::oracle
