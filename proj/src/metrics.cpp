#include "vle/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

namespace vle {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += g[static_cast<size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t H, int64_t W, const std::vector<double>& g) {
  const int64_t k = static_cast<int64_t>(g.size());
  const int64_t Ho = H - k + 1, Wo = W - k + 1;
  std::vector<double> tmp(static_cast<size_t>(H * Wo));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * img[static_cast<size_t>(y * W + x + i)];
      tmp[static_cast<size_t>(y * Wo + x)] = s;
    }
  std::vector<double> out(static_cast<size_t>(Ho * Wo));
  for (int64_t y = 0; y < Ho; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * Wo + x)];
      out[static_cast<size_t>(y * Wo + x)] = s;
    }
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double ssim(const Tensor<float>& x, const Tensor<float>& y, const SsimParams& p) {
  require(x.shape() == y.shape(), "ssim shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  require(x.rank() == 4, "ssim expects (B,C,H,W) images");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H >= p.window && W >= p.window, "ssim: image " + shape_str(x.shape()) + " smaller than the " +
                                              std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  if (!x.all_finite() || !y.all_finite()) throw NumericError("ssim of non-finite input");
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const auto g = gaussian_window(p.window, p.sigma);
  const size_t plane = static_cast<size_t>(H * W);
  double total = 0.0;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
    for (size_t i = 0; i < plane; ++i) {
      a[i] = std::clamp(double(x[bc * H * W + static_cast<int64_t>(i)]), 0.0, 1.0);
      b[i] = std::clamp(double(y[bc * H * W + static_cast<int64_t>(i)]), 0.0, 1.0);
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, H, W, g), mu_b = filter_valid(b, H, W, g);
    const auto e_aa = filter_valid(aa, H, W, g), e_bb = filter_valid(bb, H, W, g), e_ab = filter_valid(ab, H, W, g);
    double s = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      s += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += s / double(mu_a.size());
  }
  return total / double(B * C);
}

double shannon_entropy(const Tensor<float>& image) {
  require(image.rank() == 3 || (image.rank() == 4 && image.dim(0) == 1), "shannon_entropy expects one image");
  const int64_t off = image.rank() == 4 ? 1 : 0;
  const int64_t C = image.dim(off), HW = image.dim(off + 1) * image.dim(off + 2);
  require(C == 1 || C == 3, "shannon_entropy supports 1 or 3 channels");
  std::array<int64_t, 256> hist{};
  for (int64_t i = 0; i < HW; ++i) {
    double v = C == 1 ? double(image[i])
                      : 0.299 * double(image[i]) + 0.587 * double(image[HW + i]) + 0.114 * double(image[2 * HW + i]);
    const auto q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    ++hist[static_cast<size_t>(q)];
  }
  double h = 0.0;
  for (int64_t n : hist) {
    if (n == 0) continue;
    const double pr = double(n) / double(HW);
    h -= pr * std::log2(pr);
  }
  return h == 0.0 ? 0.0 : h;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace vle
