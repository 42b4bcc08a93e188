#pragma once

#include <optional>
#include <span>

#include "vle/core.hpp"

namespace vle {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean local SSIM over all fully contained Gaussian windows, then averaged
/// over channels and batch. Inputs are clamped to [0, 1] first. Throws
/// ContractError on shape mismatch or images smaller than the window.
double ssim(const Tensor<float>& x, const Tensor<float>& y, const SsimParams& p = {});

/// Base-2 entropy of the 256-bin gray-level histogram of one image
/// ((1,C,H,W) or (C,H,W)). Three-channel images are reduced with luma
/// weights 0.299/0.587/0.114 first; values are quantized by round(255 v).
double shannon_entropy(const Tensor<float>& image);

/// Spearman rank correlation with average ranks for ties; nullopt when
/// fewer than two points or either side is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

}  // namespace vle
