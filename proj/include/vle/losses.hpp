#pragma once

#include <vector>

#include "vle/loop.hpp"

namespace vle {

struct StepTerms {
  int n = 0;
  double rec = 0.0;
  double mask = 0.0;
  double distinct = 0.0;  // reconstruction distinctness, only when enabled
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<StepTerms> per_step;
  int n_max_used = 0;
};

struct LossOptions {
  /// Weight of the mask distinctness term in the combined objective.
  double lambda_mask = 1.0;
  /// Add exp(-mse(D(z_n), X̂_{n-1})) per step (ablation; off by default).
  bool reconstruction_distinctness = false;
};

/// Differentiable loss together with its scalar breakdown.
template <typename T>
struct LossGraph {
  ag::Var<T> total;
  LossBreakdown breakdown;
};

// All image-space means use D = C*H*W per image and then average over the batch.

/// mean_b exp(-mse_b(current, cumulative_previous)); undefined previous means 0.
template <typename T>
ag::Var<T> distinctness_loss(const ag::Var<T>& current, const ag::Var<T>& cumulative_previous);
/// Same form applied to a per-step mask and the previous cumulative mask.
template <typename T>
ag::Var<T> mask_distinctness_loss(const ag::Var<T>& mask, const ag::Var<T>& cumulative_mask_previous);
/// mean_b (1/D) ||M ⊙ (X - X̂)||² with the single-channel mask broadcast over channels.
template <typename T>
ag::Var<T> masked_rec_loss(const ag::Var<T>& mask, const ag::Var<T>& target, const ag::Var<T>& recon);

/// (1/n_max) Σ_n mse(X, X̂_n).
template <typename T>
LossGraph<T> vanilla_loss(const Unroll<T>& u, const LossOptions& opts = {});
/// (1/n_max) Σ_n (masked_rec_n + λ · mask_distinctness_n).
template <typename T>
LossGraph<T> combined_loss(const Unroll<T>& u, const LossOptions& opts = {});

/// Objective matching the unroll's variant.
template <typename T>
LossGraph<T> objective(const Unroll<T>& u, const LossOptions& opts = {}) {
  return u.variant == Variant::masked ? combined_loss(u, opts) : vanilla_loss(u, opts);
}

// Value-only forms over recorded traces.

template <typename T>
double distinctness_loss(const Tensor<T>& current, const Tensor<T>& cumulative_previous);
template <typename T>
double mask_distinctness_loss(const MaskBatch<T>& mask, const MaskBatch<T>& cumulative_mask_previous);
template <typename T>
double masked_rec_loss(const MaskBatch<T>& mask, const Tensor<T>& target, const Tensor<T>& recon);
template <typename T>
LossBreakdown vanilla_loss(const BasicTrace<T>& trace, const Tensor<T>& target, const LossOptions& opts = {});
template <typename T>
LossBreakdown combined_loss(const BasicTrace<T>& trace, const Tensor<T>& target, const LossOptions& opts = {});

}  // namespace vle
