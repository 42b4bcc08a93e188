#pragma once

#include <vector>

#include "vle/codec.hpp"

namespace vle {

struct LoopOptions {
  /// Treat X̂_{n-1} (and M̂_{n-1}) as constants when building step n.
  bool detach_steps = false;
};

/// A recorded autoregressive run whose entries are graph nodes, so losses
/// over it can be differentiated through every step.
template <typename T>
struct Unroll {
  Variant variant = Variant::vanilla;
  ag::Var<T> target;
  std::vector<ag::Var<T>> tokens;
  std::vector<ag::Var<T>> outputs;
  std::vector<ag::Var<T>> cumulative;
  std::vector<ag::Var<T>> transformed;
  std::vector<ag::Var<T>> masks;
  std::vector<ag::Var<T>> cumulative_masks;

  int size() const { return static_cast<int>(outputs.size()); }
  BasicTrace<T> trace() const;
};

/// z_n = E(X - X̂_{n-1}), X̂_n = X̂_{n-1} + D(z_n), X̂_0 = 0.
template <typename T>
Unroll<T> unroll_vanilla(const Model<T>& model, const ag::Var<T>& x, int n_tokens, LoopOptions opts = {});

/// (X̃_n, M̃_n) = S(X - X̂_{n-1}); z_n = E(concat(M̃_n ⊙ X̃_n, M̃_n));
/// X̂_n = X̂_{n-1} + D(z_n); M̂_n = M̂_{n-1} + M̃_n. Memory starts at zero.
template <typename T>
Unroll<T> unroll_masked(const Model<T>& model, const ag::Var<T>& x, int n_tokens, LoopOptions opts = {});

template <typename T>
Unroll<T> unroll(Variant variant, const Model<T>& model, const ag::Var<T>& x, int n_tokens, LoopOptions opts = {}) {
  return variant == Variant::masked ? unroll_masked(model, x, n_tokens, opts) : unroll_vanilla(model, x, n_tokens, opts);
}

/// Inference-only runs (no graph recorded).
template <typename T>
BasicTrace<T> run_vanilla(const Model<T>& model, const Tensor<T>& x, int n_tokens);
template <typename T>
BasicTrace<T> run_masked(const Model<T>& model, const Tensor<T>& x, int n_tokens);
template <typename T>
BasicTrace<T> run(Variant variant, const Model<T>& model, const Tensor<T>& x, int n_tokens) {
  return variant == Variant::masked ? run_masked(model, x, n_tokens) : run_vanilla(model, x, n_tokens);
}

template <typename T>
struct ThresholdResult {
  int n_needed = 0;  // n_cap + 1 when the threshold was never met
  bool reached = false;
  BasicTrace<T> trace;
};

/// Smallest n <= n_cap with mse(X, X̂_n) <= tau. Stops at the first hit;
/// otherwise returns the full n_cap trace with the n_cap + 1 sentinel.
template <typename T>
ThresholdResult<T> run_to_threshold(Variant variant, const Model<T>& model, const Tensor<T>& x, double tau, int n_cap);

}  // namespace vle
