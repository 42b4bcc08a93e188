#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vle/tensor.hpp"

namespace vle {

enum class Variant { vanilla, masked };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Total spatial downsampling of the default codec (three stride-2 levels).
inline constexpr int64_t kDefaultStride = 8;
/// Image elements per token element under the default configuration.
inline constexpr int64_t kCompressionRatio = 64;

/// Validated (B, C, H, W) image tensor with values in [0, 1].
class ImageBatch {
 public:
  ImageBatch() = default;
  /// Throws ContractError if the tensor is not rank 4, has B < 1, spatial
  /// dims not divisible by `stride`, or values outside [0, 1]; NumericError
  /// on non-finite values.
  explicit ImageBatch(Tensor<float> data, int64_t stride = kDefaultStride);

  const Tensor<float>& tensor() const { return data_; }
  int64_t batch() const { return data_.dim(0); }
  int64_t channels() const { return data_.dim(1); }
  int64_t height() const { return data_.dim(2); }
  int64_t width() const { return data_.dim(3); }

 private:
  Tensor<float> data_;
};

/// One latent tensor of the variable-length code. `z` is (B, C_z, H/s, W/s).
template <typename T>
struct Token {
  Tensor<T> z;
  int index = 0;  // 1-based position in the sequence
};

/// Single-channel (B, 1, H, W) mask. Per-step masks live in (0, 1); cumulative
/// masks are unbounded running sums.
template <typename T>
struct MaskBatch {
  Tensor<T> data;
  bool cumulative = false;
};

template <typename T>
struct TraceStep {
  int index = 0;
  Tensor<T> token;
  Tensor<T> output;      // decoder output for this token
  Tensor<T> cumulative;  // reconstruction after this token
  std::optional<Tensor<T>> transformed;
  std::optional<Tensor<T>> mask;
  std::optional<Tensor<T>> cumulative_mask;
};

/// Per-token record of an autoregressive run. Cumulative entries are running
/// sums accumulated strictly in step order.
template <typename T>
class BasicTrace {
 public:
  BasicTrace() = default;
  explicit BasicTrace(Variant v) : variant_(v) {}

  Variant variant() const { return variant_; }
  bool masked() const { return variant_ == Variant::masked; }
  int size() const { return static_cast<int>(steps_.size()); }
  bool empty() const { return steps_.empty(); }
  const std::vector<TraceStep<T>>& steps() const { return steps_; }
  /// Step n, 1-based.
  const TraceStep<T>& step(int n) const {
    require(n >= 1 && n <= size(), "trace step out of range");
    return steps_[static_cast<size_t>(n - 1)];
  }
  const TraceStep<T>& back() const { return steps_.back(); }

  void push(TraceStep<T> s) {
    require(s.index == size() + 1, "trace steps must be strictly ordered");
    steps_.push_back(std::move(s));
  }

  /// First k steps.
  BasicTrace prefix(int k) const {
    require(k >= 0 && k <= size(), "prefix longer than trace");
    BasicTrace t(variant_);
    t.steps_.assign(steps_.begin(), steps_.begin() + k);
    return t;
  }

 private:
  Variant variant_ = Variant::vanilla;
  std::vector<TraceStep<T>> steps_;
};

using ReconstructionTrace = BasicTrace<float>;

/// Mean squared difference over all elements, accumulated in double.
/// Throws ContractError on shape mismatch and NumericError on non-finite input.
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise a + b. Same-shape only.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Append one step: X̂_n = X̂_{n-1} + output (X̂_0 = 0) and, for masked traces,
/// M̂_n = M̂_{n-1} + mask. Returns the extended trace.
template <typename T>
BasicTrace<T> accumulate(BasicTrace<T> trace, const Tensor<T>& decoder_output,
                         const std::optional<Tensor<T>>& mask = std::nullopt,
                         Tensor<T> token = {}, std::optional<Tensor<T>> transformed = std::nullopt);

/// Clamp every element into [0, 1]; used only for metric reporting.
Tensor<float> clamp01(const Tensor<float>& t);

}  // namespace vle
