#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vle/autograd.hpp"
#include "vle/core.hpp"

namespace vle {

/// Architecture sizes. Encoder level l runs `residual_blocks_per_level`
/// residual blocks at width base_channels * min(2^l, 2) and then a stride-2
/// convolution; the decoder mirrors it with nearest upsampling. There are no
/// connections between encoder and decoder other than the token.
struct CodecConfig {
  int image_channels = 3;
  int base_channels = 32;
  int residual_blocks_per_level = 2;
  int levels = 3;
  int latent_channels = 3;
  bool mask_enabled = false;
  int lstm_hidden_channels = 16;
  bool conv_bias = true;  // encoder/decoder convolutions; false makes decode(encode(0)) = 0

  void validate() const;
  int64_t stride() const { return int64_t{1} << levels; }
  int width(int level) const { return base_channels * (level == 0 ? 1 : 2); }
  int encoder_in_channels() const { return image_channels + (mask_enabled ? 1 : 0); }
  Shape token_shape(int64_t batch, int64_t height, int64_t width) const;
  bool operator==(const CodecConfig&) const = default;
};

/// Ordered collection of named tensors.
template <typename T>
class ParamSet {
 public:
  using Item = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  int64_t parameter_count() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [n, t] : items_) out.add(n, t.template cast<U>());
    return out;
  }

  bool operator==(const ParamSet& o) const { return items_ == o.items_; }

 private:
  std::vector<Item> items_;
  std::map<std::string, size_t> index_;
};

template <typename T>
struct CodecParams {
  CodecConfig config;
  ParamSet<T> tensors;

  template <typename U>
  CodecParams<U> cast() const {
    return {config, tensors.template cast<U>()};
  }
};

/// Fan-in scaled uniform initialization; the final decoder convolution is
/// zero and bias-free so an untrained codec reconstructs 0.
template <typename T>
CodecParams<T> init_codec_params(const CodecConfig& config, uint64_t seed);

/// Exact sum of element counts of every parameter tensor.
template <typename T>
int64_t count_parameters(const CodecParams<T>& params) {
  return params.tensors.parameter_count();
}

/// Recurrent memory of the mask precursor: conv-LSTM hidden and cell maps.
template <typename T>
struct MemoryState {
  ag::Var<T> hidden;
  ag::Var<T> cell;
};

template <typename T>
struct PrecursorOutput {
  ag::Var<T> transformed;  // X̃_n, image shaped
  ag::Var<T> mask;         // M̃_n, (B,1,H,W) in (0,1)
  MemoryState<T> state;
};

/// What the autoregressive loops need from a codec.
template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  virtual ag::Var<T> encode(const ag::Var<T>& input) const = 0;
  virtual ag::Var<T> decode(const ag::Var<T>& token) const = 0;
  virtual bool mask_enabled() const { return false; }
  virtual int64_t stride() const = 0;
  virtual MemoryState<T> initial_state(int64_t batch, int64_t height, int64_t width) const;
  virtual PrecursorOutput<T> precursor(const MemoryState<T>& state, const ag::Var<T>& residual) const;
};

/// Codec parameters wrapped as graph leaves. With requires_grad the leaves
/// collect gradients, readable via `gradients()` after ag::backward.
template <typename T>
class BoundCodec : public Model<T> {
 public:
  BoundCodec(const CodecParams<T>& params, bool requires_grad);

  ag::Var<T> encode(const ag::Var<T>& input) const override;
  ag::Var<T> decode(const ag::Var<T>& token) const override;
  bool mask_enabled() const override { return config_.mask_enabled; }
  int64_t stride() const override { return config_.stride(); }
  MemoryState<T> initial_state(int64_t batch, int64_t height, int64_t width) const override;
  PrecursorOutput<T> precursor(const MemoryState<T>& state, const ag::Var<T>& residual) const override;

  const CodecConfig& config() const { return config_; }
  /// Gradients in parameter order; zeros for leaves nothing flowed into.
  ParamSet<T> gradients() const;

 private:
  const ag::Var<T>& p(const std::string& name) const;
  ag::Var<T> conv(const ag::Var<T>& x, const std::string& prefix, int stride, int pad) const;
  ag::Var<T> residual_block(const ag::Var<T>& x, const std::string& prefix) const;

  CodecConfig config_;
  std::vector<std::string> order_;
  std::map<std::string, ag::Var<T>> vars_;
};

/// Linear stand-in codec with decode(encode(x)) = alpha * x; tokens are
/// image shaped. Used to check loop mechanics against closed forms.
template <typename T>
class ScaledIdentityCodec : public Model<T> {
 public:
  explicit ScaledIdentityCodec(T alpha) : alpha_(alpha) {}
  ag::Var<T> encode(const ag::Var<T>& input) const override { return ag::scale(input, alpha_); }
  ag::Var<T> decode(const ag::Var<T>& token) const override { return ag::scale(token, T(1)); }
  int64_t stride() const override { return 1; }

 private:
  T alpha_;
};

/// Encoder input for the masked loop: concat(M̃ ⊙ X̃, M̃) along channels.
template <typename T>
ag::Var<T> condition(const ag::Var<T>& transformed, const ag::Var<T>& mask);

/// Tensor-level helpers over an inference (no-grad) binding.
template <typename T>
Token<T> encode(const CodecParams<T>& params, const Tensor<T>& input);
template <typename T>
Tensor<T> decode(const CodecParams<T>& params, const Token<T>& token);

}  // namespace vle
