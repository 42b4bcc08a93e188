#include "vle/codec.hpp"

#include <cmath>
#include <random>

namespace vle {

void CodecConfig::validate() const {
  require(image_channels >= 1, "image_channels must be >= 1");
  require(base_channels >= 1, "base_channels must be >= 1");
  require(residual_blocks_per_level >= 0, "residual_blocks_per_level must be >= 0");
  require(levels >= 0 && levels <= 8, "levels must lie in [0, 8]");
  require(latent_channels >= 1, "latent_channels must be >= 1");
  require(lstm_hidden_channels >= 1, "lstm_hidden_channels must be >= 1");
}

Shape CodecConfig::token_shape(int64_t batch, int64_t height, int64_t w) const {
  require(height % stride() == 0 && w % stride() == 0,
          "spatial size " + std::to_string(height) + "x" + std::to_string(w) + " not divisible by stride " +
              std::to_string(stride()));
  return {batch, latent_channels, height / stride(), w / stride()};
}

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> t) {
  require(!contains(name), "duplicate parameter " + name);
  index_[name] = items_.size();
  items_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
Tensor<T>& ParamSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter " + name);
  return items_[it->second].second;
}

template <typename T>
const Tensor<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter " + name);
  return items_[it->second].second;
}

template <typename T>
int64_t ParamSet<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& item : items_) n += item.second.numel();
  return n;
}

namespace {

// Parameter layout shared by init and binding: (name, shape, fan_in, bias?).
struct ConvSpec {
  std::string prefix;
  int out, in, k;
  bool bias;
  bool zero;
};

std::vector<ConvSpec> layout(const CodecConfig& c) {
  std::vector<ConvSpec> s;
  const int L = c.levels;
  const auto resblocks = [&](const std::string& pre, int ch) {
    for (int j = 0; j < c.residual_blocks_per_level; ++j) {
      const std::string rb = pre + ".rb" + std::to_string(j);
      s.push_back({rb + ".c1", ch, ch, 3, c.conv_bias, false});
      s.push_back({rb + ".c2", ch, ch, 3, c.conv_bias, false});
    }
  };
  s.push_back({"enc.in", c.width(0), c.encoder_in_channels(), 3, c.conv_bias, false});
  for (int l = 0; l < L; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    resblocks(pre, c.width(l));
    s.push_back({pre + ".down", c.width(l + 1), c.width(l), 3, c.conv_bias, false});
  }
  s.push_back({"enc.out", c.latent_channels, c.width(L), 3, c.conv_bias, false});

  s.push_back({"dec.in", c.width(L), c.latent_channels, 3, c.conv_bias, false});
  for (int l = L - 1; l >= 0; --l) {
    const std::string pre = "dec.l" + std::to_string(l);
    s.push_back({pre + ".up", c.width(l), c.width(l + 1), 3, c.conv_bias, false});
    resblocks(pre, c.width(l));
  }
  s.push_back({"dec.out", c.image_channels, c.width(0), 3, false, true});

  if (c.mask_enabled) {
    const int P = c.base_channels, Hd = c.lstm_hidden_channels;
    s.push_back({"pre.in", P, c.image_channels, 3, true, false});
    s.push_back({"pre.rb.c1", P, P, 3, true, false});
    s.push_back({"pre.rb.c2", P, P, 3, true, false});
    s.push_back({"pre.lstm", 4 * Hd, P + Hd, 3, true, false});
    s.push_back({"pre.mask", 1, Hd, 1, true, false});
    s.push_back({"pre.xform", c.image_channels, Hd, 1, true, false});
  }
  return s;
}

}  // namespace

template <typename T>
CodecParams<T> init_codec_params(const CodecConfig& config, uint64_t seed) {
  config.validate();
  CodecParams<T> out{config, {}};
  std::mt19937_64 rng(seed);
  for (const auto& spec : layout(config)) {
    const int fan_in = spec.in * spec.k * spec.k;
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> w({spec.out, spec.in, spec.k, spec.k});
    if (!spec.zero)
      for (auto& v : w.vec()) v = T(u(rng));
    out.tensors.add(spec.prefix + ".w", std::move(w));
    if (spec.bias) {
      Tensor<T> b({spec.out});
      if (!spec.zero)
        for (auto& v : b.vec()) v = T(u(rng));
      out.tensors.add(spec.prefix + ".b", std::move(b));
    }
  }
  return out;
}

template <typename T>
MemoryState<T> Model<T>::initial_state(int64_t, int64_t, int64_t) const {
  return {};
}

template <typename T>
PrecursorOutput<T> Model<T>::precursor(const MemoryState<T>&, const ag::Var<T>&) const {
  throw ContractError("precursor called on a codec without mask support");
}

template <typename T>
BoundCodec<T>::BoundCodec(const CodecParams<T>& params, bool requires_grad) : config_(params.config) {
  config_.validate();
  for (const auto& spec : layout(config_)) {
    for (const char* suffix : {".w", ".b"}) {
      if (std::string(suffix) == ".b" && !spec.bias) continue;
      const std::string name = spec.prefix + suffix;
      const Tensor<T>& t = params.tensors.get(name);
      const Shape want = suffix[1] == 'w' ? Shape{spec.out, spec.in, spec.k, spec.k} : Shape{spec.out};
      require(t.shape() == want, "parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                     shape_str(want));
      order_.push_back(name);
      vars_.emplace(name, ag::Var<T>(t, requires_grad));
    }
  }
  require(order_.size() == params.tensors.size(), "parameter set does not match codec config");
}

template <typename T>
const ag::Var<T>& BoundCodec<T>::p(const std::string& name) const {
  return vars_.at(name);
}

template <typename T>
ag::Var<T> BoundCodec<T>::conv(const ag::Var<T>& x, const std::string& prefix, int stride, int pad) const {
  auto b = vars_.find(prefix + ".b");
  return ag::conv2d(x, p(prefix + ".w"), b == vars_.end() ? ag::Var<T>() : b->second, stride, pad);
}

template <typename T>
ag::Var<T> BoundCodec<T>::residual_block(const ag::Var<T>& x, const std::string& prefix) const {
  ag::Var<T> h = conv(ag::silu(x), prefix + ".c1", 1, 1);
  h = conv(ag::silu(h), prefix + ".c2", 1, 1);
  return ag::add(x, h);
}

template <typename T>
ag::Var<T> BoundCodec<T>::encode(const ag::Var<T>& input) const {
  const Shape& s = input.shape();
  require(s.size() == 4 && s[1] == config_.encoder_in_channels(),
          "encode: input " + shape_str(s) + " does not have " + std::to_string(config_.encoder_in_channels()) +
              " channels");
  require(s[2] % stride() == 0 && s[3] % stride() == 0,
          "encode: spatial size " + shape_str(s) + " not divisible by stride " + std::to_string(stride()));
  ag::Var<T> h = conv(input, "enc.in", 1, 1);
  for (int l = 0; l < config_.levels; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    for (int j = 0; j < config_.residual_blocks_per_level; ++j) h = residual_block(h, pre + ".rb" + std::to_string(j));
    h = conv(ag::silu(h), pre + ".down", 2, 1);
  }
  return conv(ag::silu(h), "enc.out", 1, 1);
}

template <typename T>
ag::Var<T> BoundCodec<T>::decode(const ag::Var<T>& token) const {
  const Shape& s = token.shape();
  require(s.size() == 4 && s[1] == config_.latent_channels,
          "decode: token " + shape_str(s) + " does not have " + std::to_string(config_.latent_channels) + " channels");
  ag::Var<T> h = conv(token, "dec.in", 1, 1);
  for (int l = config_.levels - 1; l >= 0; --l) {
    const std::string pre = "dec.l" + std::to_string(l);
    h = conv(ag::upsample2x(ag::silu(h)), pre + ".up", 1, 1);
    for (int j = 0; j < config_.residual_blocks_per_level; ++j) h = residual_block(h, pre + ".rb" + std::to_string(j));
  }
  return conv(ag::silu(h), "dec.out", 1, 1);
}

template <typename T>
MemoryState<T> BoundCodec<T>::initial_state(int64_t batch, int64_t height, int64_t width) const {
  require(config_.mask_enabled, "memory state requested from a codec without mask support");
  const Shape s{batch, config_.lstm_hidden_channels, height, width};
  return {ag::Var<T>(Tensor<T>(s)), ag::Var<T>(Tensor<T>(s))};
}

template <typename T>
PrecursorOutput<T> BoundCodec<T>::precursor(const MemoryState<T>& state, const ag::Var<T>& residual) const {
  require(config_.mask_enabled, "precursor called on a codec without mask support");
  const Shape& s = residual.shape();
  require(s.size() == 4 && s[1] == config_.image_channels, "precursor: residual must be image shaped");
  require(state.hidden.defined() && state.hidden.dim(0) == s[0] && state.hidden.dim(2) == s[2] &&
              state.hidden.dim(3) == s[3],
          "precursor: memory state does not match residual");
  const int64_t Hd = config_.lstm_hidden_channels;
  ag::Var<T> x = conv(residual, "pre.in", 1, 1);
  x = residual_block(x, "pre.rb");
  ag::Var<T> gates = conv(ag::concat_channels(x, state.hidden), "pre.lstm", 1, 1);
  ag::Var<T> i = ag::sigmoid(ag::slice_channels(gates, 0, Hd));
  ag::Var<T> f = ag::sigmoid(ag::slice_channels(gates, Hd, Hd));
  ag::Var<T> o = ag::sigmoid(ag::slice_channels(gates, 2 * Hd, Hd));
  ag::Var<T> g = ag::tanh(ag::slice_channels(gates, 3 * Hd, Hd));
  ag::Var<T> cell = ag::add(ag::mul(f, state.cell), ag::mul(i, g));
  ag::Var<T> hidden = ag::mul(o, ag::tanh(cell));
  PrecursorOutput<T> out;
  out.mask = ag::sigmoid(conv(hidden, "pre.mask", 1, 0));
  out.transformed = conv(hidden, "pre.xform", 1, 0);
  out.state = {hidden, cell};
  return out;
}

template <typename T>
ParamSet<T> BoundCodec<T>::gradients() const {
  ParamSet<T> out;
  for (const auto& name : order_) {
    const ag::Var<T>& v = vars_.at(name);
    out.add(name, v.grad().empty() ? Tensor<T>(v.shape()) : v.grad());
  }
  return out;
}

template <typename T>
ag::Var<T> condition(const ag::Var<T>& transformed, const ag::Var<T>& mask) {
  return ag::concat_channels(ag::mul_mask(transformed, mask), mask);
}

template <typename T>
Token<T> encode(const CodecParams<T>& params, const Tensor<T>& input) {
  ag::NoGradGuard ng;
  BoundCodec<T> codec(params, false);
  return {codec.encode(ag::Var<T>(input)).value(), 1};
}

template <typename T>
Tensor<T> decode(const CodecParams<T>& params, const Token<T>& token) {
  ag::NoGradGuard ng;
  BoundCodec<T> codec(params, false);
  return codec.decode(ag::Var<T>(token.z)).value();
}

#define VLE_INSTANTIATE(T)                                                            \
  template class ParamSet<T>;                                                         \
  template CodecParams<T> init_codec_params(const CodecConfig&, uint64_t);            \
  template class Model<T>;                                                            \
  template class BoundCodec<T>;                                                       \
  template ag::Var<T> condition(const ag::Var<T>&, const ag::Var<T>&);                \
  template Token<T> encode(const CodecParams<T>&, const Tensor<T>&);                  \
  template Tensor<T> decode(const CodecParams<T>&, const Token<T>&);

VLE_INSTANTIATE(float)
VLE_INSTANTIATE(double)

}  // namespace vle
