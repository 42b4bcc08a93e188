#include "vle/core.hpp"

#include <algorithm>

namespace vle {

std::string to_string(Variant v) { return v == Variant::masked ? "masked" : "vanilla"; }

Variant parse_variant(const std::string& s) {
  if (s == "vanilla") return Variant::vanilla;
  if (s == "masked") return Variant::masked;
  throw ContractError("unknown variant '" + s + "' (expected vanilla or masked)");
}

ImageBatch::ImageBatch(Tensor<float> data, int64_t stride) : data_(std::move(data)) {
  require(data_.rank() == 4, "image batch must be rank 4, got " + shape_str(data_.shape()));
  require(data_.dim(0) >= 1, "image batch must hold at least one image");
  require(stride >= 1 && data_.dim(2) % stride == 0 && data_.dim(3) % stride == 0,
          "image size " + shape_str(data_.shape()) + " not divisible by stride " + std::to_string(stride));
  if (!data_.all_finite()) throw NumericError("image batch contains non-finite values");
  for (float v : data_.vec())
    require(v >= 0.0f && v <= 1.0f, "image values must lie in [0, 1]");
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mse shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  require(a.numel() > 0, "mse of empty tensors");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  if (!std::isfinite(acc)) throw NumericError("mse of non-finite input");
  return acc / double(a.numel());
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTrace<T> accumulate(BasicTrace<T> trace, const Tensor<T>& decoder_output,
                         const std::optional<Tensor<T>>& mask, Tensor<T> token,
                         std::optional<Tensor<T>> transformed) {
  require(!mask || trace.masked(), "mask supplied to a vanilla trace");
  require(mask || !trace.masked(), "masked trace step requires a mask");
  TraceStep<T> s;
  s.index = trace.size() + 1;
  s.token = std::move(token);
  s.output = decoder_output;
  if (trace.empty()) {
    s.cumulative = decoder_output;
  } else {
    s.cumulative = add(trace.back().cumulative, decoder_output);
  }
  if (mask) {
    const Shape& xs = decoder_output.shape();
    require(mask->rank() == 4 && mask->dim(0) == xs[0] && mask->dim(1) == 1 && mask->dim(2) == xs[2] &&
                mask->dim(3) == xs[3],
            "mask shape " + shape_str(mask->shape()) + " incompatible with " + shape_str(xs));
    s.mask = *mask;
    s.cumulative_mask = trace.empty() ? *mask : add(*trace.back().cumulative_mask, *mask);
  }
  s.transformed = std::move(transformed);
  trace.push(std::move(s));
  return trace;
}

Tensor<float> clamp01(const Tensor<float>& t) {
  Tensor<float> out = t;
  for (auto& v : out.vec()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> add(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> add(const Tensor<double>&, const Tensor<double>&);
template BasicTrace<float> accumulate(BasicTrace<float>, const Tensor<float>&, const std::optional<Tensor<float>>&,
                                      Tensor<float>, std::optional<Tensor<float>>);
template BasicTrace<double> accumulate(BasicTrace<double>, const Tensor<double>&,
                                       const std::optional<Tensor<double>>&, Tensor<double>,
                                       std::optional<Tensor<double>>);

}  // namespace vle
