#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vle/errors.hpp"

namespace vle {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major tensor with value semantics. Rank-4 tensors follow the
/// (batch, channel, height, width) layout.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
            "tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }
  static Tensor full_like(const Tensor& o, T v) { return Tensor(o.shape_, v); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i < 0 ? rank() + i : i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t b, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int64_t b, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    require(shape_numel(s) == numel(), "reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  /// Copy of images [begin, end) along the batch axis.
  Tensor slice_batch(int64_t begin, int64_t end) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> Tensor<T>::slice_batch(int64_t begin, int64_t end) const {
  require(rank() >= 1 && begin >= 0 && begin <= end && end <= shape_[0], "slice_batch out of range");
  const int64_t inner = shape_[0] == 0 ? 0 : numel() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(s, std::vector<T>(data_.begin() + begin * inner, data_.begin() + end * inner));
}

/// Concatenate along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "stack_batch of nothing");
  Shape s = parts.front().shape();
  std::vector<T> data;
  int64_t n = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    require(ps.size() == s.size() && std::equal(ps.begin() + 1, ps.end(), s.begin() + 1),
            "stack_batch shape mismatch");
    data.insert(data.end(), p.vec().begin(), p.vec().end());
    n += ps[0];
  }
  s[0] = n;
  return Tensor<T>(s, std::move(data));
}

/// Largest absolute elementwise difference; shapes must match.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace vle
