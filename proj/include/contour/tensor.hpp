#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contour/errors.hpp"

namespace contour {

/// Four-dimensional extent. Activations use (batch, height, width, channels);
/// convolution kernels reuse the same slots as (kh, kw, cin, cout).
struct Shape {
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::int64_t d0, std::int64_t d1, std::int64_t d2, std::int64_t d3)
      : dims{d0, d1, d2, d3} {}

  constexpr std::int64_t n() const { return dims[0]; }
  constexpr std::int64_t h() const { return dims[1]; }
  constexpr std::int64_t w() const { return dims[2]; }
  constexpr std::int64_t c() const { return dims[3]; }
  constexpr std::int64_t operator[](std::size_t i) const { return dims[i]; }

  constexpr std::int64_t size() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
  /// Elements per batch entry.
  constexpr std::int64_t sample_size() const { return dims[1] * dims[2] * dims[3]; }

  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "," +
           std::to_string(dims[2]) + "," + std::to_string(dims[3]) + ")";
  }

  /// Rank-1 helper for biases and norm parameters.
  static constexpr Shape vec(std::int64_t c) { return {1, 1, 1, c}; }
  static constexpr Shape scalar() { return {1, 1, 1, 1}; }
};

/// Dense row-major NHWC array. Value type: copies are deep.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape) {
    check_dims(shape);
    data_.assign(static_cast<std::size_t>(shape.size()), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_dims(shape);
    if (static_cast<std::int64_t>(data_.size()) != shape.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape::scalar(), v); }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& vector() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t offset(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    return ((a * shape_.dims[1] + b) * shape_.dims[2] + c) * shape_.dims[3] + d;
  }
  T& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    return data_[static_cast<std::size_t>(offset(a, b, c, d))];
  }
  const T& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    return data_[static_cast<std::size_t>(offset(a, b, c, d))];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, different extents. Element count must match.
  Tensor reshaped(Shape s) const { return Tensor(s, data_); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    bool ok = true;
    for (T v : data_) ok &= std::isfinite(v);
    return ok;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  static void check_dims(const Shape& s) {
    for (auto d : s.dims) {
      if (d < 0) throw ShapeError("negative tensor dimension in " + s.str());
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Largest |a-b| over two equally shaped tensors.
template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  T m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace contour
