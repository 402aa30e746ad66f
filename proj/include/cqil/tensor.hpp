#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cqil/common.hpp"
#include "cqil/rng.hpp"

namespace cqil {

// Dense row-major tensor. Images and feature maps use NCHW / CHW layouts by
// convention; the tensor itself is layout-agnostic.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape)
      : shape_(std::move(shape)), data_(compute_numel(shape_), T(0)) {}
  Tensor(std::vector<size_t> shape, T fill_value)
      : shape_(std::move(shape)), data_(compute_numel(shape_), fill_value) {}

  static Tensor scalar(T v) {
    Tensor t(std::vector<size_t>{});
    t.data_.assign(1, v);
    return t;
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t ndim() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  // 4-d accessors for NCHW feature maps.
  T& at4(size_t n, size_t c, size_t h, size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(size_t n, size_t c, size_t h, size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at3(size_t c, size_t h, size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& at3(size_t c, size_t h, size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  T& at2(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  const T& at2(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void fill_normal(Rng& rng, T stddev, T mean = T(0)) {
    for (auto& v : data_) v = mean + stddev * static_cast<T>(rng.normal());
  }

  Tensor reshaped(std::vector<size_t> new_shape) const {
    CQIL_CHECK_MSG(compute_numel(new_shape) == numel(),
                   "reshape changes element count");
    Tensor out = *this;
    out.shape_ = std::move(new_shape);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  T sum() const {
    T s = T(0);
    for (const auto& v : data_) s += v;
    return s;
  }

  T min() const {
    CQIL_CHECK(!empty());
    T m = data_[0];
    for (const auto& v : data_) m = std::min(m, v);
    return m;
  }

  T max() const {
    CQIL_CHECK(!empty());
    T m = data_[0];
    for (const auto& v : data_) m = std::max(m, v);
    return m;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  static size_t compute_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }

 private:
  std::vector<size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
inline Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  CQIL_CHECK_MSG(a.same_shape(b), "shape mismatch " << a.shape_str() << " vs "
                                                    << b.shape_str());
  Tensor<T> out = a;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
inline Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  CQIL_CHECK_MSG(a.same_shape(b), "shape mismatch " << a.shape_str() << " vs "
                                                    << b.shape_str());
  Tensor<T> out = a;
  for (size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
inline Tensor<T> operator*(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

template <typename T>
inline void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  CQIL_CHECK(x.same_shape(y));
  for (size_t i = 0; i < y.numel(); ++i) y[i] += alpha * x[i];
}

template <typename T>
inline double l2_norm(const Tensor<T>& a) {
  double s = 0;
  for (size_t i = 0; i < a.numel(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return std::sqrt(s);
}

template <typename T>
inline double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  CQIL_CHECK(a.same_shape(b));
  double m = 0;
  for (size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace cqil
