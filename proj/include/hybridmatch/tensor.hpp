#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hybridmatch/error.hpp"

namespace hm {

/// Small dense row-major tensor with up to four positive axes.
template <class T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(volume(shape_), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != volume(shape_))
      throw Error(ErrorKind::ShapeMismatch, "data length does not match shape " + shape_string());
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Channel-height-width access for rank-3 tensors.
  T& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  bool operator==(const Tensor&) const = default;

 private:
  static std::size_t volume(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4)
      throw Error(ErrorKind::ShapeMismatch, "tensor rank must be 1..4");
    for (std::size_t d : shape_)
      if (d == 0) throw Error(ErrorKind::ShapeMismatch, "tensor axes must be positive");
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

template <class T>
void require_rank3(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be c x h x w");
}

/// Per-pixel displacement field (dx, dy), stored as a 2 x h x w tensor.
template <class T = float>
class FlowField {
 public:
  FlowField(std::size_t h, std::size_t w) : t_({2, h, w}) {}

  explicit FlowField(Tensor<T> t) : t_(std::move(t)) {
    if (t_.rank() != 3 || t_.dim(0) != 2) throw Error(ErrorKind::ShapeMismatch, "flow must be 2 x h x w");
    if (!t_.all_finite()) throw Error(ErrorKind::NonFiniteValue, "flow field");
  }

  std::size_t height() const { return t_.dim(1); }
  std::size_t width() const { return t_.dim(2); }

  T& dx(std::size_t y, std::size_t x) { return t_.at(0, y, x); }
  T& dy(std::size_t y, std::size_t x) { return t_.at(1, y, x); }
  T dx(std::size_t y, std::size_t x) const { return t_.at(0, y, x); }
  T dy(std::size_t y, std::size_t x) const { return t_.at(1, y, x); }

  const Tensor<T>& tensor() const noexcept { return t_; }
  Tensor<T>& tensor() noexcept { return t_; }

 private:
  Tensor<T> t_;
};

}  // namespace hm
