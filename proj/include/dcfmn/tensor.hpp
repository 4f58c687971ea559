#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dcfmn/errors.hpp"

namespace dcfmn {

struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
  std::string str() const;
};

/// Dense (batch, channel, height, width) array stored row-major.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
      throw ShapeError("Tensor4 extents must be positive, got " + shape.str());
    }
    data_.assign(shape.numel(), fill);
  }
  Tensor4(int n, int c, int h, int w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel()) {
      throw ShapeError("Tensor4 data length " + std::to_string(data_.size()) +
                       " does not match extents " + shape.str());
    }
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
  }
  T& operator()(int in, int ic, int iy, int ix) { return data_[index(in, ic, iy, ix)]; }
  T operator()(int in, int ic, int iy, int ix) const { return data_[index(in, ic, iy, ix)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the start of one (h, w) plane.
  T* plane(int in, int ic) { return data_.data() + index(in, ic, 0, 0); }
  const T* plane(int in, int ic) const { return data_.data() + index(in, ic, 0, 0); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor4<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

inline std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) +
         ", " + std::to_string(w) + ")";
}

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": extents " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace dcfmn
