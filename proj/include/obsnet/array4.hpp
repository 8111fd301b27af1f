#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "obsnet/error.hpp"

namespace obsnet::nd {

struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  std::size_t sample() const noexcept { return c * h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Dense NCHW array, width fastest.
template <class T>
class Array4 {
 public:
  using value_type = T;

  Array4() = default;
  explicit Array4(Shape4 s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
  Array4(Shape4 s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw ShapeError("Array4: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  T* sample_ptr(std::size_t n) noexcept { return data_.data() + n * shape_.sample(); }
  const T* sample_ptr(std::size_t n) const noexcept { return data_.data() + n * shape_.sample(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Index of the first non-finite entry, or size() when all are finite.
  std::size_t first_nonfinite() const noexcept {
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i])) return i;
    return data_.size();
  }

  template <class U>
  Array4<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Array4<U>(shape_, std::move(out));
  }

  // Copies sample `n` into a new batch-of-one array.
  Array4 slice(std::size_t n) const {
    Shape4 s = shape_;
    s.n = 1;
    return Array4(s, std::vector<T>(sample_ptr(n), sample_ptr(n) + shape_.sample()));
  }

  bool operator==(const Array4&) const = default;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

// Stacks equally shaped batch-of-one arrays along the batch axis.
template <class T>
Array4<T> stack(std::span<const Array4<T>> items) {
  if (items.empty()) return {};
  Shape4 s = items.front().shape();
  std::vector<T> data;
  data.reserve(s.sample() * items.size());
  for (const auto& it : items) {
    if (it.shape().c != s.c || it.shape().h != s.h || it.shape().w != s.w)
      throw ShapeError("stack: mismatched shapes " + s.str() + " vs " + it.shape().str());
    data.insert(data.end(), it.vec().begin(), it.vec().end());
  }
  s.n = data.size() / s.sample();
  return Array4<T>(s, std::move(data));
}

}  // namespace obsnet::nd
