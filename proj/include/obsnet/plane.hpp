#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "obsnet/error.hpp"

namespace obsnet {

// Single-channel H x W raster, row-major.
template <class T>
struct Plane {
  std::size_t height = 0, width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

  T& operator()(std::size_t y, std::size_t x) noexcept { return data[y * width + x]; }
  const T& operator()(std::size_t y, std::size_t x) const noexcept { return data[y * width + x]; }
  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Plane&) const = default;
};

using LabelMap = Plane<std::uint8_t>;    // class ids; void and anomaly ids reserved
using AttackMask = Plane<std::uint8_t>;  // 0/1
using ScoreMap = Plane<float>;           // per-pixel uncertainty in [0,1]

inline void require_same_size(const auto& a, const auto& b, const std::string& what) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(what + ": size " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

}  // namespace obsnet
