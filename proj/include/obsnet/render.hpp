#pragma once

// Visual panels for inspection: class palette, anomaly outline, score maps and
// magnified perturbations, concatenated horizontally into one PPM.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "obsnet/error.hpp"
#include "obsnet/synthdata.hpp"

namespace obsnet::render {

using Rgb = std::array<std::uint8_t, 3>;

// Fixed palette, documented in the README.
inline Rgb class_color(std::uint8_t id) {
  switch (id) {
    case data::kBackground: return {40, 40, 40};
    case data::kRoad: return {128, 64, 128};
    case data::kRectangle: return {70, 130, 180};
    case data::kDisk: return {220, 180, 0};
    case data::kTriangle: return {0, 160, 80};
    case data::kVoid: return {0, 0, 0};
    case data::kPadding: return {90, 90, 90};
    case data::kAnomaly: return {255, 255, 255};
    default: return {255, 0, 255};
  }
}

inline constexpr Rgb kOutline{255, 0, 0};

inline pnm::Rgb8 colorize(const LabelMap& labels) {
  pnm::Rgb8 out{labels.width, labels.height, std::vector<std::uint8_t>(3 * labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = class_color(labels.data[i]);
    std::copy(c.begin(), c.end(), out.pixels.begin() + 3 * i);
  }
  return out;
}

// Paints the 4-connected boundary of `mask` (pixels inside with a neighbour outside).
inline void outline(pnm::Rgb8& img, const Plane<std::uint8_t>& mask, Rgb color = kOutline) {
  if (mask.width != img.width || mask.height != img.height) throw ShapeError("render: outline size mismatch");
  const auto inside = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(mask.height) && x < static_cast<long>(mask.width) &&
           mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0;
  };
  for (long y = 0; y < static_cast<long>(mask.height); ++y)
    for (long x = 0; x < static_cast<long>(mask.width); ++x)
      if (inside(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)))
        std::copy(color.begin(), color.end(), img.pixels.begin() + 3 * (y * mask.width + x));
}

inline Plane<std::uint8_t> anomaly_mask(const LabelMap& labels) {
  Plane<std::uint8_t> m(labels.height, labels.width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.data[i] = labels.data[i] == data::kAnomaly;
  return m;
}

// Scores are expected in [0,1]; mapped linearly to 0..255 and replicated to RGB.
inline pnm::Rgb8 score_panel(const ScoreMap& s) {
  pnm::Rgb8 out{s.width, s.height, std::vector<std::uint8_t>(3 * s.size())};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const float v = std::isfinite(s.data[i]) ? std::clamp(s.data[i], 0.0f, 1.0f) : 0.0f;
    const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = g;
  }
  return out;
}

// 0.5 + gain * (attacked - clean), clipped to [0,1].
inline data::Image magnified_difference(const data::Image& clean, const data::Image& attacked, double gain = 25.0) {
  if (clean.width != attacked.width || clean.height != attacked.height)
    throw ShapeError("render: perturbation size mismatch");
  data::Image d(clean.height, clean.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < clean.height; ++y)
      for (std::size_t x = 0; x < clean.width; ++x) {
        const double v = 0.5 + gain * (static_cast<double>(attacked.at(c, y, x)) - clean.at(c, y, x));
        d.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return d;
}

// Horizontal strip with a `gap`-pixel separator between panels of equal height.
inline pnm::Rgb8 hconcat(std::span<const pnm::Rgb8> panels, std::size_t gap = 2) {
  if (panels.empty()) throw ShapeError("render: no panels");
  const std::size_t h = panels[0].height;
  std::size_t w = 0;
  for (const auto& p : panels) {
    if (p.height != h) throw ShapeError("render: panel heights differ");
    w += p.width;
  }
  w += gap * (panels.size() - 1);
  pnm::Rgb8 out{w, h, std::vector<std::uint8_t>(3 * w * h, 255)};
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(p.pixels.begin() + 3 * y * p.width, 3 * p.width, out.pixels.begin() + 3 * (y * w + x0));
    x0 += p.width + gap;
  }
  return out;
}

}  // namespace obsnet::render
