#pragma once

// Fixed MiniSegNet topology shared by the segmenter and the observer.

#include <array>
#include <string>
#include <vector>

#include "obsnet/ndgrad.hpp"

namespace obsnet::arch {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kNumClasses = 5;              // in-distribution classes
inline constexpr std::size_t kSegChannels = kNumClasses + 1;  // plus void
inline constexpr double kDropoutRate = 0.5;
inline constexpr std::array<std::size_t, 3> kWidths{16, 32, 64};

// Seg taps in emission order (shallow to deep for the encoder, then the
// decoder in execution order).
inline constexpr std::array<const char*, 6> kTapNames{"tap.enc1", "tap.enc2", "tap.enc3",
                                                      "tap.dec3", "tap.dec2", "tap.dec1"};

struct SegGraph {
  nd::Graph graph;
  int logits = -1;
  int softmax = -1;
  std::array<int, 6> taps{};
};

namespace detail {

inline int conv_relu(nd::Graph& g, const std::string& name, int x, std::size_t out) {
  return g.relu(name + ".relu", g.conv3x3(name, x, out));
}

}  // namespace detail

inline SegGraph build_seg_graph() {
  using detail::conv_relu;
  SegGraph s;
  auto& g = s.graph;
  const auto [w1, w2, w3] = kWidths;
  int x = g.input("image", kImageChannels, kImageSize, kImageSize);

  x = conv_relu(g, "enc1.conv1", x, w1);
  const int e1 = conv_relu(g, "enc1.conv2", x, w1);
  const int p1 = g.maxpool2x2("enc1.pool", e1);

  x = conv_relu(g, "enc2.conv1", p1, w2);
  const int e2 = conv_relu(g, "enc2.conv2", x, w2);
  const int p2 = g.maxpool2x2("enc2.pool", e2);

  x = g.dropout("enc3.drop", p2, kDropoutRate);
  x = conv_relu(g, "enc3.conv1", x, w3);
  const int e3 = conv_relu(g, "enc3.conv2", x, w3);
  const int p3 = g.maxpool2x2("enc3.pool", e3);
  x = g.dropout("bottleneck.drop", p3, kDropoutRate);

  x = g.maxunpool2x2("dec3.unpool", x, p3);
  x = conv_relu(g, "dec3.conv1", x, w3);
  const int d3 = conv_relu(g, "dec3.conv2", x, w2);
  x = g.dropout("dec3.drop", d3, kDropoutRate);

  x = g.maxunpool2x2("dec2.unpool", x, p2);
  x = conv_relu(g, "dec2.conv1", x, w2);
  const int d2 = conv_relu(g, "dec2.conv2", x, w1);

  x = g.maxunpool2x2("dec1.unpool", d2, p1);
  x = conv_relu(g, "dec1.conv1", x, w1);
  const int d1 = conv_relu(g, "dec1.conv2", x, w1);

  s.logits = g.conv3x3("head", d1, kSegChannels);
  s.softmax = g.softmax("softmax", s.logits);
  s.taps = {e1, e2, e3, d3, d2, d1};
  g.set_output(s.softmax);
  return s;
}

}  // namespace obsnet::arch
