#pragma once

// The frozen segmentation network Seg: forward pass with feature taps,
// argmax prediction, and segmentation accuracy metrics.

#include <array>
#include <span>
#include <vector>

#include "obsnet/architecture.hpp"
#include "obsnet/fsutil.hpp"
#include "obsnet/ndgrad.hpp"
#include "obsnet/plane.hpp"
#include "obsnet/synthdata.hpp"

namespace obsnet::seg {

using Params = nd::ParamStore<float>;

enum class DropoutMode { off, stochastic };

inline const arch::SegGraph& seg_graph(DropoutMode dropout = DropoutMode::off) {
  static const arch::SegGraph plain = arch::build_seg_graph();
  static const arch::SegGraph mc = [] {
    arch::SegGraph g = arch::build_seg_graph();
    g.graph = g.graph.with_stochastic_dropout(true);
    return g;
  }();
  return dropout == DropoutMode::stochastic ? mc : plain;
}

inline Params init_seg_params(SeededRng& rng) { return nd::init_params<float>(seg_graph().graph, rng); }

// One executed Seg pass; keeps the tape so callers may differentiate it.
class SegPass {
 public:
  SegPass(const arch::SegGraph& g, nd::Tape<float> tape) : graph_(&g), tape_(std::move(tape)) {}

  const nd::Array4<float>& softmax() const { return tape_.activation(graph_->softmax); }
  const nd::Array4<float>& logits() const { return tape_.activation(graph_->logits); }
  const nd::Array4<float>& tap(std::size_t i) const { return tape_.activation(graph_->taps.at(i)); }
  const std::vector<std::uint32_t>& pool_indices(const char* pool_node) const {
    return tape_.pool_indices(graph_->graph.find(pool_node));
  }
  const arch::SegGraph& graph() const { return *graph_; }
  nd::Tape<float>& tape() { return tape_; }

 private:
  const arch::SegGraph* graph_;
  nd::Tape<float> tape_;
};

inline SegPass seg_forward(const Params& params, const nd::Array4<float>& images, nd::Mode mode, SeededRng& rng,
                           DropoutMode eval_dropout = DropoutMode::off) {
  const auto& g = seg_graph(eval_dropout);
  return SegPass(g, nd::forward(g.graph, params, images, mode, rng));
}

// Deterministic eval-mode pass (dropout disabled).
inline SegPass seg_forward_eval(const Params& params, const nd::Array4<float>& images) {
  SeededRng unused(0);
  return seg_forward(params, images, nd::Mode::eval, unused);
}

// Per-pixel argmax over channels; ties resolve to the lowest channel id.
inline std::vector<LabelMap> argmax_labels(const nd::Array4<float>& probs) {
  const auto& s = probs.shape();
  std::vector<LabelMap> out;
  out.reserve(s.n);
  const std::size_t HW = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    LabelMap m(s.h, s.w);
    const float* p = probs.sample_ptr(n);
    for (std::size_t i = 0; i < HW; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c; ++c)
        if (p[c * HW + i] > p[best * HW + i]) best = c;
      m.data[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<LabelMap> predict(const Params& params, std::span<const data::Image> images,
                                     std::size_t batch = 16) {
  std::vector<LabelMap> out;
  for (std::size_t i = 0; i < images.size(); i += batch) {
    const auto chunk = images.subspan(i, std::min(batch, images.size() - i));
    auto pass = seg_forward_eval(params, data::to_batch(chunk));
    for (auto& m : argmax_labels(pass.softmax())) out.push_back(std::move(m));
  }
  return out;
}

struct SegScores {
  double miou = 0.0;
  double global_acc = 0.0;
  std::size_t classes_counted = 0;
};

// mIoU over the in-distribution classes and global pixel accuracy. Pixels whose
// ground truth is void or anomaly are excluded; a class absent from both the
// prediction and the ground truth is left out of the mean.
inline SegScores segmentation_scores(std::span<const LabelMap> pred, std::span<const LabelMap> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ShapeError("segmentation_scores: empty or mismatched split");
  constexpr std::size_t C = arch::kNumClasses;
  std::array<std::uint64_t, C> tp{}, fp{}, fn{};
  std::uint64_t correct = 0, total = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require_same_size(pred[k], gt[k], "segmentation_scores");
    for (std::size_t i = 0; i < gt[k].size(); ++i) {
      const auto g = gt[k].data[i], p = pred[k].data[i];
      if (g >= C) continue;
      ++total;
      if (p == g) {
        ++correct;
        ++tp[g];
      } else {
        ++fn[g];
        if (p < C) ++fp[p];
      }
    }
  }
  SegScores s;
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++s.classes_counted;
  }
  s.miou = s.classes_counted ? sum / static_cast<double>(s.classes_counted) : 0.0;
  s.global_acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return s;
}

inline SegScores miou_globalacc(const Params& params, std::span<const data::Scene> scenes) {
  if (scenes.empty()) throw ShapeError("miou_globalacc: empty split");
  std::vector<data::Image> images;
  std::vector<LabelMap> gt;
  for (const auto& s : scenes) {
    images.push_back(s.image);
    gt.push_back(s.labels);
  }
  const auto pred = predict(params, images);
  return segmentation_scores(pred, gt);
}

inline std::string params_hash(const Params& params) { return sha256_hex(nd::encode_params(params)); }

}  // namespace obsnet::seg
