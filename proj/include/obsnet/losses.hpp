#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "obsnet/array4.hpp"
#include "obsnet/error.hpp"

namespace obsnet::nd {

inline constexpr std::uint8_t kIgnoreTarget = 255;
inline constexpr double kProbClamp = 1e-7;

template <class T>
struct LossResult {
  double value = 0.0;
  Array4<T> grad;  // d(loss)/d(input), same shape as the input
  std::size_t supervised = 0;
};

// Mean cross-entropy of softmax(logits) against `labels` (one id per pixel,
// NHW order) over pixels whose label differs from `ignore_id`.
template <class T>
LossResult<T> softmax_cross_entropy(const Array4<T>& logits, std::span<const std::uint8_t> labels,
                                    int ignore_id) {
  const auto& s = logits.shape();
  const std::size_t HW = s.plane(), C = s.c;
  if (labels.size() != s.n * HW)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  LossResult<T> r;
  r.grad = Array4<T>(s);
  for (auto l : labels)
    if (static_cast<int>(l) != ignore_id) ++r.supervised;
  if (r.supervised == 0) throw NumericError("no supervised pixels");

  const double inv_n = 1.0 / static_cast<double>(r.supervised);
  std::vector<double> prob(C);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* x = logits.sample_ptr(n);
    T* g = r.grad.sample_ptr(n);
    for (std::size_t p = 0; p < HW; ++p) {
      const int label = labels[n * HW + p];
      if (label == ignore_id) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= C)
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                         std::to_string(C) + ")");
      double m = x[p];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, static_cast<double>(x[c * HW + p]));
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) sum += prob[c] = std::exp(static_cast<double>(x[c * HW + p]) - m);
      const double log_sum = std::log(sum);
      r.value -= (static_cast<double>(x[static_cast<std::size_t>(label) * HW + p]) - m - log_sum) * inv_n;
      for (std::size_t c = 0; c < C; ++c) {
        const double onehot = static_cast<std::size_t>(label) == c ? 1.0 : 0.0;
        g[c * HW + p] = static_cast<T>((prob[c] / sum - onehot) * inv_n);
      }
    }
  }
  return r;
}

// -mean[pos_weight * t * log p + (1 - t) * log(1 - p)] over pixels whose target
// is not kIgnoreTarget; p clamped to [1e-7, 1 - 1e-7].
template <class T>
LossResult<T> weighted_bce(const Array4<T>& pred, std::span<const std::uint8_t> target, double pos_weight) {
  if (target.size() != pred.size())
    throw ShapeError("weighted_bce: " + std::to_string(target.size()) + " targets for prediction " +
                     pred.shape().str());
  LossResult<T> r;
  r.grad = Array4<T>(pred.shape());
  for (auto t : target)
    if (t != kIgnoreTarget) ++r.supervised;
  if (r.supervised == 0) throw NumericError("no supervised pixels");
  const double inv_n = 1.0 / static_cast<double>(r.supervised);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] == kIgnoreTarget) continue;
    const double p = std::clamp(static_cast<double>(pred[i]), kProbClamp, 1.0 - kProbClamp);
    if (target[i] == 1) {
      r.value -= pos_weight * std::log(p) * inv_n;
      r.grad[i] = static_cast<T>(-pos_weight / p * inv_n);
    } else {
      r.value -= std::log(1.0 - p) * inv_n;
      r.grad[i] = static_cast<T>(1.0 / (1.0 - p) * inv_n);
    }
  }
  return r;
}

}  // namespace obsnet::nd
