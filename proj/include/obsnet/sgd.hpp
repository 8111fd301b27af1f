#pragma once

#include <cmath>
#include <string>

#include "obsnet/error.hpp"
#include "obsnet/param_store.hpp"

namespace obsnet::nd {

template <class T>
struct SgdState {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ParamStore<T> velocity;
};

template <class T>
SgdState<T> make_sgd(const ParamStore<T>& params, double lr, double momentum, double weight_decay) {
  return {lr, momentum, weight_decay, params.zeros_like()};
}

// Rescales all gradients so their global L2 norm is at most `max_norm`
// (non-positive disables). Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (auto v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T k = static_cast<T>(max_norm / norm);
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v *= k;
  }
  return norm;
}

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v
template <class T>
void sgd_step(ParamStore<T>& params, const ParamStore<T>& grads, SgdState<T>& state) {
  for (auto& [name, w] : params) {
    const auto& g = grads.at(name);
    auto& v = state.velocity.at(name);
    if (g.dims != w.dims || v.dims != w.dims)
      throw ShapeError("sgd_step: shape mismatch for parameter '" + name + "'");
    const T mu = static_cast<T>(state.momentum), wd = static_cast<T>(state.weight_decay),
            lr = static_cast<T>(state.lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v.data[i] = mu * v.data[i] + g.data[i] + wd * w.data[i];
      w.data[i] -= lr * v.data[i];
    }
  }
}

}  // namespace obsnet::nd
