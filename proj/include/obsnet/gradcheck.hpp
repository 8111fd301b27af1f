#pragma once

// Finite-difference verification of backward() in 64-bit arithmetic.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "obsnet/ndgrad.hpp"

namespace obsnet::nd {

struct GradCheckReport {
  double max_rel_error = 0.0;  // worst norm-wise relative error over all checked tensors
  std::string worst;           // name of that tensor
  std::size_t checked = 0;     // number of scalar entries perturbed
};

namespace detail {

// Scalar objective sum(output * weights), evaluated with a fresh RNG seeded
// identically every time so stochastic nodes reuse the same masks.
inline double objective(const Graph& g, const ParamStore<double>& p, std::span<const Array4<double>> in,
                        const Array4<double>& weights, Mode mode, std::uint64_t seed) {
  SeededRng rng(seed);
  const auto tape = forward(g, p, in, mode, rng);
  const auto& y = tape.output();
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
  return s;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace detail

// Compares backward() against central differences (step h) for every
// parameter entry and every input entry.
inline GradCheckReport check_gradients(const Graph& g, ParamStore<double> params, std::vector<Array4<double>> inputs,
                                       Mode mode, std::uint64_t seed, double h = 1e-4) {
  SeededRng wrng(seed ^ 0x5EEDULL);
  Array4<double> weights;
  {
    SeededRng rng(seed);
    const auto tape = forward(g, params, std::span<const Array4<double>>(inputs), mode, rng);
    weights = Array4<double>(tape.output().shape());
  }
  for (auto& v : weights.vec()) v = wrng.uniform(-1.0, 1.0);

  SeededRng rng(seed);
  auto tape = forward(g, params, std::span<const Array4<double>>(inputs), mode, rng);
  const auto grads = backward(tape, weights);

  GradCheckReport rep;
  auto fd = [&](std::vector<double>& values) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v0 = values[i];
      values[i] = v0 + h;
      const double fp = detail::objective(g, params, inputs, weights, mode, seed);
      values[i] = v0 - h;
      const double fm = detail::objective(g, params, inputs, weights, mode, seed);
      values[i] = v0;
      out[i] = (fp - fm) / (2.0 * h);
    }
    rep.checked += values.size();
    return out;
  };
  auto record = [&](double e, const std::string& name) {
    if (e >= rep.max_rel_error) {
      rep.max_rel_error = e;
      rep.worst = name;
    }
  };
  for (auto& [name, p] : params) record(detail::rel_error(grads.params.at(name).data, fd(p.data)), name);
  for (std::size_t k = 0; k < inputs.size(); ++k)
    record(detail::rel_error(grads.inputs.at(k).vec(), fd(inputs[k].vec())), "input" + std::to_string(k));
  return rep;
}

// A small random graph exercising one operator kind.
struct GradCheckCase {
  std::string label;
  Graph graph;
  ParamStore<double> params;
  std::vector<Array4<double>> inputs;
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;
};

namespace detail {

inline Array4<double> random_array(SeededRng& rng, Shape4 s, double lo, double hi) {
  Array4<double> a(s);
  for (auto& v : a.vec()) v = rng.uniform(lo, hi);
  return a;
}

// Values bounded away from zero, so relu kinks lie outside the FD stencil.
inline Array4<double> off_zero_array(SeededRng& rng, Shape4 s) {
  Array4<double> a(s);
  for (auto& v : a.vec()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return a;
}

// Distinct values at least 0.01 apart, so max-pool winners are stable.
inline Array4<double> distinct_array(SeededRng& rng, Shape4 s) {
  Array4<double> a(s);
  std::vector<double> vals(a.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 0.5;
  for (std::size_t i = vals.size(); i > 1; --i)
    std::swap(vals[i - 1], vals[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  a.vec() = vals;
  return a;
}

}  // namespace detail

inline constexpr std::array<OpKind, 11> kAllOps{OpKind::input,   OpKind::conv3x3, OpKind::relu,  OpKind::maxpool2x2,
                                                OpKind::maxunpool2x2, OpKind::concat, OpKind::dropout, OpKind::softmax,
                                                OpKind::sigmoid, OpKind::add,     OpKind::scale};

inline GradCheckCase make_gradcheck_case(OpKind kind, std::uint64_t instance) {
  using detail::random_array;
  SeededRng rng = SeededRng::derive(0xF1D1FFULL + static_cast<std::uint64_t>(kind), instance);
  GradCheckCase c;
  c.label = std::string(to_string(kind)) + "#" + std::to_string(instance);
  c.seed = rng.next_u64();
  const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 2));
  const std::size_t ch = static_cast<std::size_t>(rng.uniform_int(1, 3));
  const std::size_t h = 2 * static_cast<std::size_t>(rng.uniform_int(1, 3));
  const std::size_t w = 2 * static_cast<std::size_t>(rng.uniform_int(1, 3));
  const Shape4 s{n, ch, h, w};
  auto& g = c.graph;
  const int x = g.input("x", ch, h, w);
  switch (kind) {
    case OpKind::input:
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      break;
    case OpKind::conv3x3: {
      g.conv3x3("conv", x, static_cast<std::size_t>(rng.uniform_int(1, 3)));
      c.params = init_params<double>(g, rng);
      for (auto& v : c.params.at("conv.b").data) v = rng.uniform(-0.5, 0.5);
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      break;
    }
    case OpKind::relu:
      g.relu("relu", x);
      c.inputs.push_back(detail::off_zero_array(rng, s));
      break;
    case OpKind::maxpool2x2:
      g.maxpool2x2("pool", x);
      c.inputs.push_back(detail::distinct_array(rng, s));
      break;
    case OpKind::maxunpool2x2: {
      const int pool = g.maxpool2x2("pool", x);
      const int y = g.input("y", ch, h / 2, w / 2);
      g.maxunpool2x2("unpool", y, pool);
      c.inputs.push_back(detail::distinct_array(rng, s));
      c.inputs.push_back(random_array(rng, {n, ch, h / 2, w / 2}, -1.0, 1.0));
      break;
    }
    case OpKind::concat: {
      const std::size_t ch2 = static_cast<std::size_t>(rng.uniform_int(1, 3));
      const int y = g.input("y", ch2, h, w);
      g.concat("cat", {x, y});
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      c.inputs.push_back(random_array(rng, {n, ch2, h, w}, -1.0, 1.0));
      break;
    }
    case OpKind::dropout:
      g.dropout("drop", x, 0.5);
      c.mode = Mode::train;
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      break;
    case OpKind::softmax:
      g.softmax("softmax", x);
      c.inputs.push_back(random_array(rng, s, -2.0, 2.0));
      break;
    case OpKind::sigmoid:
      g.sigmoid("sigmoid", x);
      c.inputs.push_back(random_array(rng, s, -3.0, 3.0));
      break;
    case OpKind::add: {
      const int y = g.input("y", ch, h, w);
      g.add("add", x, y);
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      break;
    }
    case OpKind::scale:
      g.scale("scale", x, rng.uniform(-2.0, 2.0));
      c.inputs.push_back(random_array(rng, s, -1.0, 1.0));
      break;
  }
  return c;
}

}  // namespace obsnet::nd
