#pragma once

// Minimal reverse-mode engine over NCHW arrays. The operator set is closed:
// exactly what the segmentation and observer networks use. Everything is
// templated on the scalar so the float networks and the double-precision
// gradient checker share one code path.

#include <array>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "obsnet/array4.hpp"
#include "obsnet/error.hpp"
#include "obsnet/param_store.hpp"
#include "obsnet/rng.hpp"

namespace obsnet::nd {

enum class OpKind {
  input,
  conv3x3,       // stride 1, zero pad 1; params "<param>.w" [out,in,3,3] and "<param>.b" [out]
  relu,
  maxpool2x2,    // records argmax indices for the matching unpool
  maxunpool2x2,  // inputs: {x, pool node}
  concat,        // channel axis
  dropout,
  softmax,       // channel axis
  sigmoid,
  add,
  scale,
};

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::conv3x3: return "conv3x3";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::maxunpool2x2: return "maxunpool2x2";
    case OpKind::concat: return "concat";
    case OpKind::dropout: return "dropout";
    case OpKind::softmax: return "softmax";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
  }
  return "?";
}

enum class Mode { train, eval };

struct OpNode {
  OpKind kind = OpKind::input;
  std::string name;
  std::vector<int> inputs;
  std::string param;
  double value = 0.0;              // scale factor, or dropout rate
  bool stochastic_in_eval = false;  // dropout only: keep sampling masks in eval mode
  std::size_t input_slot = 0;       // input only
  std::size_t c = 0, h = 0, w = 0;  // per-sample output shape, fixed at build time
};

// Static operator graph; nodes may only reference earlier nodes, so insertion
// order is a topological order.
class Graph {
 public:
  int input(std::string name, std::size_t c, std::size_t h, std::size_t w) {
    OpNode n;
    n.kind = OpKind::input;
    n.name = std::move(name);
    n.input_slot = num_inputs_++;
    n.c = c, n.h = h, n.w = w;
    return push(std::move(n));
  }

  int conv3x3(std::string name, int x, std::size_t out_channels, std::string param = {}) {
    const auto& in = node(x);
    OpNode n = unary(OpKind::conv3x3, name, x);
    n.param = param.empty() ? n.name : std::move(param);
    n.c = out_channels, n.h = in.h, n.w = in.w;
    return push(std::move(n));
  }

  int relu(std::string name, int x) { return push(unary(OpKind::relu, std::move(name), x)); }
  int sigmoid(std::string name, int x) { return push(unary(OpKind::sigmoid, std::move(name), x)); }
  int softmax(std::string name, int x) { return push(unary(OpKind::softmax, std::move(name), x)); }

  int maxpool2x2(std::string name, int x) {
    OpNode n = unary(OpKind::maxpool2x2, name, x);
    if (n.h % 2 || n.w % 2)
      throw ShapeError("node '" + n.name + "': maxpool2x2 needs even spatial size");
    n.h /= 2, n.w /= 2;
    return push(std::move(n));
  }

  int maxunpool2x2(std::string name, int x, int pool) {
    OpNode n = unary(OpKind::maxunpool2x2, name, x);
    const auto& p = node(pool);
    if (p.kind != OpKind::maxpool2x2)
      throw ShapeError("node '" + n.name + "': unpool partner '" + p.name + "' is not a maxpool");
    if (p.c != n.c || p.h != n.h || p.w != n.w)
      throw ShapeError("node '" + n.name + "': input shape does not match pooled shape of '" +
                       p.name + "'");
    n.inputs.push_back(pool);
    const auto& src = node(p.inputs[0]);
    n.h = src.h, n.w = src.w;
    return push(std::move(n));
  }

  int concat(std::string name, std::vector<int> xs) {
    if (xs.empty()) throw ShapeError("node '" + name + "': concat of nothing");
    OpNode n = unary(OpKind::concat, name, xs[0]);
    n.inputs = xs;
    n.c = 0;
    for (int id : xs) {
      const auto& in = node(id);
      if (in.h != n.h || in.w != n.w)
        throw ShapeError("node '" + n.name + "': concat input '" + in.name + "' has mismatched spatial size");
      n.c += in.c;
    }
    return push(std::move(n));
  }

  int dropout(std::string name, int x, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("node '" + name + "': dropout rate must be in [0,1)");
    OpNode n = unary(OpKind::dropout, std::move(name), x);
    n.value = rate;
    return push(std::move(n));
  }

  int add(std::string name, int a, int b) {
    OpNode n = unary(OpKind::add, name, a);
    const auto& rhs = node(b);
    if (rhs.c != n.c || rhs.h != n.h || rhs.w != n.w)
      throw ShapeError("node '" + n.name + "': add operands differ in shape");
    n.inputs.push_back(b);
    return push(std::move(n));
  }

  int scale(std::string name, int x, double factor) {
    OpNode n = unary(OpKind::scale, std::move(name), x);
    n.value = factor;
    return push(std::move(n));
  }

  void set_output(int id) { output_ = checked(id); }
  int output() const noexcept { return output_; }

  const std::vector<OpNode>& nodes() const noexcept { return nodes_; }
  const OpNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(checked(id))); }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t num_inputs() const noexcept { return num_inputs_; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return static_cast<int>(i);
    throw ShapeError("graph has no node named '" + name + "'");
  }

  // Toggles eval-mode sampling on every dropout node (MC Dropout scoring).
  Graph with_stochastic_dropout(bool on) const {
    Graph g = *this;
    for (auto& n : g.nodes_)
      if (n.kind == OpKind::dropout) n.stochastic_in_eval = on;
    return g;
  }

 private:
  int checked(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ShapeError("graph: node id " + std::to_string(id) + " out of range");
    return id;
  }

  OpNode unary(OpKind k, std::string name, int x) const {
    const auto& in = node(x);
    OpNode n;
    n.kind = k;
    n.name = std::move(name);
    n.inputs = {x};
    n.c = in.c, n.h = in.h, n.w = in.w;
    return n;
  }

  int push(OpNode n) {
    nodes_.push_back(std::move(n));
    output_ = static_cast<int>(nodes_.size()) - 1;
    return output_;
  }

  std::vector<OpNode> nodes_;
  std::size_t num_inputs_ = 0;
  int output_ = -1;
};

// Image-pass instrumentation: each forward/backward call adds its batch size.
struct PassCounters {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};

inline PassCounters& pass_counters() {
  static thread_local PassCounters c;
  return c;
}

struct BackwardOptions;

template <class T>
class Tape {
 public:
  const Graph& graph() const { return *graph_; }
  const Array4<T>& output() const { return acts_.at(static_cast<std::size_t>(graph_->output())); }
  const Array4<T>& activation(int id) const { return acts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::uint32_t>& pool_indices(int id) const { return pool_idx_.at(static_cast<std::size_t>(id)); }
  bool consumed() const noexcept { return consumed_; }

 private:
  template <class U>
  friend Tape<U> forward(const Graph&, const ParamStore<U>&, std::span<const Array4<U>>, Mode, SeededRng&);
  template <class U>
  friend struct Gradients;
  template <class U, class Seeds>
  friend auto backward_impl(Tape<U>&, const Seeds&, const BackwardOptions&);

  const Graph* graph_ = nullptr;
  const ParamStore<T>* params_ = nullptr;
  std::vector<Array4<T>> acts_;
  std::vector<std::vector<std::uint32_t>> pool_idx_;
  std::vector<std::vector<T>> dropout_mult_;
  bool consumed_ = false;
};

template <class T>
struct Gradients {
  ParamStore<T> params;
  std::vector<Array4<T>> inputs;
};

template <class T>
struct Seed {
  int node;
  Array4<T> grad;
};

struct BackwardOptions {
  bool param_grads = true;
  std::vector<bool> input_grads;  // per input slot; empty means all
};

namespace kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// 3x3 convolution on a zero-padded grid. Each input plane is stored with one
// pixel of padding as (H+2) x (W+2) values; outputs are computed on an
// H x (W+2) grid whose two rightmost columns are garbage and discarded. In
// this layout every im2col row is one contiguous slice of the padded plane.
struct PaddedGeometry {
  std::size_t H, W;
  std::size_t row() const noexcept { return W + 2; }
  std::size_t plane() const noexcept { return (H + 2) * (W + 2); }
  std::size_t cols() const noexcept { return H * (W + 2); }    // output grid length
  std::size_t buffer(std::size_t C) const noexcept { return C * plane() + 2; }  // +2: garbage-column overrun
  std::size_t offset(int k) const noexcept { return static_cast<std::size_t>(k / 3) * row() + static_cast<std::size_t>(k % 3); }
};

// Per-thread reusable work buffers, indexed by role.
template <class T>
T* scratch(std::size_t role, std::size_t n) {
  static thread_local std::array<std::vector<T>, 5> bufs;
  auto& b = bufs.at(role);
  if (b.size() < n) b.resize(n);
  return b.data();
}

template <class T>
void pad_planes(const T* src, std::size_t C, const PaddedGeometry& g, T* dst) {
  std::fill(dst, dst + g.buffer(C), T(0));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < g.H; ++y)
      std::memcpy(dst + c * g.plane() + (y + 1) * g.row() + 1, src + (c * g.H + y) * g.W, g.W * sizeof(T));
}

// cols[(c*9 + k), j] = padded[c, offset(k) + j] over the output grid.
template <class T>
void im2col_padded(const T* padded, std::size_t C, const PaddedGeometry& g, T* cols) {
  const std::size_t L = g.cols();
  for (std::size_t c = 0; c < C; ++c)
    for (int k = 0; k < 9; ++k)
      std::memcpy(cols + (c * 9 + static_cast<std::size_t>(k)) * L, padded + c * g.plane() + g.offset(k), L * sizeof(T));
}

// Adjoint of im2col_padded: accumulates into a padded buffer.
template <class T>
void col2im_padded_add(const T* cols, std::size_t C, const PaddedGeometry& g, T* padded) {
  const std::size_t L = g.cols();
  for (std::size_t c = 0; c < C; ++c)
    for (int k = 0; k < 9; ++k) {
      const T* src = cols + (c * 9 + static_cast<std::size_t>(k)) * L;
      T* dst = padded + c * g.plane() + g.offset(k);
      for (std::size_t j = 0; j < L; ++j) dst[j] += src[j];
    }
}

// Output grid (C x H x (W+2)) to dense planes, dropping the garbage columns.
template <class T>
void grid_to_dense(const T* grid, std::size_t C, const PaddedGeometry& g, T* dst) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < g.H; ++y)
      std::memcpy(dst + (c * g.H + y) * g.W, grid + c * g.cols() + y * g.row(), g.W * sizeof(T));
}

// Dense planes to an output grid with zeroed garbage columns.
template <class T>
void dense_to_grid(const T* src, std::size_t C, const PaddedGeometry& g, T* grid) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < g.H; ++y) {
      T* row = grid + c * g.cols() + y * g.row();
      std::memcpy(row, src + (c * g.H + y) * g.W, g.W * sizeof(T));
      row[g.W] = row[g.W + 1] = T(0);
    }
}

// Interior of a padded buffer added onto dense planes.
template <class T>
void unpad_add(const T* padded, std::size_t C, const PaddedGeometry& g, T* dst) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < g.H; ++y) {
      const T* src = padded + c * g.plane() + (y + 1) * g.row() + 1;
      T* out = dst + (c * g.H + y) * g.W;
      for (std::size_t x = 0; x < g.W; ++x) out[x] += src[x];
    }
}

}  // namespace kernels

inline std::vector<std::uint32_t> conv_weight_dims(std::size_t out, std::size_t in) {
  return {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), 3u, 3u};
}

template <class T>
Tape<T> forward(const Graph& graph, const ParamStore<T>& params, std::span<const Array4<T>> inputs,
                Mode mode, SeededRng& rng) {
  using namespace kernels;
  if (inputs.size() != graph.num_inputs())
    throw ShapeError("forward: graph expects " + std::to_string(graph.num_inputs()) + " inputs, got " +
                     std::to_string(inputs.size()));
  Tape<T> tape;
  tape.graph_ = &graph;
  tape.params_ = &params;
  tape.acts_.resize(graph.size());
  tape.pool_idx_.resize(graph.size());
  tape.dropout_mult_.resize(graph.size());

  const std::size_t batch = inputs.empty() ? 0 : inputs[0].shape().n;
  const auto& nodes = graph.nodes();
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const OpNode& nd = nodes[id];
    const Shape4 out_shape{batch, nd.c, nd.h, nd.w};
    auto in = [&](std::size_t k) -> const Array4<T>& {
      return tape.acts_[static_cast<std::size_t>(nd.inputs[k])];
    };
    Array4<T>& out = tape.acts_[id];

    switch (nd.kind) {
      case OpKind::input: {
        const auto& x = inputs[nd.input_slot];
        if (x.shape() != out_shape)
          throw ShapeError("node '" + nd.name + "': input shape " + x.shape().str() + ", expected " +
                           out_shape.str());
        out = x;
        break;
      }
      case OpKind::conv3x3: {
        const auto& x = in(0);
        const std::size_t C = x.shape().c, H = nd.h, W = nd.w, K = C * 9;
        const auto& wt = params.at(nd.param + ".w");
        const auto& bs = params.at(nd.param + ".b");
        if (wt.dims != conv_weight_dims(nd.c, C) || bs.size() != nd.c)
          throw ShapeError("node '" + nd.name + "': parameter '" + nd.param + "' has wrong shape");
        out = Array4<T>(out_shape);
        const PaddedGeometry geo{H, W};
        const std::size_t L = geo.cols();
        T* padded = scratch<T>(0, geo.buffer(C));
        T* cols = scratch<T>(1, K * L);
        T* grid = scratch<T>(2, nd.c * L);
        CMapMat<T> Wm(wt.data.data(), static_cast<long>(nd.c), static_cast<long>(K));
        for (std::size_t n = 0; n < batch; ++n) {
          pad_planes(x.sample_ptr(n), C, geo, padded);
          im2col_padded(padded, C, geo, cols);
          MapMat<T> Y(grid, static_cast<long>(nd.c), static_cast<long>(L));
          CMapMat<T> X(cols, static_cast<long>(K), static_cast<long>(L));
          Y.noalias() = Wm * X;
          for (std::size_t o = 0; o < nd.c; ++o) Y.row(static_cast<long>(o)).array() += bs.data[o];
          grid_to_dense(grid, nd.c, geo, out.sample_ptr(n));
        }
        break;
      }
      case OpKind::relu: {
        out = in(0);
        for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
        break;
      }
      case OpKind::sigmoid: {
        out = in(0);
        for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
        break;
      }
      case OpKind::scale: {
        out = in(0);
        const T f = static_cast<T>(nd.value);
        for (auto& v : out.vec()) v *= f;
        break;
      }
      case OpKind::add: {
        out = in(0);
        const auto& b = in(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        break;
      }
      case OpKind::softmax: {
        const auto& x = in(0);
        out = Array4<T>(out_shape);
        const std::size_t C = nd.c, HW = nd.h * nd.w;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* xs = x.sample_ptr(n);
          T* ys = out.sample_ptr(n);
          for (std::size_t p = 0; p < HW; ++p) {
            T m = xs[p];
            for (std::size_t c = 1; c < C; ++c) m = std::max(m, xs[c * HW + p]);
            T sum = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const T e = std::exp(xs[c * HW + p] - m);
              ys[c * HW + p] = e;
              sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t c = 0; c < C; ++c) ys[c * HW + p] *= inv;
          }
        }
        break;
      }
      case OpKind::maxpool2x2: {
        const auto& x = in(0);
        out = Array4<T>(out_shape);
        const std::size_t W = x.shape().w, oh = nd.h, ow = nd.w, planes = batch * nd.c;
        auto& idx = tape.pool_idx_[id];
        idx.resize(out.size());
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = x.data() + pl * x.shape().plane();
          T* dst = out.data() + pl * oh * ow;
          std::uint32_t* ix = idx.data() + pl * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
              std::size_t best = (2 * y) * W + 2 * xx;
              for (std::size_t cand : {best + 1, best + W, best + W + 1})
                if (src[cand] > src[best]) best = cand;
              dst[y * ow + xx] = src[best];
              ix[y * ow + xx] = static_cast<std::uint32_t>(best);
            }
          }
        }
        break;
      }
      case OpKind::maxunpool2x2: {
        const auto& x = in(0);
        const auto& idx = tape.pool_idx_[static_cast<std::size_t>(nd.inputs[1])];
        if (x.shape() != tape.acts_[static_cast<std::size_t>(nd.inputs[1])].shape())
          throw ShapeError("node '" + nd.name + "': unpool input does not match pool output");
        out = Array4<T>(out_shape);
        const std::size_t in_plane = x.shape().plane(), out_plane = nd.h * nd.w;
        const std::size_t planes = batch * nd.c;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = x.data() + pl * in_plane;
          const std::uint32_t* ix = idx.data() + pl * in_plane;
          T* dst = out.data() + pl * out_plane;
          for (std::size_t i = 0; i < in_plane; ++i) dst[ix[i]] = src[i];
        }
        break;
      }
      case OpKind::concat: {
        out = Array4<T>(out_shape);
        for (std::size_t n = 0; n < batch; ++n) {
          T* dst = out.sample_ptr(n);
          for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
            const auto& x = in(k);
            if (x.shape().n != batch)
              throw ShapeError("node '" + nd.name + "': concat input batch mismatch");
            dst = std::copy(x.sample_ptr(n), x.sample_ptr(n) + x.shape().sample(), dst);
          }
        }
        break;
      }
      case OpKind::dropout: {
        out = in(0);
        const bool active = mode == Mode::train || nd.stochastic_in_eval;
        auto& mult = tape.dropout_mult_[id];
        if (active && nd.value > 0.0) {
          const T keep_scale = static_cast<T>(1.0 / (1.0 - nd.value));
          mult.resize(out.size());
          for (std::size_t i = 0; i < out.size(); ++i) {
            mult[i] = rng.uniform() < nd.value ? T(0) : keep_scale;
            out[i] *= mult[i];
          }
        } else {
          mult.clear();
        }
        break;
      }
    }

    if (out.shape() != out_shape)
      throw ShapeError("node '" + nd.name + "': produced shape " + out.shape().str() + ", expected " +
                       out_shape.str());
    if (const auto bad = out.first_nonfinite(); bad != out.size())
      throw NumericError("non-finite activation at node '" + nd.name + "' batch index " +
                         std::to_string(bad / std::max<std::size_t>(1, out.shape().sample())));
  }
  pass_counters().forward += batch;
  return tape;
}

template <class T>
Tape<T> forward(const Graph& graph, const ParamStore<T>& params, const Array4<T>& input, Mode mode,
                SeededRng& rng) {
  return forward(graph, params, std::span<const Array4<T>>(&input, 1), mode, rng);
}

template <class T, class Seeds>
auto backward_impl(Tape<T>& tape, const Seeds& seeds, const BackwardOptions& opt) {
  using namespace kernels;
  if (tape.consumed_) throw StateError("backward: tape already consumed");
  tape.consumed_ = true;
  const Graph& graph = *tape.graph_;
  const auto& nodes = graph.nodes();
  std::vector<Array4<T>> grads(nodes.size());

  // flows[i]: some requested gradient depends on the gradient at node i.
  std::vector<bool> flows(nodes.size(), false);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& nd = nodes[i];
    if (nd.kind == OpKind::input) {
      flows[i] = opt.input_grads.empty() || (nd.input_slot < opt.input_grads.size() && opt.input_grads[nd.input_slot]);
    } else {
      for (int in : nd.inputs) flows[i] = flows[i] || flows[static_cast<std::size_t>(in)];
      if (nd.kind == OpKind::maxunpool2x2) flows[i] = flows[static_cast<std::size_t>(nd.inputs[0])];
      if (nd.kind == OpKind::conv3x3 && opt.param_grads) flows[i] = true;
    }
  }

  auto accumulate = [&](int id, const Array4<T>& g) {
    auto& dst = grads[static_cast<std::size_t>(id)];
    if (dst.empty()) {
      dst = g;
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  };
  auto slot = [&](int id) -> Array4<T>& {
    auto& dst = grads[static_cast<std::size_t>(id)];
    if (dst.empty()) dst = Array4<T>(tape.acts_[static_cast<std::size_t>(id)].shape());
    return dst;
  };

  for (const auto& s : seeds) {
    const auto& act = tape.acts_.at(static_cast<std::size_t>(s.node));
    if (s.grad.shape() != act.shape())
      throw ShapeError("backward: seed gradient for node '" + nodes[static_cast<std::size_t>(s.node)].name +
                       "' has shape " + s.grad.shape().str() + ", expected " + act.shape().str());
    accumulate(s.node, s.grad);
  }

  Gradients<T> result;
  if (opt.param_grads) result.params = tape.params_->zeros_like();
  result.inputs.resize(graph.num_inputs());
  std::size_t batch = 0;

  for (std::size_t rid = nodes.size(); rid-- > 0;) {
    const OpNode& nd = nodes[rid];
    Array4<T>& g = grads[rid];
    if (g.empty()) continue;
    if (!flows[rid]) {
      g = Array4<T>();
      continue;
    }
    const Array4<T>& y = tape.acts_[rid];
    batch = y.shape().n;

    switch (nd.kind) {
      case OpKind::input:
        result.inputs[nd.input_slot] = std::move(g);
        break;
      case OpKind::conv3x3: {
        const int xid = nd.inputs[0];
        const auto& x = tape.acts_[static_cast<std::size_t>(xid)];
        const std::size_t C = x.shape().c, H = nd.h, W = nd.w, K = C * 9;
        const auto& wt = tape.params_->at(nd.param + ".w");
        CMapMat<T> Wm(wt.data.data(), static_cast<long>(nd.c), static_cast<long>(K));
        const bool want_dx = flows[static_cast<std::size_t>(xid)];
        Array4<T>* gx = want_dx ? &slot(xid) : nullptr;
        const PaddedGeometry geo{H, W};
        const std::size_t L = geo.cols();
        T* grid = scratch<T>(0, nd.c * L);
        T* padded = opt.param_grads ? scratch<T>(1, geo.buffer(C)) : nullptr;
        T* cols = opt.param_grads ? scratch<T>(2, K * L) : nullptr;
        T* dcols = want_dx ? scratch<T>(3, K * L) : nullptr;
        T* dpadded = want_dx ? scratch<T>(4, geo.buffer(C)) : nullptr;
        for (std::size_t n = 0; n < batch; ++n) {
          dense_to_grid(g.sample_ptr(n), nd.c, geo, grid);
          CMapMat<T> dY(grid, static_cast<long>(nd.c), static_cast<long>(L));
          if (opt.param_grads) {
            auto& gw = result.params.at(nd.param + ".w");
            auto& gb = result.params.at(nd.param + ".b");
            MapMat<T> dW(gw.data.data(), static_cast<long>(nd.c), static_cast<long>(K));
            pad_planes(x.sample_ptr(n), C, geo, padded);
            im2col_padded(padded, C, geo, cols);
            CMapMat<T> X(cols, static_cast<long>(K), static_cast<long>(L));
            dW.noalias() += dY * X.transpose();
            for (std::size_t o = 0; o < nd.c; ++o) gb.data[o] += dY.row(static_cast<long>(o)).sum();
          }
          if (want_dx) {
            MapMat<T> dX(dcols, static_cast<long>(K), static_cast<long>(L));
            dX.noalias() = Wm.transpose() * dY;
            std::fill(dpadded, dpadded + geo.buffer(C), T(0));
            col2im_padded_add(dcols, C, geo, dpadded);
            unpad_add(dpadded, C, geo, gx->sample_ptr(n));
          }
        }
        break;
      }
      case OpKind::relu: {
        auto& gx = slot(nd.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] > T(0) ? g[i] : T(0);
        break;
      }
      case OpKind::sigmoid: {
        auto& gx = slot(nd.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      }
      case OpKind::scale: {
        auto& gx = slot(nd.inputs[0]);
        const T f = static_cast<T>(nd.value);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
        break;
      }
      case OpKind::add: {
        accumulate(nd.inputs[0], g);
        accumulate(nd.inputs[1], g);
        break;
      }
      case OpKind::softmax: {
        auto& gx = slot(nd.inputs[0]);
        const std::size_t C = nd.c, HW = nd.h * nd.w;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* ys = y.sample_ptr(n);
          const T* gs = g.sample_ptr(n);
          T* dx = gx.sample_ptr(n);
          for (std::size_t p = 0; p < HW; ++p) {
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += gs[c * HW + p] * ys[c * HW + p];
            for (std::size_t c = 0; c < C; ++c) dx[c * HW + p] += ys[c * HW + p] * (gs[c * HW + p] - dot);
          }
        }
        break;
      }
      case OpKind::maxpool2x2: {
        auto& gx = slot(nd.inputs[0]);
        const auto& idx = tape.pool_idx_[rid];
        const std::size_t out_plane = nd.h * nd.w, in_plane = gx.shape().plane();
        const std::size_t planes = batch * nd.c;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = g.data() + pl * out_plane;
          const std::uint32_t* ix = idx.data() + pl * out_plane;
          T* dst = gx.data() + pl * in_plane;
          for (std::size_t i = 0; i < out_plane; ++i) dst[ix[i]] += src[i];
        }
        break;
      }
      case OpKind::maxunpool2x2: {
        auto& gx = slot(nd.inputs[0]);
        const auto& idx = tape.pool_idx_[static_cast<std::size_t>(nd.inputs[1])];
        const std::size_t in_plane = gx.shape().plane(), out_plane = nd.h * nd.w;
        const std::size_t planes = batch * nd.c;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = g.data() + pl * out_plane;
          const std::uint32_t* ix = idx.data() + pl * in_plane;
          T* dst = gx.data() + pl * in_plane;
          for (std::size_t i = 0; i < in_plane; ++i) dst[i] += src[ix[i]];
        }
        break;
      }
      case OpKind::concat: {
        std::size_t offset = 0;
        for (int xid : nd.inputs) {
          auto& gx = slot(xid);
          const std::size_t len = gx.shape().sample();
          for (std::size_t n = 0; n < batch; ++n) {
            const T* src = g.sample_ptr(n) + offset;
            T* dst = gx.sample_ptr(n);
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
          offset += len;
        }
        break;
      }
      case OpKind::dropout: {
        auto& gx = slot(nd.inputs[0]);
        const auto& mult = tape.dropout_mult_[rid];
        if (mult.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mult[i];
        }
        break;
      }
    }
    if (nd.kind != OpKind::input) g = Array4<T>();
  }

  for (std::size_t k = 0; k < result.inputs.size(); ++k) {
    const bool wanted = opt.input_grads.empty() || (k < opt.input_grads.size() && opt.input_grads[k]);
    if (wanted && result.inputs[k].empty()) {
      for (const auto& nd : nodes)
        if (nd.kind == OpKind::input && nd.input_slot == k)
          result.inputs[k] = Array4<T>(Shape4{batch, nd.c, nd.h, nd.w});
    }
    if (result.inputs[k].first_nonfinite() != result.inputs[k].size())
      throw NumericError("backward: non-finite input gradient");
  }
  for (const auto& [name, p] : result.params)
    for (T v : p.data)
      if (!std::isfinite(v)) throw NumericError("backward: non-finite gradient for parameter '" + name + "'");
  pass_counters().backward += batch;
  return result;
}

// Seeds the terminal node with `output_grad` and replays the tape once.
template <class T>
Gradients<T> backward(Tape<T>& tape, const Array4<T>& output_grad, const BackwardOptions& opt = {}) {
  std::vector<Seed<T>> seeds{{tape.graph().output(), output_grad}};
  return backward_impl(tape, seeds, opt);
}

// Seeds arbitrary nodes (e.g. a loss defined on logits upstream of a softmax).
template <class T>
Gradients<T> backward(Tape<T>& tape, const std::vector<Seed<T>>& seeds, const BackwardOptions& opt = {}) {
  return backward_impl(tape, seeds, opt);
}

// Max-unpool output is 3/4 zeros, so a conv reading it sees a quarter of its
// nominal fan-in.
inline constexpr double kUnpoolFanInFraction = 0.25;

// Effective fan-in of a conv node: in_channels * 9, scaled by the nonzero
// fraction of each input that comes straight out of an unpool.
inline double effective_fan_in(const Graph& graph, const OpNode& conv) {
  auto fan = [&](const OpNode& in) -> double {
    const double f = static_cast<double>(in.c * 9);
    return in.kind == OpKind::maxunpool2x2 ? f * kUnpoolFanInFraction : f;
  };
  const OpNode& in = graph.node(conv.inputs[0]);
  if (in.kind != OpKind::concat) return fan(in);
  double total = 0.0;
  for (int k : in.inputs) total += fan(graph.node(k));
  return total;
}

// Kaiming-normal weights (std = sqrt(2 / effective_fan_in)), zero biases.
// Conv nodes sharing a parameter name are initialized once.
template <class T>
ParamStore<T> init_params(const Graph& graph, SeededRng& rng) {
  ParamStore<T> store;
  for (const auto& nd : graph.nodes()) {
    if (nd.kind != OpKind::conv3x3 || store.contains(nd.param + ".w")) continue;
    const std::size_t in_c = graph.node(nd.inputs[0]).c;
    auto& w = store.add(nd.param + ".w", conv_weight_dims(nd.c, in_c));
    const double sd = std::sqrt(2.0 / effective_fan_in(graph, nd));
    for (auto& v : w.data) v = static_cast<T>(sd * rng.normal());
    store.add(nd.param + ".b", {static_cast<std::uint32_t>(nd.c)});
  }
  return store;
}

}  // namespace obsnet::nd
