#pragma once

// Local adversarial attacks: region masks and masked single-step FGSM.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "obsnet/losses.hpp"
#include "obsnet/seg_model.hpp"

namespace obsnet::laa {

enum class Region { all_pixels, sparse_pixels, class_pixels, square_patch, random_shape };
enum class Direction { min_pc, max_pk };
enum class GradLabel { pred, gt };

inline constexpr std::array<Region, 5> kRegions{Region::all_pixels, Region::sparse_pixels, Region::class_pixels,
                                                Region::square_patch, Region::random_shape};

struct AttackConfig {
  double epsilon = 0.02;
  Region region = Region::random_shape;
  Direction direction = Direction::min_pc;
  GradLabel grad_label = GradLabel::pred;
  double area_min = 0.05, area_max = 0.30;  // fraction of the image, shaped regions
  double sparse_density = 0.05;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be >= 0");
    if (!(area_min > 0.0 && area_min <= area_max && area_max < 1.0))
      throw ConfigError("attack: area range must satisfy 0 < min <= max < 1");
    if (!(sparse_density > 0.0 && sparse_density < 1.0)) throw ConfigError("attack: sparse density must be in (0,1)");
  }
};

// Short names used on the command line and in configs.
inline const char* to_string(Region r) {
  switch (r) {
    case Region::all_pixels: return "all";
    case Region::sparse_pixels: return "sparse";
    case Region::class_pixels: return "class";
    case Region::square_patch: return "square";
    case Region::random_shape: return "shape";
  }
  return "?";
}

inline const char* to_string(Direction d) { return d == Direction::min_pc ? "minpc" : "maxpk"; }

inline Region parse_region(const std::string& s) {
  for (Region r : kRegions)
    if (s == to_string(r)) return r;
  throw ConfigError("unknown attack region '" + s + "' (all|sparse|class|square|shape)");
}

inline Direction parse_direction(const std::string& s) {
  if (s == "minpc") return Direction::min_pc;
  if (s == "maxpk") return Direction::max_pk;
  throw ConfigError("unknown attack direction '" + s + "' (minpc|maxpk)");
}

// --- masks --------------------------------------------------------------

struct AreaBounds {
  std::size_t lo = 0, hi = 0;
};

inline AreaBounds area_bounds(const AttackConfig& cfg, std::size_t H, std::size_t W) {
  const double hw = static_cast<double>(H * W);
  return {static_cast<std::size_t>(std::ceil(cfg.area_min * hw)), static_cast<std::size_t>(std::floor(cfg.area_max * hw))};
}

// Side lengths whose square area respects the area range (square image).
inline std::pair<int, int> square_side_range(const AttackConfig& cfg, std::size_t side) {
  const double s = static_cast<double>(side);
  return {static_cast<int>(std::ceil(s * std::sqrt(cfg.area_min))), static_cast<int>(std::floor(s * std::sqrt(cfg.area_max)))};
}

inline std::size_t popcount(const AttackMask& m) {
  return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
}

inline bool is_connected(const AttackMask& m) {
  const std::size_t H = m.height, W = m.width;
  const auto first = std::find(m.data.begin(), m.data.end(), std::uint8_t{1});
  if (first == m.data.end()) return false;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::size_t> stack{static_cast<std::size_t>(first - m.data.begin())};
  seen[stack[0]] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    ++reached;
    const std::size_t y = i / W, x = i % W;
    auto visit = [&](std::size_t j) {
      if (m.data[j] && !seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    };
    if (y > 0) visit(i - W);
    if (y + 1 < H) visit(i + W);
    if (x > 0) visit(i - 1);
    if (x + 1 < W) visit(i + 1);
  }
  return reached == popcount(m);
}

namespace detail {

inline AttackMask square_patch(SeededRng& rng, const AttackConfig& cfg, std::size_t H, std::size_t W) {
  auto [lo, hi] = square_side_range(cfg, std::min(H, W));
  if (lo > hi) throw ConfigError("attack: area range admits no square side");
  const int side = rng.uniform_int(lo, hi);
  const int y0 = rng.uniform_int(0, static_cast<int>(H) - side);
  const int x0 = rng.uniform_int(0, static_cast<int>(W) - side);
  AttackMask m(H, W, 0);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  return m;
}

// Pixel-exact erosion/dilation toward [lo, hi]: pixels are added in BFS order
// from the shape or removed in reverse BFS order, which keeps it connected.
inline void clamp_area(AttackMask& m, AreaBounds b) {
  const std::size_t H = m.height, W = m.width;
  std::size_t area = popcount(m);
  auto neighbours = [&](std::size_t i, auto&& f) {
    const std::size_t y = i / W, x = i % W;
    if (y > 0) f(i - W);
    if (y + 1 < H) f(i + W);
    if (x > 0) f(i - 1);
    if (x + 1 < W) f(i + 1);
  };
  if (area < b.lo) {
    std::vector<std::uint8_t> queued(m.data);
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.data[i]) q.push_back(i);
    while (area < b.lo && !q.empty()) {
      const std::size_t i = q.front();
      q.pop_front();
      neighbours(i, [&](std::size_t j) {
        if (queued[j] || area >= b.lo) return;
        queued[j] = 1;
        m.data[j] = 1;
        ++area;
        q.push_back(j);
      });
    }
  } else if (area > b.hi) {
    const auto first = static_cast<std::size_t>(std::find(m.data.begin(), m.data.end(), std::uint8_t{1}) - m.data.begin());
    std::vector<std::size_t> order{first};
    std::vector<std::uint8_t> seen(m.size(), 0);
    seen[first] = 1;
    for (std::size_t k = 0; k < order.size(); ++k)
      neighbours(order[k], [&](std::size_t j) {
        if (m.data[j] && !seen[j]) {
          seen[j] = 1;
          order.push_back(j);
        }
      });
    for (std::size_t k = order.size(); k-- > 0 && area > b.hi;) {
      m.data[order[k]] = 0;
      --area;
    }
  }
}

// Union of 3-8 rotated ellipses. Each ellipse after the first is centred on a
// pixel of the union so far, so the shape is connected by construction.
inline std::optional<AttackMask> random_shape_once(SeededRng& rng, std::size_t H, std::size_t W) {
  constexpr int kSpan = 48;  // local canvas, centred on the first ellipse
  constexpr int kOrigin = kSpan;
  const int L = 2 * kSpan + 1;
  std::vector<std::uint8_t> local(static_cast<std::size_t>(L * L), 0);
  std::vector<std::pair<int, int>> members;
  const int n = rng.uniform_int(3, 8);
  int cy = kOrigin, cx = kOrigin;
  for (int e = 0; e < n; ++e) {
    if (e > 0) {
      const auto& c = members[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(members.size()) - 1))];
      cy = c.first, cx = c.second;
    }
    const double a = rng.uniform(3.0, 10.0), b = rng.uniform(3.0, 10.0);
    const double th = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    const int r = static_cast<int>(std::ceil(std::max(a, b)));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        if (u * u + v * v > 1.0) continue;
        const int y = cy + dy, x = cx + dx;
        if (y < 0 || y >= L || x < 0 || x >= L) continue;
        auto& px = local[static_cast<std::size_t>(y * L + x)];
        if (!px) {
          px = 1;
          members.emplace_back(y, x);
        }
      }
    }
  }
  int y0 = L, y1 = -1, x0 = L, x1 = -1;
  for (auto [y, x] : members) {
    y0 = std::min(y0, y), y1 = std::max(y1, y);
    x0 = std::min(x0, x), x1 = std::max(x1, x);
  }
  const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
  if (bh > static_cast<int>(H) || bw > static_cast<int>(W)) return std::nullopt;
  const int oy = rng.uniform_int(0, static_cast<int>(H) - bh);
  const int ox = rng.uniform_int(0, static_cast<int>(W) - bw);
  AttackMask m(H, W, 0);
  for (auto [y, x] : members) m(static_cast<std::size_t>(y - y0 + oy), static_cast<std::size_t>(x - x0 + ox)) = 1;
  return m;
}

}  // namespace detail

inline constexpr int kShapeRetries = 20;

struct MaskSample {
  AttackMask mask;
  bool fell_back = false;  // class_pixels replaced by square_patch
};

// `pred` is only consulted for class_pixels.
inline MaskSample sample_mask(SeededRng& rng, const AttackConfig& cfg, const LabelMap* pred,
                              std::size_t H = arch::kImageSize, std::size_t W = arch::kImageSize) {
  MaskSample out;
  switch (cfg.region) {
    case Region::all_pixels:
      out.mask = AttackMask(H, W, 1);
      break;
    case Region::sparse_pixels:
      out.mask = AttackMask(H, W, 0);
      for (auto& v : out.mask.data) v = rng.bernoulli(cfg.sparse_density) ? 1 : 0;
      break;
    case Region::square_patch:
      out.mask = detail::square_patch(rng, cfg, H, W);
      break;
    case Region::random_shape: {
      const auto bounds = area_bounds(cfg, H, W);
      std::optional<AttackMask> last;
      for (int attempt = 0; attempt < kShapeRetries; ++attempt) {
        auto m = detail::random_shape_once(rng, H, W);
        if (!m) continue;
        const std::size_t a = popcount(*m);
        last = std::move(m);
        if (a >= bounds.lo && a <= bounds.hi) break;
      }
      if (!last) last = detail::square_patch(rng, cfg, H, W);
      detail::clamp_area(*last, bounds);
      out.mask = std::move(*last);
      break;
    }
    case Region::class_pixels: {
      if (!pred) throw ConfigError("attack: class_pixels needs the predicted label map");
      require_same_size(*pred, AttackMask(H, W), "sample_mask");
      std::array<std::size_t, 256> count{};
      for (auto v : pred->data) ++count[v];
      std::vector<std::uint8_t> eligible;
      for (std::size_t c = 0; c < count.size(); ++c)
        if (count[c] > 0 && 100 * count[c] >= H * W) eligible.push_back(static_cast<std::uint8_t>(c));
      if (eligible.empty()) {
        out.mask = detail::square_patch(rng, cfg, H, W);
        out.fell_back = true;
        break;
      }
      const auto cls = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
      out.mask = AttackMask(H, W, 0);
      for (std::size_t i = 0; i < out.mask.size(); ++i) out.mask.data[i] = pred->data[i] == cls ? 1 : 0;
      break;
    }
  }
  return out;
}

// --- masked FGSM --------------------------------------------------------

inline float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

// Attacks a batch from a clean eval-mode Seg pass over `images` (the pass's
// tape is consumed). `masks` has one entry per image; `gt` supplies labels when
// grad_label is gt; `target_rng` draws the per-image class offset for max_pk.
inline nd::Array4<float> fgsm_from_pass(seg::SegPass& pass, const nd::Array4<float>& images,
                                        std::span<const AttackMask> masks, const AttackConfig& cfg,
                                        std::span<const LabelMap> gt, SeededRng& target_rng) {
  const auto& s = images.shape();
  if (masks.size() != s.n) throw ShapeError("fgsm_local: one mask per image required");
  for (const auto& m : masks)
    if (m.height != s.h || m.width != s.w) throw ShapeError("fgsm_local: mask size does not match image");
  nd::Array4<float> out = images;
  if (cfg.epsilon == 0.0) return out;

  const std::size_t HW = s.plane(), C = arch::kSegChannels;
  std::vector<std::uint8_t> labels(s.n * HW);
  const auto pred = seg::argmax_labels(pass.softmax());
  for (std::size_t n = 0; n < s.n; ++n) {
    const LabelMap* src = &pred[n];
    if (cfg.grad_label == GradLabel::gt) {
      if (gt.size() != s.n) throw ShapeError("fgsm_local: ground-truth labels required for grad_label=gt");
      src = &gt[n];
    }
    const int r = cfg.direction == Direction::max_pk ? target_rng.uniform_int(1, static_cast<int>(C) - 1) : 0;
    for (std::size_t i = 0; i < HW; ++i) {
      const std::uint8_t c = src->data[i];
      if (c >= C) {
        labels[n * HW + i] = nd::kIgnoreTarget;
        continue;
      }
      labels[n * HW + i] = cfg.direction == Direction::max_pk ? static_cast<std::uint8_t>((c + r) % C) : c;
    }
  }
  const auto loss = nd::softmax_cross_entropy(pass.logits(), labels, nd::kIgnoreTarget);
  std::vector<nd::Seed<float>> seeds{{pass.graph().logits, loss.grad}};
  const auto grads = nd::backward(pass.tape(), seeds, nd::BackwardOptions{.param_grads = false, .input_grads = {}});
  const auto& gx = grads.inputs.at(0);
  if (const auto bad = gx.first_nonfinite(); bad != gx.size())
    throw NumericError("fgsm_local: non-finite input gradient at flat index " + std::to_string(bad));

  const float step = static_cast<float>(cfg.direction == Direction::min_pc ? cfg.epsilon : -cfg.epsilon);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto& m = masks[n].data;
    for (std::size_t c = 0; c < s.c; ++c) {
      float* x = out.sample_ptr(n) + c * HW;
      const float* g = gx.sample_ptr(n) + c * HW;
      for (std::size_t i = 0; i < HW; ++i)
        if (m[i]) x[i] = std::clamp(x[i] + step * sign(g[i]), 0.0f, 1.0f);
    }
  }
  return out;
}

// Masked FGSM on a batch. Seg runs in eval mode with dropout off; its
// parameters are only read.
inline nd::Array4<float> fgsm_local(const seg::Params& params, const nd::Array4<float>& images,
                                    std::span<const AttackMask> masks, const AttackConfig& cfg,
                                    std::span<const LabelMap> gt, SeededRng& target_rng) {
  cfg.validate();
  if (cfg.epsilon == 0.0) {
    if (masks.size() != images.shape().n) throw ShapeError("fgsm_local: one mask per image required");
    return images;
  }
  auto pass = seg::seg_forward_eval(params, images);
  return fgsm_from_pass(pass, images, masks, cfg, gt, target_rng);
}

// --- observer training samples -----------------------------------------

// Error target: 1 where Seg's argmax differs from the label, ignore where the
// label is void (or anomaly), 0 elsewhere. NHW order.
inline std::vector<std::uint8_t> error_target(std::span<const LabelMap> pred, std::span<const LabelMap> labels) {
  if (pred.size() != labels.size()) throw ShapeError("error_target: batch size mismatch");
  std::vector<std::uint8_t> t;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    require_same_size(pred[n], labels[n], "error_target");
    for (std::size_t i = 0; i < labels[n].size(); ++i) {
      const auto y = labels[n].data[i];
      t.push_back(y >= arch::kNumClasses ? nd::kIgnoreTarget : (pred[n].data[i] != y ? 1 : 0));
    }
  }
  return t;
}

struct ObsSample {
  nd::Array4<float> images;  // x~
  std::vector<AttackMask> masks;
  std::vector<std::uint8_t> target;
  std::optional<seg::SegPass> seg_pass;  // Seg on x~, eval mode, reusable as observer input
};

// Draws a mask per scene, attacks the batch, and labels Seg's failures on x~.
inline ObsSample make_obsnet_sample(const seg::Params& params, std::span<const data::Scene> scenes,
                                    const AttackConfig& cfg, SeededRng& rng) {
  cfg.validate();
  ObsSample out;
  std::vector<data::Image> imgs;
  std::vector<LabelMap> labels;
  for (const auto& sc : scenes) {
    imgs.push_back(sc.image);
    labels.push_back(sc.labels);
  }
  const auto clean = data::to_batch(imgs);
  const bool attack = cfg.epsilon > 0.0;
  std::optional<seg::SegPass> clean_pass;
  std::vector<LabelMap> clean_pred;
  if (attack || cfg.region == Region::class_pixels) {
    clean_pass.emplace(seg::seg_forward_eval(params, clean));
    clean_pred = seg::argmax_labels(clean_pass->softmax());
  }
  for (std::size_t n = 0; n < scenes.size(); ++n)
    out.masks.push_back(sample_mask(rng, cfg, clean_pred.empty() ? nullptr : &clean_pred[n]).mask);
  out.images = attack ? fgsm_from_pass(*clean_pass, clean, out.masks, cfg, labels, rng) : clean;
  out.seg_pass.emplace(seg::seg_forward_eval(params, out.images));
  out.target = error_target(seg::argmax_labels(out.seg_pass->softmax()), labels);
  return out;
}

}  // namespace obsnet::laa
