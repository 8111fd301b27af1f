#pragma once

// Comparison uncertainty scorers. Each maps a batch of images to one ScoreMap
// per image with values in [0,1].

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "obsnet/metrics.hpp"
#include "obsnet/seg_model.hpp"

namespace obsnet::base {

enum class Method { mcp, void_class, tempscale, mcdropout, mcda, gausspert, ensemble, odin };

inline constexpr std::array<Method, 8> kMethods{Method::mcp,      Method::void_class, Method::tempscale,
                                                Method::mcdropout, Method::mcda,      Method::gausspert,
                                                Method::ensemble,  Method::odin};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::mcp: return "mcp";
    case Method::void_class: return "void";
    case Method::tempscale: return "tempscale";
    case Method::mcdropout: return "mcdropout";
    case Method::mcda: return "mcda";
    case Method::gausspert: return "gausspert";
    case Method::ensemble: return "ensemble";
    case Method::odin: return "odin";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : kMethods)
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "'");
}

struct ScorerConfig {
  double temperature = 1.0;  // TempScale
  double odin_temperature = 1.0;
  double odin_epsilon = 0.0;
  std::size_t mc_passes = 50;
  std::size_t mcda_passes = 25;
  std::size_t gauss_members = 5;
  double gauss_sigma_rel = 0.01;
  std::size_t ensemble_members = 3;
  std::uint64_t seed = 0;
  std::size_t batch = 16;

  void validate() const {
    if (!(temperature > 0.0) || !(odin_temperature > 0.0)) throw ConfigError("scorer: temperatures must be > 0");
    if (!(odin_epsilon >= 0.0)) throw ConfigError("scorer: odin epsilon must be >= 0");
    if (mc_passes < 1 || mcda_passes < 1 || gauss_members < 1 || ensemble_members < 1 || batch < 1)
      throw ConfigError("scorer: pass, member and batch counts must be >= 1");
    if (!(gauss_sigma_rel >= 0.0)) throw ConfigError("scorer: gauss sigma must be >= 0");
  }
};

// --- per-pixel reductions ----------------------------------------------

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// 1 - max_c softmax(logits / T).
inline std::vector<ScoreMap> max_prob_scores(const nd::Array4<float>& logits, double T) {
  const auto& s = logits.shape();
  const std::size_t HW = s.plane();
  std::vector<ScoreMap> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    ScoreMap m(s.h, s.w);
    const float* z = logits.sample_ptr(n);
    for (std::size_t i = 0; i < HW; ++i) {
      double mx = z[i];
      for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[c * HW + i]));
      double sum = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) sum += std::exp((static_cast<double>(z[c * HW + i]) - mx) / T);
      m.data[i] = clamp01(1.0 - 1.0 / sum);
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<ScoreMap> channel_scores(const nd::Array4<float>& probs, std::size_t channel) {
  const auto& s = probs.shape();
  std::vector<ScoreMap> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    ScoreMap m(s.h, s.w);
    const float* p = probs.sample_ptr(n) + channel * s.plane();
    for (std::size_t i = 0; i < s.plane(); ++i) m.data[i] = clamp01(p[i]);
    out.push_back(std::move(m));
  }
  return out;
}

// H(p) / ln(C) per pixel of a (mean) probability map.
inline std::vector<ScoreMap> normalized_entropy(const nd::Array4<double>& probs) {
  const auto& s = probs.shape();
  const std::size_t HW = s.plane();
  const double norm = std::log(static_cast<double>(s.c));
  std::vector<ScoreMap> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    ScoreMap m(s.h, s.w);
    const double* p = probs.sample_ptr(n);
    for (std::size_t i = 0; i < HW; ++i) {
      double h = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = p[c * HW + i];
        if (v > 0.0) h -= v * std::log(v);
      }
      m.data[i] = clamp01(h / norm);
    }
    out.push_back(std::move(m));
  }
  return out;
}

// Running mean of softmax maps in double precision.
class ProbAverage {
 public:
  void add(const nd::Array4<float>& probs) {
    if (count_ == 0) sum_ = nd::Array4<double>(probs.shape());
    for (std::size_t i = 0; i < probs.size(); ++i) sum_[i] += probs[i];
    ++count_;
  }
  void add(const nd::Array4<double>& probs, const nd::Array4<double>& weight) {
    if (count_ == 0) {
      sum_ = nd::Array4<double>(probs.shape());
      weight_ = nd::Array4<double>(weight.shape());
    }
    for (std::size_t i = 0; i < probs.size(); ++i) sum_[i] += probs[i];
    for (std::size_t i = 0; i < weight.size(); ++i) weight_[i] += weight[i];
    ++count_;
  }
  // Mean over passes; with per-pixel weights, each pixel is divided by its own
  // accumulated weight.
  nd::Array4<double> mean() const {
    auto m = sum_;
    if (weight_.size() == 0) {
      for (auto& v : m.vec()) v /= static_cast<double>(count_);
      return m;
    }
    const auto& s = m.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < s.plane(); ++i) m.sample_ptr(n)[c * s.plane() + i] /= weight_.sample_ptr(n)[i];
    return m;
  }

 private:
  nd::Array4<double> sum_, weight_;
  std::size_t count_ = 0;
};

// --- MC data augmentation --------------------------------------------------

struct Augmentation {
  bool flip = false;
  int dy = 0, dx = 0;
};

inline constexpr int kMcdaMaxShift = 2;

// Pass 0 is the identity; later passes draw a flip and a shift in [-2, 2]^2.
inline std::vector<Augmentation> mcda_plan(std::size_t passes, SeededRng& rng) {
  std::vector<Augmentation> plan{Augmentation{}};
  while (plan.size() < passes)
    plan.push_back({rng.bernoulli(0.5), rng.uniform_int(-kMcdaMaxShift, kMcdaMaxShift),
                    rng.uniform_int(-kMcdaMaxShift, kMcdaMaxShift)});
  plan.resize(passes);
  return plan;
}

// Output pixel (y, x) reads the flipped input at (y - dy, x - dx), clamped to
// the border.
template <class T>
nd::Array4<T> apply_augmentation(const nd::Array4<T>& in, const Augmentation& a) {
  const auto& s = in.shape();
  nd::Array4<T> out(s);
  const int H = static_cast<int>(s.h), W = static_cast<int>(s.w);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = in.data() + p * s.plane();
    T* dst = out.data() + p * s.plane();
    for (int y = 0; y < H; ++y) {
      const int sy = std::clamp(y - a.dy, 0, H - 1);
      for (int x = 0; x < W; ++x) {
        int sx = std::clamp(x - a.dx, 0, W - 1);
        if (a.flip) sx = W - 1 - sx;
        dst[y * W + x] = src[sy * W + sx];
      }
    }
  }
  return out;
}

// Maps a prediction made on augmented input back to the original frame.
// Pixels whose source fell outside the augmented frame get weight 0.
struct Restored {
  nd::Array4<double> probs;
  nd::Array4<double> weight;  // N x 1 x H x W, 1 where valid
};

inline Restored invert_augmentation(const nd::Array4<float>& probs, const Augmentation& a) {
  const auto& s = probs.shape();
  Restored r{nd::Array4<double>(s), nd::Array4<double>({s.n, 1, s.h, s.w})};
  const int H = static_cast<int>(s.h), W = static_cast<int>(s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (int y = 0; y < H; ++y) {
      const int ay = y + a.dy;
      if (ay < 0 || ay >= H) continue;
      for (int x = 0; x < W; ++x) {
        const int fx = a.flip ? W - 1 - x : x;
        const int ax = fx + a.dx;
        if (ax < 0 || ax >= W) continue;
        for (std::size_t c = 0; c < s.c; ++c)
          r.probs.sample_ptr(n)[c * s.plane() + static_cast<std::size_t>(y * W + x)] =
              probs.sample_ptr(n)[c * s.plane() + static_cast<std::size_t>(ay * W + ax)];
        r.weight.sample_ptr(n)[y * W + x] = 1.0;
      }
    }
  }
  return r;
}

// --- Gaussian weight perturbation -------------------------------------------

// w + N(0, (sigma_rel * std(w))^2), std taken per parameter tensor.
inline seg::Params perturb_weights(const seg::Params& params, double sigma_rel, SeededRng& rng) {
  seg::Params out = params;
  for (auto& [name, p] : out) {
    double mean = 0.0, sq = 0.0;
    for (auto v : p.data) mean += v;
    mean /= static_cast<double>(p.size());
    for (auto v : p.data) sq += (v - mean) * (v - mean);
    const double sd = sigma_rel * std::sqrt(sq / static_cast<double>(p.size()));
    for (auto& v : p.data) v = static_cast<float>(v + sd * rng.normal());
  }
  return out;
}

// --- ODIN ------------------------------------------------------------------

// Input gradient of -mean log max softmax(logits / T), then one signed step
// against it over the whole image; returns 1 - max softmax(Seg(x') / T).
inline std::vector<ScoreMap> odin_scores(const seg::Params& params, const nd::Array4<float>& images, double T,
                                         double epsilon) {
  if (epsilon == 0.0) return max_prob_scores(seg::seg_forward_eval(params, images).logits(), T);
  auto pass = seg::seg_forward_eval(params, images);
  const auto& z = pass.logits();
  const auto& s = z.shape();
  const std::size_t HW = s.plane();
  const double inv = 1.0 / static_cast<double>(s.n * HW);
  nd::Array4<float> grad(s);
  std::vector<double> e(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* zn = z.sample_ptr(n);
    float* gn = grad.sample_ptr(n);
    for (std::size_t i = 0; i < HW; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c; ++c)
        if (zn[c * HW + i] > zn[best * HW + i]) best = c;
      double sum = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) sum += e[c] = std::exp((zn[c * HW + i] - zn[best * HW + i]) / T);
      for (std::size_t c = 0; c < s.c; ++c)
        gn[c * HW + i] = static_cast<float>((e[c] / sum - (c == best ? 1.0 : 0.0)) / T * inv);
    }
  }
  std::vector<nd::Seed<float>> seeds{{pass.graph().logits, std::move(grad)}};
  const auto g = nd::backward(pass.tape(), seeds, nd::BackwardOptions{.param_grads = false, .input_grads = {}});
  const auto& gx = g.inputs.at(0);
  nd::Array4<float> x = images;
  const float eps = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float sg = gx[i] > 0.0f ? 1.0f : (gx[i] < 0.0f ? -1.0f : 0.0f);
    x[i] = std::clamp(x[i] - eps * sg, 0.0f, 1.0f);
  }
  return max_prob_scores(seg::seg_forward_eval(params, x).logits(), T);
}

// Members depend on the seed alone, so every batch sees the same set.
inline std::vector<seg::Params> gauss_members(const seg::Params& params, const ScorerConfig& cfg) {
  std::vector<seg::Params> out;
  for (std::size_t k = 0; k < cfg.gauss_members; ++k) {
    auto rng = SeededRng::derive(SeededRng::derive(cfg.seed, 200).state(), k);
    out.push_back(perturb_weights(params, cfg.gauss_sigma_rel, rng));
  }
  return out;
}

// --- dispatch --------------------------------------------------------------

struct ScoringContext {
  const seg::Params* seg = nullptr;
  std::span<const seg::Params> ensemble;  // DeepEnsemble members
  ScorerConfig cfg;
};

inline void require_ensemble(const ScoringContext& ctx) {
  if (ctx.ensemble.size() < ctx.cfg.ensemble_members)
    throw MissingArtifact("ensemble: " + std::to_string(ctx.cfg.ensemble_members) + " members required, " +
                          std::to_string(ctx.ensemble.size()) + " available");
}

// Scores one batch. `batch_index` selects the random stream so results do not
// depend on how a split is chunked beyond the fixed batch size.
inline std::vector<ScoreMap> score_batch(Method m, const ScoringContext& ctx, const nd::Array4<float>& x,
                                         std::uint64_t batch_index) {
  const auto& cfg = ctx.cfg;
  const auto& params = *ctx.seg;
  auto rng = SeededRng::derive(SeededRng::derive(cfg.seed, static_cast<std::uint64_t>(m) + 100).state(), batch_index);
  switch (m) {
    case Method::mcp: return max_prob_scores(seg::seg_forward_eval(params, x).logits(), 1.0);
    case Method::void_class: return channel_scores(seg::seg_forward_eval(params, x).softmax(), arch::kNumClasses);
    case Method::tempscale: return max_prob_scores(seg::seg_forward_eval(params, x).logits(), cfg.temperature);
    case Method::odin: return odin_scores(params, x, cfg.odin_temperature, cfg.odin_epsilon);
    case Method::mcdropout: {
      ProbAverage avg;
      for (std::size_t k = 0; k < cfg.mc_passes; ++k)
        avg.add(seg::seg_forward(params, x, nd::Mode::eval, rng, seg::DropoutMode::stochastic).softmax());
      return normalized_entropy(avg.mean());
    }
    case Method::mcda: {
      ProbAverage avg;
      for (const auto& a : mcda_plan(cfg.mcda_passes, rng)) {
        const auto r = invert_augmentation(seg::seg_forward_eval(params, apply_augmentation(x, a)).softmax(), a);
        avg.add(r.probs, r.weight);
      }
      return normalized_entropy(avg.mean());
    }
    case Method::gausspert: {
      ProbAverage avg;
      for (const auto& w : gauss_members(params, cfg)) avg.add(seg::seg_forward_eval(w, x).softmax());
      return normalized_entropy(avg.mean());
    }
    case Method::ensemble: {
      require_ensemble(ctx);
      ProbAverage avg;
      for (std::size_t k = 0; k < cfg.ensemble_members; ++k) avg.add(seg::seg_forward_eval(ctx.ensemble[k], x).softmax());
      return normalized_entropy(avg.mean());
    }
  }
  throw ConfigError("unhandled method");
}

inline std::vector<ScoreMap> score_images(Method m, const ScoringContext& ctx, std::span<const data::Image> images) {
  ctx.cfg.validate();
  if (!ctx.seg) throw MissingArtifact("scorer: no segmenter parameters");
  if (m == Method::ensemble) require_ensemble(ctx);
  // Perturbed members are drawn once and scored like an ensemble.
  ScoringContext local = ctx;
  std::vector<seg::Params> members;
  if (m == Method::gausspert) {
    members = gauss_members(*ctx.seg, ctx.cfg);
    local.ensemble = members;
    local.cfg.ensemble_members = members.size();
  }
  const Method run = m == Method::gausspert ? Method::ensemble : m;
  std::vector<ScoreMap> out;
  for (std::size_t i = 0, b = 0; i < images.size(); i += ctx.cfg.batch, ++b) {
    const auto chunk = images.subspan(i, std::min(ctx.cfg.batch, images.size() - i));
    for (auto& s : score_batch(run, local, data::to_batch(chunk), b)) out.push_back(std::move(s));
  }
  return out;
}

// --- calibration on the held-out fold --------------------------------------

inline constexpr double kTempLo = 0.5, kTempHi = 5.0, kTempTol = 1e-3;

// In-distribution pixels of the fold with their per-pixel logits.
struct HeldOut {
  std::vector<nd::Array4<float>> logits;  // one per batch
  std::vector<std::vector<LabelMap>> gt;
};

inline HeldOut heldout_logits(const seg::Params& params, std::span<const data::Scene> fold, std::size_t batch = 16) {
  HeldOut h;
  for (std::size_t i = 0; i < fold.size(); i += batch) {
    const auto chunk = fold.subspan(i, std::min(batch, fold.size() - i));
    std::vector<data::Image> imgs;
    std::vector<LabelMap> gt;
    for (const auto& s : chunk) {
      imgs.push_back(s.image);
      gt.push_back(s.labels);
    }
    h.logits.push_back(seg::seg_forward_eval(params, data::to_batch(imgs)).logits());
    h.gt.push_back(std::move(gt));
  }
  return h;
}

// ACE of max softmax(logits / T) against argmax correctness on the fold.
inline double heldout_ace(const HeldOut& h, double T) {
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  for (std::size_t b = 0; b < h.logits.size(); ++b) {
    const auto scores = max_prob_scores(h.logits[b], T);
    const auto pred = seg::argmax_labels(h.logits[b]);
    for (std::size_t n = 0; n < scores.size(); ++n) {
      const auto& gt = h.gt[b][n];
      for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.data[i] >= arch::kNumClasses) continue;
        conf.push_back(1.0 - scores[n].data[i]);
        correct.push_back(pred[n].data[i] == gt.data[i]);
      }
    }
  }
  return metrics::ace(conf, correct);
}

// Golden-section search for the ACE-minimizing temperature on [0.5, 5].
inline double fit_temperature(const seg::Params& params, std::span<const data::Scene> fold) {
  if (fold.empty()) throw ConfigError("temperature scaling: empty held-out fold");
  const auto h = heldout_logits(params, fold);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kTempLo, b = kTempHi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = heldout_ace(h, c), fd = heldout_ace(h, d);
  while (b - a > kTempTol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = heldout_ace(h, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = heldout_ace(h, d);
    }
  }
  return 0.5 * (a + b);
}

inline constexpr std::array<double, 4> kOdinTemperatures{1.0, 2.0, 5.0, 10.0};
inline constexpr std::array<double, 3> kOdinEpsilons{0.001, 0.002, 0.004};

struct OdinChoice {
  double temperature = 1.0;
  double epsilon = 0.001;
  double heldout_auroc = 0.0;
};

// The held-out fold has no anomalies, so the grid point is chosen by how well
// the score separates Seg's errors from its correct pixels. Ties keep the
// earlier grid point.
inline OdinChoice fit_odin(const seg::Params& params, std::span<const data::Scene> fold, std::size_t batch = 16) {
  if (fold.empty()) throw ConfigError("odin: empty held-out fold");
  std::vector<data::Image> imgs;
  std::vector<LabelMap> gt;
  for (const auto& s : fold) {
    imgs.push_back(s.image);
    gt.push_back(s.labels);
  }
  const auto pred = seg::predict(params, imgs, batch);
  OdinChoice best;
  bool any = false;
  for (double T : kOdinTemperatures) {
    for (double eps : kOdinEpsilons) {
      metrics::LabeledScores ls;
      for (std::size_t i = 0; i < imgs.size(); i += batch) {
        const auto chunk = std::span<const data::Image>(imgs).subspan(i, std::min(batch, imgs.size() - i));
        const auto scores = odin_scores(params, data::to_batch(chunk), T, eps);
        for (std::size_t n = 0; n < scores.size(); ++n)
          for (std::size_t p = 0; p < scores[n].size(); ++p) {
            const auto y = gt[i + n].data[p];
            if (y >= arch::kNumClasses) continue;
            ls.push(scores[n].data[p], pred[i + n].data[p] != y);
          }
      }
      if (ls.n_pos() == 0 || ls.n_neg() == 0) return best;  // no errors to separate: keep the default
      const double a = metrics::auroc(ls);
      if (!any || a > best.heldout_auroc) best = {T, eps, a};
      any = true;
    }
  }
  return best;
}

}  // namespace obsnet::base
