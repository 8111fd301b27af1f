#pragma once

// Pixel-level detection and calibration metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "obsnet/error.hpp"
#include "obsnet/netpbm.hpp"
#include "obsnet/plane.hpp"
#include "obsnet/synthdata.hpp"

namespace obsnet::metrics {

// Pooled (score, label) pairs; positives are the pixels a detector should flag.
struct LabeledScores {
  std::vector<double> score;
  std::vector<std::uint8_t> positive;

  void push(double s, bool pos) {
    score.push_back(s);
    positive.push_back(pos ? 1 : 0);
  }
  std::size_t size() const { return score.size(); }
  std::size_t n_pos() const { return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1)); }
  std::size_t n_neg() const { return size() - n_pos(); }
};

namespace detail {

inline void require_both_classes(const LabeledScores& d) {
  if (d.score.size() != d.positive.size()) throw ShapeError("labeled scores: score/label length mismatch");
  if (d.n_pos() == 0 || d.n_neg() == 0) throw NumericError("single-class scores");
}

// Indices sorted by descending score; ties keep input order.
inline std::vector<std::size_t> descending(const LabeledScores& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d.score[a] > d.score[b]; });
  return idx;
}

// Cumulative (tp, fp) after each group of equal scores, highest score first.
struct Step {
  double score;
  std::size_t tp, fp;
};

inline std::vector<Step> threshold_steps(const LabeledScores& d) {
  const auto idx = descending(d);
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (d.positive[idx[i]] ? tp : fp) += 1;
    if (i + 1 == idx.size() || d.score[idx[i + 1]] != d.score[idx[i]]) steps.push_back({d.score[idx[i]], tp, fp});
  }
  return steps;
}

}  // namespace detail

// Mann-Whitney U with average ranks: P(s+ > s-) + 0.5 P(s+ == s-).
inline double auroc(const LabeledScores& d) {
  detail::require_both_classes(d);
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d.score[a] < d.score[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    while (j < idx.size() && d.score[idx[j]] == d.score[idx[i]]) pos += d.positive[idx[j++]];
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    pos_rank_sum += avg_rank * static_cast<double>(pos);
    i = j;
  }
  const double np = static_cast<double>(d.n_pos()), nn = static_cast<double>(d.n_neg());
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Average precision. Tied scores form one operating point, so the result does
// not depend on input order.
inline double aupr(const LabeledScores& d) {
  detail::require_both_classes(d);
  const double np = static_cast<double>(d.n_pos());
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& s : detail::threshold_steps(d)) {
    if (s.tp > prev_tp)
      ap += static_cast<double>(s.tp - prev_tp) / np * static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    prev_tp = s.tp;
  }
  return ap;
}

inline constexpr std::size_t kMinPositivesFpr95 = 20;

// FPR at the largest threshold whose TPR (score >= threshold) reaches 95%.
inline double fpr_at_95_tpr(const LabeledScores& d) {
  detail::require_both_classes(d);
  const std::size_t np = d.n_pos();
  if (np < kMinPositivesFpr95)
    throw NumericError("fpr95tpr needs at least " + std::to_string(kMinPositivesFpr95) + " positives, got " +
                       std::to_string(np));
  for (const auto& s : detail::threshold_steps(d))
    if (100 * s.tp >= 95 * np)  // integer form of TPR >= 0.95
      return static_cast<double>(s.fp) / static_cast<double>(d.n_neg());
  return 1.0;  // unreachable: the lowest threshold has TPR 1
}

inline constexpr std::size_t kAceRanges = 15;

// Adaptive calibration error over `ranges` equal-count confidence ranges;
// the first n % ranges ranges hold one extra sample.
inline double ace(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                  std::size_t ranges = kAceRanges) {
  if (confidence.size() != correct.size()) throw ShapeError("ace: confidence/correct length mismatch");
  if (ranges == 0 || confidence.size() < ranges)
    throw NumericError("ace: " + std::to_string(confidence.size()) + " samples for " + std::to_string(ranges) +
                       " ranges");
  std::vector<std::size_t> idx(confidence.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Ordering ties by correctness makes range contents independent of input order.
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return confidence[a] != confidence[b] ? confidence[a] < confidence[b] : correct[a] < correct[b];
  });
  const std::size_t base = idx.size() / ranges, extra = idx.size() % ranges;
  double total = 0.0;
  std::size_t at = 0;
  for (std::size_t r = 0; r < ranges; ++r) {
    const std::size_t len = base + (r < extra ? 1 : 0);
    double conf = 0.0, acc = 0.0;
    for (std::size_t k = at; k < at + len; ++k) {
      conf += confidence[idx[k]];
      acc += correct[idx[k]];
    }
    total += std::abs(acc - conf) / static_cast<double>(len);
    at += len;
  }
  return total / static_cast<double>(ranges);
}

enum class EvalMode { ood, error, attack };

inline const char* to_string(EvalMode m) {
  switch (m) {
    case EvalMode::ood: return "ood";
    case EvalMode::error: return "error";
    case EvalMode::attack: return "attack";
  }
  return "?";
}

inline EvalMode parse_mode(const std::string& s) {
  if (s == "ood") return EvalMode::ood;
  if (s == "error") return EvalMode::error;
  if (s == "attack") return EvalMode::attack;
  throw ConfigError("unknown eval mode '" + s + "' (expected ood, error or attack)");
}

struct MetricsReport {
  std::string method;
  EvalMode mode = EvalMode::ood;
  double fpr95tpr = 0.0, auroc = 0.0, aupr = 0.0, ace = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kResultsHeader = "method,mode,fpr95tpr,auroc,aupr,ace,n_pos,n_neg,seed";

inline std::string csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.method << ',' << to_string(r.mode) << ',' << r.fpr95tpr << ',' << r.auroc << ',' << r.aupr << ',' << r.ace
     << ',' << r.n_pos << ',' << r.n_neg << ',' << r.seed;
  return os.str();
}

// Everything evaluate() needs for one test image.
struct ImageEval {
  const ScoreMap* score = nullptr;
  const LabelMap* gt = nullptr;
  const LabelMap* pred = nullptr;          // Seg prediction on the scored image
  const AttackMask* attack_mask = nullptr;  // attack mode only
};

struct Pooled {
  LabeledScores scores;
  std::vector<double> confidence;  // 1 - score
  std::vector<std::uint8_t> correct;
};

// Pools non-void pixels. Positives: anomaly pixels (ood), Seg errors (error;
// anomaly pixels always count as errors) or attacked pixels (attack).
inline Pooled pool(std::span<const ImageEval> images, EvalMode mode) {
  Pooled p;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& im = images[n];
    if (!im.score || !im.gt || !im.pred) throw MissingArtifact("evaluate: incomplete inputs for image " + std::to_string(n));
    require_same_size(*im.score, *im.gt, "evaluate: score vs ground truth");
    require_same_size(*im.pred, *im.gt, "evaluate: prediction vs ground truth");
    if (mode == EvalMode::attack) {
      if (!im.attack_mask) throw MissingArtifact("evaluate: attack mode needs the attack mask of image " + std::to_string(n));
      require_same_size(*im.attack_mask, *im.gt, "evaluate: attack mask vs ground truth");
    }
    for (std::size_t i = 0; i < im.gt->size(); ++i) {
      const auto y = im.gt->data[i];
      if (y == data::kVoid || y == data::kPadding) continue;
      const double s = im.score->data[i];
      if (!std::isfinite(s)) throw NumericError("evaluate: non-finite score at image " + std::to_string(n));
      const bool correct = im.pred->data[i] == y;
      bool pos = false;
      switch (mode) {
        case EvalMode::ood: pos = y == data::kAnomaly; break;
        case EvalMode::error: pos = !correct; break;
        case EvalMode::attack: pos = im.attack_mask->data[i] != 0; break;
      }
      p.scores.push(s, pos);
      p.confidence.push_back(1.0 - s);
      p.correct.push_back(correct ? 1 : 0);
    }
  }
  return p;
}

inline MetricsReport evaluate(std::span<const ImageEval> images, EvalMode mode, const std::string& method,
                              std::uint64_t seed) {
  const auto p = pool(images, mode);
  MetricsReport r;
  r.method = method;
  r.mode = mode;
  r.seed = seed;
  r.n_pos = p.scores.n_pos();
  r.n_neg = p.scores.n_neg();
  r.auroc = auroc(p.scores);
  r.aupr = aupr(p.scores);
  r.fpr95tpr = fpr_at_95_tpr(p.scores);
  r.ace = ace(p.confidence, p.correct);
  return r;
}

// On-disk layout of one method's scoring run.
inline std::filesystem::path score_path(const std::filesystem::path& dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "score_%05zu.pfm", i);
  return dir / buf;
}
inline std::filesystem::path pred_path(const std::filesystem::path& dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pred_%05zu.pgm", i);
  return dir / buf;
}
inline std::filesystem::path mask_path(const std::filesystem::path& dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mask_%05zu.pgm", i);
  return dir / buf;
}

inline ScoreMap to_score_map(const pnm::GrayF& f) {
  ScoreMap m(f.height, f.width);
  m.data = f.pixels;
  return m;
}
inline pnm::GrayF to_grayf(const ScoreMap& m) { return {m.width, m.height, m.data}; }

inline LabelMap to_label_map(const pnm::Gray8& g) {
  LabelMap m(g.height, g.width);
  m.data = g.pixels;
  return m;
}

inline std::filesystem::path require_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw MissingArtifact("missing file " + p.string());
  return p;
}

// Reads `dir`'s score/prediction (and, in attack mode, mask) files for every
// test scene and evaluates them.
inline MetricsReport evaluate_dir(const std::filesystem::path& dir, std::span<const data::Scene> test, EvalMode mode,
                                  const std::string& method, std::uint64_t seed) {
  std::vector<ScoreMap> scores;
  std::vector<LabelMap> preds, masks;
  scores.reserve(test.size());
  preds.reserve(test.size());
  masks.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    scores.push_back(to_score_map(pnm::read_pfm(require_file(score_path(dir, i)))));
    preds.push_back(to_label_map(pnm::read_pgm(require_file(pred_path(dir, i)))));
    if (mode == EvalMode::attack) masks.push_back(to_label_map(pnm::read_pgm(require_file(mask_path(dir, i)))));
  }
  std::vector<ImageEval> items;
  for (std::size_t i = 0; i < test.size(); ++i)
    items.push_back({&scores[i], &test[i].labels, &preds[i], mode == EvalMode::attack ? &masks[i] : nullptr});
  return evaluate(items, mode, method, seed);
}

}  // namespace obsnet::metrics
