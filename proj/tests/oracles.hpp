#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Deliberately naive: no sorting, no shared code with the
// library under test.

#include <cstdint>
#include <set>
#include <vector>

#include "obsnet/metrics.hpp"
#include "obsnet/rng.hpp"

namespace oracle {

// P(s+ > s-) + 0.5 P(s+ == s-) over all positive/negative pairs.
inline double auroc_pairs(const obsnet::metrics::LabeledScores& d) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d.positive[i]) continue;
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (d.positive[j]) continue;
      pairs += 1.0;
      if (d.score[i] > d.score[j]) wins += 1.0;
      else if (d.score[i] == d.score[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Counts {
  std::size_t tp = 0, fp = 0;
};

inline Counts at_threshold(const obsnet::metrics::LabeledScores& d, double tau) {
  Counts c;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.score[i] >= tau) (d.positive[i] ? c.tp : c.fp) += 1;
  return c;
}

// Precision-recall step integral: sum over distinct thresholds (high to low)
// of recall gain times precision at that threshold.
inline double aupr_steps(const obsnet::metrics::LabeledScores& d) {
  const std::set<double> taus(d.score.begin(), d.score.end());
  std::size_t np = 0;
  for (auto p : d.positive) np += p;
  double ap = 0.0, prev_recall = 0.0;
  for (auto it = taus.rbegin(); it != taus.rend(); ++it) {
    const auto c = at_threshold(d, *it);
    const double recall = static_cast<double>(c.tp) / static_cast<double>(np);
    if (c.tp + c.fp > 0) ap += (recall - prev_recall) * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    prev_recall = recall;
  }
  return ap;
}

// Scans every candidate threshold; returns the FPR at the largest one whose
// TPR reaches 95%.
inline double fpr95_scan(const obsnet::metrics::LabeledScores& d) {
  const std::set<double> taus(d.score.begin(), d.score.end());
  std::size_t np = 0;
  for (auto p : d.positive) np += p;
  const std::size_t nn = d.size() - np;
  double best_tau = 0.0;
  bool found = false;
  for (double tau : taus) {
    const auto c = at_threshold(d, tau);
    if (100 * c.tp >= 95 * np && (!found || tau > best_tau)) {
      best_tau = tau;
      found = true;
    }
  }
  return static_cast<double>(at_threshold(d, best_tau).fp) / static_cast<double>(nn);
}

// Random instance with at least 20 positives and 1 negative. Odd instances
// quantize scores to a handful of levels so ties are common.
inline obsnet::metrics::LabeledScores random_instance(std::uint64_t seed, std::size_t max_n = 2000) {
  auto rng = obsnet::SeededRng::derive(0xACC0ULL, seed);
  const std::size_t n = static_cast<std::size_t>(rng.uniform_int(40, static_cast<int>(max_n)));
  const double p_pos = rng.uniform(0.1, 0.6);
  const int levels = seed % 2 ? rng.uniform_int(3, 12) : 0;
  obsnet::metrics::LabeledScores d;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i < 20 || (i == 20 ? false : rng.bernoulli(p_pos));
    double s = rng.uniform() * 0.7 + (pos ? rng.uniform(0.0, 0.3) : 0.0);
    if (levels) s = static_cast<double>(static_cast<int>(s * levels)) / levels;
    d.push(s, pos);
  }
  // Shuffle so the forced positives are not all at the front.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(d.score[i - 1], d.score[j]);
    std::swap(d.positive[i - 1], d.positive[j]);
  }
  return d;
}

}  // namespace oracle
