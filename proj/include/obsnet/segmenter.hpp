#pragma once

// Segmenter training: standard supervised and LAA-robust variants.

#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "obsnet/laa.hpp"
#include "obsnet/losses.hpp"
#include "obsnet/seg_model.hpp"
#include "obsnet/sgd.hpp"

namespace obsnet::seg {

struct SegTrainConfig {
  std::size_t epochs = 40;
  double lr = 0.05;
  std::size_t batch = 8;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 0.5;  // global L2 norm; 0 disables
  std::vector<std::size_t> lr_halving_epochs{20, 35};
  std::uint64_t seed = 0;
  bool robust = false;
  double train_fraction = 0.9;  // leading share of the train split; the rest is the held-out fold

  void validate() const {
    if (!(lr > 0.0) || batch == 0 || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0) || !(grad_clip >= 0.0))
      throw ConfigError("seg training: lr, batch must be positive; momentum in [0,1); weight decay, grad clip >= 0");
    for (auto e : lr_halving_epochs)
      if (e < 1 || e > std::max<std::size_t>(epochs, 1))
        throw ConfigError("seg training: lr halving epoch " + std::to_string(e) + " outside [1, epochs]");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("seg training: train fraction in (0,1]");
  }
};

// Learning rate in effect during `epoch` (0-based): halved once per milestone
// already completed.
inline double lr_at(double base, const std::vector<std::size_t>& milestones, std::size_t epoch) {
  double lr = base;
  for (auto m : milestones)
    if (epoch >= m) lr *= 0.5;
  return lr;
}

// Split of the train set: [0, fit) for fitting, [fit, n) held out.
inline std::size_t fit_count(std::size_t n, double fraction) {
  if (fraction >= 1.0) return n;
  const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  return std::clamp<std::size_t>(k, 1, n);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double miou = 0.0;
};

struct SegTrainResult {
  Params params;
  std::vector<EpochRecord> log;

  std::string csv() const {
    std::ostringstream os;
    os << "epoch,loss,miou\n";
    os.precision(9);
    for (const auto& r : log) os << r.epoch << ',' << r.loss << ',' << r.miou << '\n';
    return os.str();
  }
};

// Deterministic permutation of [0, n) for one epoch (Fisher-Yates).
inline std::vector<std::size_t> epoch_order(std::size_t n, SeededRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  return order;
}

inline constexpr std::uint64_t kStreamInit = 1, kStreamShuffle = 2, kStreamAugment = 3, kStreamDropout = 4,
                               kStreamAttack = 5;

namespace detail {

inline std::vector<std::uint8_t> flat_labels(std::span<const data::Scene> batch) {
  std::vector<std::uint8_t> out;
  for (const auto& s : batch) {
    for (auto v : s.labels.data) out.push_back(v > data::kVoid ? nd::kIgnoreTarget : v);
  }
  return out;
}

}  // namespace detail

// Shared loop; `laa_cfg` non-null attacks every batch before the loss.
inline SegTrainResult train_segmenter_impl(std::span<const data::Scene> train, const SegTrainConfig& cfg,
                                           const laa::AttackConfig* laa_cfg) {
  cfg.validate();
  if (train.empty()) throw ConfigError("seg training: empty train split");
  const std::size_t n_fit = fit_count(train.size(), cfg.train_fraction);
  auto init_rng = SeededRng::derive(cfg.seed, kStreamInit);
  SegTrainResult res{init_seg_params(init_rng), {}};
  auto sgd = nd::make_sgd(res.params, cfg.lr, cfg.momentum, cfg.weight_decay);
  const auto& g = seg_graph();
  constexpr std::size_t C = arch::kNumClasses;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.lr = lr_at(cfg.lr, cfg.lr_halving_epochs, epoch);
    auto shuffle = SeededRng::derive(SeededRng::derive(cfg.seed, kStreamShuffle).state(), epoch);
    const auto order = epoch_order(n_fit, shuffle);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    std::array<std::uint64_t, C> tp{}, fp{}, fn{};

    for (std::size_t start = 0; start < n_fit; start += cfg.batch) {
      const std::size_t step = start / cfg.batch;
      const std::uint64_t step_id = (static_cast<std::uint64_t>(epoch) << 32) | step;
      std::vector<data::Scene> batch;
      for (std::size_t k = start; k < std::min(n_fit, start + cfg.batch); ++k) {
        auto aug = SeededRng::derive(SeededRng::derive(cfg.seed, kStreamAugment).state(), (step_id << 8) | (k - start));
        batch.push_back(data::augment(train[order[k]], aug));
      }
      std::vector<data::Image> imgs;
      for (const auto& s : batch) imgs.push_back(s.image);
      auto x = data::to_batch(imgs);
      const auto labels = detail::flat_labels(batch);

      if (laa_cfg && laa_cfg->epsilon > 0.0) {
        auto arng = SeededRng::derive(SeededRng::derive(cfg.seed, kStreamAttack).state(), step_id);
        std::vector<LabelMap> gt;
        for (const auto& s : batch) gt.push_back(s.labels);
        auto clean = seg_forward_eval(res.params, x);
        const auto pred = argmax_labels(clean.softmax());
        std::vector<AttackMask> masks;
        for (std::size_t n = 0; n < batch.size(); ++n) masks.push_back(laa::sample_mask(arng, *laa_cfg, &pred[n]).mask);
        x = laa::fgsm_from_pass(clean, x, masks, *laa_cfg, gt, arng);
      }

      auto drop = SeededRng::derive(SeededRng::derive(cfg.seed, kStreamDropout).state(), step_id);
      auto tape = nd::forward(g.graph, res.params, x, nd::Mode::train, drop);
      const auto loss = nd::softmax_cross_entropy(tape.activation(g.logits), labels, nd::kIgnoreTarget);
      if (!std::isfinite(loss.value))
        throw NumericError("seg training diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      std::vector<nd::Seed<float>> seeds{{g.logits, loss.grad}};
      auto grads = nd::backward(tape, seeds, nd::BackwardOptions{.param_grads = true, .input_grads = {false}});
      nd::clip_grad_norm(grads.params, cfg.grad_clip);
      nd::sgd_step(res.params, grads.params, sgd);
      loss_sum += loss.value;
      ++steps;

      const auto pred = argmax_labels(tape.activation(g.softmax));
      for (std::size_t n = 0; n < batch.size(); ++n) {
        for (std::size_t i = 0; i < pred[n].size(); ++i) {
          const auto y = batch[n].labels.data[i], p = pred[n].data[i];
          if (y >= C) continue;
          if (p == y) {
            ++tp[y];
          } else {
            ++fn[y];
            if (p < C) ++fp[p];
          }
        }
      }
    }
    double iou_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const auto d = tp[c] + fp[c] + fn[c];
      if (d == 0) continue;
      iou_sum += static_cast<double>(tp[c]) / static_cast<double>(d);
      ++counted;
    }
    res.log.push_back({epoch, loss_sum / static_cast<double>(steps), counted ? iou_sum / static_cast<double>(counted) : 0.0});
  }
  return res;
}

inline SegTrainResult train_segmenter(std::span<const data::Scene> train, const SegTrainConfig& cfg) {
  return train_segmenter_impl(train, cfg, nullptr);
}

// Every batch is attacked with `laa_cfg` (against the current weights) before
// the loss. With epsilon 0 this reproduces train_segmenter exactly.
inline SegTrainResult train_segmenter_robust(std::span<const data::Scene> train, const SegTrainConfig& cfg,
                                             const laa::AttackConfig& laa_cfg) {
  laa_cfg.validate();
  return train_segmenter_impl(train, cfg, &laa_cfg);
}

}  // namespace obsnet::seg
