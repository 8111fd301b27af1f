#pragma once

// Observer network: predicts where the frozen segmenter is wrong, from the
// image plus Seg's intermediate features and softmax.

#include <array>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "obsnet/laa.hpp"
#include "obsnet/losses.hpp"
#include "obsnet/seg_model.hpp"
#include "obsnet/segmenter.hpp"
#include "obsnet/sgd.hpp"

namespace obsnet::obs {

using Params = nd::ParamStore<float>;

// Which Seg signals the observer sees; disabled inputs are fed zeros so every
// variant shares one graph and parameter layout.
struct InputFlags {
  bool image = true;
  std::array<bool, 6> taps{true, true, true, true, true, true};
  bool softmax = true;

  static InputFlags full() { return {}; }
  static InputFlags without_skips() { return {true, {false, false, false, false, false, false}, false}; }
  static InputFlags without_image() { return {false, {true, true, true, true, true, true}, true}; }
  bool operator==(const InputFlags&) const = default;
};

struct ObsGraph {
  nd::Graph graph;
  int output = -1;
  int logit = -1;
};

inline constexpr const char* kHeadName = "obs_head";

// Input slots: 0 image, 1..6 Seg taps (enc1, enc2, enc3, dec3, dec2, dec1),
// 7 Seg softmax. Each tap is concatenated in front of the first conv of the
// observer stage with the same resolution and width.
inline ObsGraph build_obs_graph() {
  using arch::detail::conv_relu;
  ObsGraph o;
  auto& g = o.graph;
  const auto [w1, w2, w3] = arch::kWidths;
  const std::size_t S = arch::kImageSize;
  const int image = g.input("image", arch::kImageChannels, S, S);
  const int e1 = g.input("seg.enc1", w1, S, S);
  const int e2 = g.input("seg.enc2", w2, S / 2, S / 2);
  const int e3 = g.input("seg.enc3", w3, S / 4, S / 4);
  const int d3 = g.input("seg.dec3", w2, S / 4, S / 4);
  const int d2 = g.input("seg.dec2", w1, S / 2, S / 2);
  const int d1 = g.input("seg.dec1", w1, S, S);
  const int sm = g.input("seg.softmax", arch::kSegChannels, S, S);

  int x = conv_relu(g, "enc1.conv1", image, w1);
  x = conv_relu(g, "enc1.conv2", x, w1);
  const int p1 = g.maxpool2x2("enc1.pool", x);

  x = g.concat("enc2.cat", {p1, d2});
  x = conv_relu(g, "enc2.conv1", x, w2);
  x = conv_relu(g, "enc2.conv2", x, w2);
  const int p2 = g.maxpool2x2("enc2.pool", x);

  x = g.dropout("enc3.drop", p2, arch::kDropoutRate);
  x = g.concat("enc3.cat", {x, d3});
  x = conv_relu(g, "enc3.conv1", x, w3);
  x = conv_relu(g, "enc3.conv2", x, w3);
  const int p3 = g.maxpool2x2("enc3.pool", x);
  x = g.dropout("bottleneck.drop", p3, arch::kDropoutRate);

  x = g.maxunpool2x2("dec3.unpool", x, p3);
  x = g.concat("dec3.cat", {x, e3});
  x = conv_relu(g, "dec3.conv1", x, w3);
  x = conv_relu(g, "dec3.conv2", x, w2);
  x = g.dropout("dec3.drop", x, arch::kDropoutRate);

  x = g.maxunpool2x2("dec2.unpool", x, p2);
  x = g.concat("dec2.cat", {x, e2});
  x = conv_relu(g, "dec2.conv1", x, w2);
  x = conv_relu(g, "dec2.conv2", x, w1);

  x = g.maxunpool2x2("dec1.unpool", x, p1);
  x = g.concat("dec1.cat", {x, e1});
  x = conv_relu(g, "dec1.conv1", x, w1);
  x = conv_relu(g, "dec1.conv2", x, w1);

  x = g.concat("head.cat", {x, d1, sm});
  o.logit = g.conv3x3(kHeadName, x, 1);
  o.output = g.sigmoid("score", o.logit);
  g.set_output(o.output);
  return o;
}

inline const ObsGraph& obs_graph() {
  static const ObsGraph g = build_obs_graph();
  return g;
}

inline Params init_fresh(SeededRng& rng) { return nd::init_params<float>(obs_graph().graph, rng); }

// Fresh initialization, then Seg weights copied wherever a layer of the same
// name exists. When the observer layer has extra (concatenated) input
// channels, Seg's kernel fills the leading channels and the rest keep their
// fresh Kaiming values (fan-in over all input channels). The head stays fresh.
inline Params init_from_segmenter(const seg::Params& seg_params, SeededRng& rng) {
  Params p = init_fresh(rng);
  for (auto& [name, dst] : p) {
    if (!seg_params.contains(name)) continue;
    const auto& src = seg_params.at(name);
    if (src.dims == dst.dims) {
      dst.data = src.data;
      continue;
    }
    if (src.dims.size() != 4 || dst.dims.size() != 4 || src.dims[0] != dst.dims[0] || src.dims[1] > dst.dims[1])
      continue;
    const std::size_t out = src.dims[0], in_src = src.dims[1], in_dst = dst.dims[1];
    for (std::size_t o = 0; o < out; ++o)
      std::copy_n(src.data.begin() + static_cast<long>(o * in_src * 9), in_src * 9,
                  dst.data.begin() + static_cast<long>(o * in_dst * 9));
  }
  return p;
}

// Assembles the observer's eight inputs from the image batch and a Seg pass
// over the same images.
inline std::vector<nd::Array4<float>> obs_inputs(const nd::Array4<float>& images, const seg::SegPass& pass,
                                                 const InputFlags& flags) {
  const auto& g = obs_graph().graph;
  std::vector<nd::Array4<float>> in;
  in.reserve(8);
  auto feed = [&](const nd::Array4<float>& a, bool on, std::size_t slot) {
    const auto& node = g.node(static_cast<int>(slot));
    const nd::Shape4 want{images.shape().n, node.c, node.h, node.w};
    if (a.shape() != want)
      throw ShapeError("obs_forward: input '" + node.name + "' has shape " + a.shape().str() + ", expected " + want.str());
    in.push_back(on ? a : nd::Array4<float>(want));
  };
  feed(images, flags.image, 0);
  for (std::size_t t = 0; t < 6; ++t) feed(pass.tap(t), flags.taps[t], t + 1);
  feed(pass.softmax(), flags.softmax, 7);
  return in;
}

inline nd::Tape<float> obs_forward(const Params& params, const nd::Array4<float>& images, const seg::SegPass& pass,
                                   const InputFlags& flags, nd::Mode mode, SeededRng& rng) {
  const auto inputs = obs_inputs(images, pass, flags);
  return nd::forward(obs_graph().graph, params, std::span<const nd::Array4<float>>(inputs), mode, rng);
}

inline std::vector<ScoreMap> to_score_maps(const nd::Array4<float>& out) {
  const auto& s = out.shape();
  std::vector<ScoreMap> maps;
  for (std::size_t n = 0; n < s.n; ++n) {
    ScoreMap m(s.h, s.w);
    std::copy(out.sample_ptr(n), out.sample_ptr(n) + s.plane(), m.data.begin());
    maps.push_back(std::move(m));
  }
  return maps;
}

// One Seg pass plus one observer pass, both deterministic.
inline std::vector<ScoreMap> obs_score(const seg::Params& seg_params, const Params& params,
                                       const nd::Array4<float>& images, const InputFlags& flags = {}) {
  const auto pass = seg::seg_forward_eval(seg_params, images);
  SeededRng unused(0);
  const auto tape = obs_forward(params, images, pass, flags, nd::Mode::eval, unused);
  return to_score_maps(tape.output());
}

// --- training -----------------------------------------------------------

struct ObsTrainConfig {
  std::size_t epochs = 50;
  double lr = 0.05;
  std::size_t batch = 8;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double pos_weight = 2.0;
  double grad_clip = 0.5;  // global L2 norm; 0 disables
  std::vector<std::size_t> lr_halving_epochs{25, 45};
  laa::AttackConfig attack{};
  bool init_from_seg = true;
  std::size_t patience = 10;
  double heldout_fraction = 0.1;
  InputFlags inputs{};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0) || batch == 0 || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0) ||
        !(pos_weight > 0.0) || !(grad_clip >= 0.0))
      throw ConfigError("obsnet training: lr, batch, pos_weight must be positive; momentum in [0,1); grad clip >= 0");
    for (auto e : lr_halving_epochs)
      if (e < 1 || e > std::max<std::size_t>(epochs, 1))
        throw ConfigError("obsnet training: lr halving epoch " + std::to_string(e) + " outside [1, epochs]");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
      throw ConfigError("obsnet training: held-out fraction in (0,1)");
    attack.validate();
  }
};

struct ObsEpochRecord {
  std::size_t epoch = 0;
  double train_bce = 0.0;
  double heldout_bce = 0.0;
};

struct ObsTrainResult {
  Params params;
  std::vector<ObsEpochRecord> log;
  std::size_t best_epoch = 0;  // epoch whose parameters were returned
  bool stopped_early = false;

  std::string csv() const {
    std::ostringstream os;
    os << "epoch,train_bce,heldout_bce\n";
    os.precision(9);
    for (const auto& r : log) os << r.epoch << ',' << r.train_bce << ',' << r.heldout_bce << '\n';
    return os.str();
  }
};

inline constexpr std::uint64_t kStreamInit = 11, kStreamShuffle = 12, kStreamAugment = 13, kStreamDropout = 14,
                               kStreamAttack = 15, kStreamHeldout = 16;

namespace detail {

// Observer inputs and targets for one held-out batch; fixed across epochs.
struct CachedBatch {
  nd::Array4<float> images;
  std::vector<nd::Array4<float>> inputs;
  std::vector<std::uint8_t> target;
};

inline std::uint64_t stream(std::uint64_t seed, std::uint64_t family, std::uint64_t index) {
  return SeededRng::derive(SeededRng::derive(seed, family).state(), index).state();
}

}  // namespace detail

// Trains the observer against a frozen Seg. Returns the parameters with the
// lowest held-out weighted BCE (early stopping after `patience` epochs
// without improvement). Throws if Seg's parameters change.
inline ObsTrainResult train_obsnet(const seg::Params& seg_params, std::span<const data::Scene> train,
                                   const ObsTrainConfig& cfg) {
  cfg.validate();
  if (train.size() < 2) throw ConfigError("obsnet training: need at least two train scenes");
  const std::string seg_hash = seg::params_hash(seg_params);
  const std::size_t n_fit = seg::fit_count(train.size(), 1.0 - cfg.heldout_fraction);
  const auto fit = train.subspan(0, n_fit);
  const auto held = train.subspan(n_fit);
  const auto& og = obs_graph();

  SeededRng init_rng(detail::stream(cfg.seed, kStreamInit, 0));
  ObsTrainResult res;
  res.params = cfg.init_from_seg ? init_from_segmenter(seg_params, init_rng) : init_fresh(init_rng);
  auto sgd = nd::make_sgd(res.params, cfg.lr, cfg.momentum, cfg.weight_decay);

  std::vector<detail::CachedBatch> held_batches;
  for (std::size_t start = 0; start < held.size(); start += cfg.batch) {
    const auto chunk = held.subspan(start, std::min(cfg.batch, held.size() - start));
    SeededRng arng(detail::stream(cfg.seed, kStreamHeldout, start));
    auto sample = laa::make_obsnet_sample(seg_params, chunk, cfg.attack, arng);
    detail::CachedBatch cb;
    cb.inputs = obs_inputs(sample.images, *sample.seg_pass, cfg.inputs);
    cb.images = std::move(sample.images);
    cb.target = std::move(sample.target);
    held_batches.push_back(std::move(cb));
  }
  auto heldout_bce = [&](const Params& p) {
    double sum = 0.0;
    std::size_t count = 0;
    SeededRng unused(0);
    for (const auto& cb : held_batches) {
      if (std::none_of(cb.target.begin(), cb.target.end(), [](auto t) { return t != nd::kIgnoreTarget; })) continue;
      const auto tape = nd::forward(og.graph, p, std::span<const nd::Array4<float>>(cb.inputs), nd::Mode::eval, unused);
      const auto l = nd::weighted_bce(tape.output(), cb.target, cfg.pos_weight);
      sum += l.value * static_cast<double>(l.supervised);
      count += l.supervised;
    }
    return count ? sum / static_cast<double>(count) : 0.0;
  };

  double best = std::numeric_limits<double>::infinity();
  Params best_params = res.params;
  res.best_epoch = 0;
  std::size_t since_best = 0;
  const std::vector<bool> no_input_grads(og.graph.num_inputs(), false);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.lr = seg::lr_at(cfg.lr, cfg.lr_halving_epochs, epoch);
    SeededRng shuffle(detail::stream(cfg.seed, kStreamShuffle, epoch));
    const auto order = seg::epoch_order(n_fit, shuffle);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < n_fit; start += cfg.batch) {
      const std::uint64_t step_id = (static_cast<std::uint64_t>(epoch) << 32) | (start / cfg.batch);
      std::vector<data::Scene> batch;
      for (std::size_t k = start; k < std::min(n_fit, start + cfg.batch); ++k) {
        SeededRng aug(detail::stream(cfg.seed, kStreamAugment, (step_id << 8) | (k - start)));
        batch.push_back(data::augment(fit[order[k]], aug));
      }
      SeededRng arng(detail::stream(cfg.seed, kStreamAttack, step_id));
      auto sample = laa::make_obsnet_sample(seg_params, batch, cfg.attack, arng);
      if (std::none_of(sample.target.begin(), sample.target.end(), [](auto t) { return t != nd::kIgnoreTarget; }))
        continue;
      SeededRng drop(detail::stream(cfg.seed, kStreamDropout, step_id));
      auto tape = obs_forward(res.params, sample.images, *sample.seg_pass, cfg.inputs, nd::Mode::train, drop);
      const auto loss = nd::weighted_bce(tape.output(), sample.target, cfg.pos_weight);
      if (!std::isfinite(loss.value))
        throw NumericError("obsnet training diverged at epoch " + std::to_string(epoch));
      auto grads = nd::backward(tape, loss.grad, nd::BackwardOptions{.param_grads = true, .input_grads = no_input_grads});
      nd::clip_grad_norm(grads.params, cfg.grad_clip);
      nd::sgd_step(res.params, grads.params, sgd);
      loss_sum += loss.value * static_cast<double>(loss.supervised);
      loss_count += loss.supervised;
    }
    const double hb = heldout_bce(res.params);
    res.log.push_back({epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, hb});
    if (hb < best) {
      best = hb;
      best_params = res.params;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  if (!res.log.empty()) res.params = std::move(best_params);
  if (seg::params_hash(seg_params) != seg_hash)
    throw StateError("obsnet training modified the segmenter parameters");
  return res;
}

}  // namespace obsnet::obs
