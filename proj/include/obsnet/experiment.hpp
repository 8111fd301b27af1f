#pragma once

// Experiment orchestration shared by the command-line tool and the acceptance
// harness: flat key=value configuration, scoring runs on disk, and the full
// generate -> train -> score -> evaluate pipeline.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "obsnet/baselines.hpp"
#include "obsnet/metrics.hpp"
#include "obsnet/obsnet.hpp"
#include "obsnet/segmenter.hpp"

namespace obsnet::exp {

inline constexpr const char* kObsnetMethod = "obsnet";

// ObsNet first, then the baselines in their declaration order.
inline std::vector<std::string> all_methods() {
  std::vector<std::string> m{kObsnetMethod};
  for (auto b : base::kMethods) m.emplace_back(base::to_string(b));
  return m;
}

struct ExperimentConfig {
  std::filesystem::path root = "run";
  std::uint64_t seed = 7;
  std::size_t n_train = 400;
  std::size_t n_test = 200;
  seg::SegTrainConfig seg{};
  obs::ObsTrainConfig obs{};
  base::ScorerConfig scorer{};
  std::vector<std::string> methods = all_methods();
  std::vector<metrics::EvalMode> modes{metrics::EvalMode::ood, metrics::EvalMode::error, metrics::EvalMode::attack};
  std::vector<double> sweep_grid{0.005, 0.01, 0.02, 0.05, 0.1};
  double attack_eval_epsilon = 0.02;  // square-patch attack applied to test images in attack mode

  // Every component follows the experiment seed.
  void propagate_seed() {
    seg.seed = seed;
    obs.seed = seed;
    scorer.seed = seed;
  }

  void validate() const {
    if (n_train < 2 || n_test < 1) throw ConfigError("config: need n_train >= 2 and n_test >= 1");
    seg.validate();
    obs.validate();
    scorer.validate();
    if (methods.empty()) throw ConfigError("config: no methods");
    for (const auto& m : methods)
      if (m != kObsnetMethod) base::parse_method(m);
    if (!(attack_eval_epsilon >= 0.0)) throw ConfigError("config: eval.attack_epsilon must be >= 0");
    for (double e : sweep_grid)
      if (!(e >= 0.0)) throw ConfigError("config: sweep grid values must be >= 0");
  }
};

namespace detail {

template <class T>
std::string join(const std::vector<T>& v, auto&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace detail

inline std::string inputs_name(const obs::InputFlags& f) {
  if (f == obs::InputFlags::without_skips()) return "noskip";
  if (f == obs::InputFlags::without_image()) return "noimage";
  return "full";
}

inline obs::InputFlags parse_inputs(const std::string& s) {
  if (s == "full") return obs::InputFlags::full();
  if (s == "noskip") return obs::InputFlags::without_skips();
  if (s == "noimage") return obs::InputFlags::without_image();
  throw ConfigError("unknown observer inputs '" + s + "' (full|noskip|noimage)");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::logic_error&) {
    throw ConfigError("config: '" + key + "' is out of range");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_epochs(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : detail::split_list(v)) out.push_back(parse_uint(key, s));
  return out;
}

inline std::vector<double> parse_grid(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : detail::split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

// Milestones of a default schedule stretched to `epochs`.
inline std::vector<std::size_t> scaled_milestones(const std::vector<std::size_t>& defaults, std::size_t default_epochs,
                                                  std::size_t epochs) {
  std::vector<std::size_t> out;
  for (auto m : defaults) {
    const auto s = (m * epochs + default_epochs / 2) / default_epochs;
    if (s >= 1 && s <= epochs && (out.empty() || out.back() != s)) out.push_back(s);
  }
  return out;
}

inline void set_seg_epochs(seg::SegTrainConfig& c, std::size_t epochs) {
  const seg::SegTrainConfig d;
  c.epochs = epochs;
  c.lr_halving_epochs = scaled_milestones(d.lr_halving_epochs, d.epochs, epochs);
}

inline void set_obs_epochs(obs::ObsTrainConfig& c, std::size_t epochs) {
  const obs::ObsTrainConfig d;
  c.epochs = epochs;
  c.lr_halving_epochs = scaled_milestones(d.lr_halving_epochs, d.epochs, epochs);
}

inline std::string to_text(const ExperimentConfig& c) {
  using detail::num;
  auto ulist = [](const std::vector<std::size_t>& v) { return detail::join(v, [](auto x) { return std::to_string(x); }); };
  std::ostringstream os;
  os << "root=" << c.root.string() << "\n"
     << "seed=" << c.seed << "\n"
     << "data.n_train=" << c.n_train << "\n"
     << "data.n_test=" << c.n_test << "\n"
     << "seg.epochs=" << c.seg.epochs << "\n"
     << "seg.lr=" << num(c.seg.lr) << "\n"
     << "seg.batch=" << c.seg.batch << "\n"
     << "seg.momentum=" << num(c.seg.momentum) << "\n"
     << "seg.weight_decay=" << num(c.seg.weight_decay) << "\n"
     << "seg.grad_clip=" << num(c.seg.grad_clip) << "\n"
     << "seg.lr_halving=" << ulist(c.seg.lr_halving_epochs) << "\n"
     << "seg.robust=" << (c.seg.robust ? "true" : "false") << "\n"
     << "obs.epochs=" << c.obs.epochs << "\n"
     << "obs.lr=" << num(c.obs.lr) << "\n"
     << "obs.batch=" << c.obs.batch << "\n"
     << "obs.momentum=" << num(c.obs.momentum) << "\n"
     << "obs.weight_decay=" << num(c.obs.weight_decay) << "\n"
     << "obs.pos_weight=" << num(c.obs.pos_weight) << "\n"
     << "obs.grad_clip=" << num(c.obs.grad_clip) << "\n"
     << "obs.lr_halving=" << ulist(c.obs.lr_halving_epochs) << "\n"
     << "obs.patience=" << c.obs.patience << "\n"
     << "obs.init_from_seg=" << (c.obs.init_from_seg ? "true" : "false") << "\n"
     << "obs.inputs=" << inputs_name(c.obs.inputs) << "\n"
     << "attack.region=" << laa::to_string(c.obs.attack.region) << "\n"
     << "attack.direction=" << laa::to_string(c.obs.attack.direction) << "\n"
     << "attack.epsilon=" << num(c.obs.attack.epsilon) << "\n"
     << "attack.grad_label=" << (c.obs.attack.grad_label == laa::GradLabel::pred ? "pred" : "gt") << "\n"
     << "scorer.mc_passes=" << c.scorer.mc_passes << "\n"
     << "scorer.mcda_passes=" << c.scorer.mcda_passes << "\n"
     << "scorer.gauss_members=" << c.scorer.gauss_members << "\n"
     << "scorer.gauss_sigma_rel=" << num(c.scorer.gauss_sigma_rel) << "\n"
     << "scorer.ensemble_members=" << c.scorer.ensemble_members << "\n"
     << "methods=" << detail::join(c.methods, [](const std::string& s) { return s; }) << "\n"
     << "modes=" << detail::join(c.modes, [](auto m) { return std::string(metrics::to_string(m)); }) << "\n"
     << "sweep.grid=" << detail::join(c.sweep_grid, [](double d) { return num(d); }) << "\n"
     << "eval.attack_epsilon=" << num(c.attack_eval_epsilon) << "\n";
  return os.str();
}

// Keys absent from `text` keep their defaults; unknown keys are rejected.
// Keys are applied in sorted order, so an explicit *.lr_halving overrides the
// schedule that *.epochs stretches from the defaults.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config") {
  ExperimentConfig c;
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> set{
      {"root", [&](auto&, auto& v) { c.root = v; }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_uint(k, v); }},
      {"data.n_train", [&](auto& k, auto& v) { c.n_train = parse_uint(k, v); }},
      {"data.n_test", [&](auto& k, auto& v) { c.n_test = parse_uint(k, v); }},
      {"seg.epochs", [&](auto& k, auto& v) { set_seg_epochs(c.seg, parse_uint(k, v)); }},
      {"seg.lr", [&](auto& k, auto& v) { c.seg.lr = parse_double(k, v); }},
      {"seg.batch", [&](auto& k, auto& v) { c.seg.batch = parse_uint(k, v); }},
      {"seg.momentum", [&](auto& k, auto& v) { c.seg.momentum = parse_double(k, v); }},
      {"seg.weight_decay", [&](auto& k, auto& v) { c.seg.weight_decay = parse_double(k, v); }},
      {"seg.grad_clip", [&](auto& k, auto& v) { c.seg.grad_clip = parse_double(k, v); }},
      {"seg.lr_halving", [&](auto& k, auto& v) { c.seg.lr_halving_epochs = parse_epochs(k, v); }},
      {"seg.robust", [&](auto& k, auto& v) { c.seg.robust = parse_bool(k, v); }},
      {"obs.epochs", [&](auto& k, auto& v) { set_obs_epochs(c.obs, parse_uint(k, v)); }},
      {"obs.lr", [&](auto& k, auto& v) { c.obs.lr = parse_double(k, v); }},
      {"obs.batch", [&](auto& k, auto& v) { c.obs.batch = parse_uint(k, v); }},
      {"obs.momentum", [&](auto& k, auto& v) { c.obs.momentum = parse_double(k, v); }},
      {"obs.weight_decay", [&](auto& k, auto& v) { c.obs.weight_decay = parse_double(k, v); }},
      {"obs.pos_weight", [&](auto& k, auto& v) { c.obs.pos_weight = parse_double(k, v); }},
      {"obs.grad_clip", [&](auto& k, auto& v) { c.obs.grad_clip = parse_double(k, v); }},
      {"obs.lr_halving", [&](auto& k, auto& v) { c.obs.lr_halving_epochs = parse_epochs(k, v); }},
      {"obs.patience", [&](auto& k, auto& v) { c.obs.patience = parse_uint(k, v); }},
      {"obs.init_from_seg", [&](auto& k, auto& v) { c.obs.init_from_seg = parse_bool(k, v); }},
      {"obs.inputs", [&](auto&, auto& v) { c.obs.inputs = parse_inputs(v); }},
      {"attack.region", [&](auto&, auto& v) { c.obs.attack.region = laa::parse_region(v); }},
      {"attack.direction", [&](auto&, auto& v) { c.obs.attack.direction = laa::parse_direction(v); }},
      {"attack.epsilon", [&](auto& k, auto& v) { c.obs.attack.epsilon = parse_double(k, v); }},
      {"attack.grad_label",
       [&](auto& k, auto& v) {
         if (v != "pred" && v != "gt") throw ConfigError("config: '" + k + "' expects pred or gt");
         c.obs.attack.grad_label = v == "pred" ? laa::GradLabel::pred : laa::GradLabel::gt;
       }},
      {"scorer.mc_passes", [&](auto& k, auto& v) { c.scorer.mc_passes = parse_uint(k, v); }},
      {"scorer.mcda_passes", [&](auto& k, auto& v) { c.scorer.mcda_passes = parse_uint(k, v); }},
      {"scorer.gauss_members", [&](auto& k, auto& v) { c.scorer.gauss_members = parse_uint(k, v); }},
      {"scorer.gauss_sigma_rel", [&](auto& k, auto& v) { c.scorer.gauss_sigma_rel = parse_double(k, v); }},
      {"scorer.ensemble_members", [&](auto& k, auto& v) { c.scorer.ensemble_members = parse_uint(k, v); }},
      {"methods", [&](auto&, auto& v) { c.methods = detail::split_list(v); }},
      {"modes",
       [&](auto&, auto& v) {
         c.modes.clear();
         for (const auto& m : detail::split_list(v)) c.modes.push_back(metrics::parse_mode(m));
       }},
      {"sweep.grid", [&](auto& k, auto& v) { c.sweep_grid = parse_grid(k, v); }},
      {"eval.attack_epsilon", [&](auto& k, auto& v) { c.attack_eval_epsilon = parse_double(k, v); }},
  };
  for (const auto& [key, value] : data::parse_key_values(text, origin)) {
    const auto it = set.find(key);
    if (it == set.end()) throw ConfigError(origin + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  c.propagate_seed();
  c.validate();
  return c;
}

// --- test-time attacks for attack-mode evaluation ---------------------------

inline constexpr std::uint64_t kStreamEvalAttack = 300;

struct AttackedSplit {
  std::vector<data::Image> images;
  std::vector<AttackMask> masks;
};

// Square-patch min_pc FGSM on every test image; image i uses its own stream,
// so the result does not depend on batching.
inline AttackedSplit attack_test_images(const seg::Params& params, std::span<const data::Scene> test, double epsilon,
                                        std::uint64_t seed) {
  laa::AttackConfig cfg;
  cfg.region = laa::Region::square_patch;
  cfg.direction = laa::Direction::min_pc;
  cfg.epsilon = epsilon;
  AttackedSplit out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto rng = SeededRng::derive(SeededRng::derive(seed, kStreamEvalAttack).state(), i);
    const std::vector<AttackMask> mask{laa::sample_mask(rng, cfg, nullptr).mask};
    const auto x = laa::fgsm_local(params, data::to_batch(test[i].image), mask, cfg, {}, rng);
    out.images.push_back(data::from_batch(x, 0));
    out.masks.push_back(mask[0]);
  }
  return out;
}

// --- scoring runs -----------------------------------------------------------

struct Models {
  const seg::Params* seg = nullptr;
  const obs::Params* obs = nullptr;
  obs::InputFlags obs_inputs{};
  std::span<const seg::Params> ensemble{};
};

struct ScoredSplit {
  std::vector<ScoreMap> scores;
  std::vector<LabelMap> preds;
  std::vector<AttackMask> masks;  // attack mode only
  double seconds = 0.0;           // scoring wall-clock, calibration excluded
  std::uint64_t forward_passes = 0;  // network image passes spent scoring, same exclusions
  std::string notes;              // fitted hyper-parameters, if any
};

// The held-out fold used for calibration is the tail of the train split, as
// in observer training.
inline std::span<const data::Scene> calibration_fold(std::span<const data::Scene> train, double heldout_fraction) {
  const std::size_t fit = seg::fit_count(train.size(), 1.0 - heldout_fraction);
  return train.subspan(fit);
}

inline ScoredSplit score_method(const std::string& method, const Models& models, base::ScorerConfig scorer,
                                std::span<const data::Image> images, std::span<const data::Scene> calibration) {
  if (!models.seg) throw MissingArtifact("score: segmenter checkpoint required");
  ScoredSplit out;
  std::ostringstream notes;
  notes << std::setprecision(9);
  using clk = std::chrono::steady_clock;
  std::uint64_t passes_before = 0;
  if (method == kObsnetMethod) {
    if (!models.obs) throw MissingArtifact("score: method obsnet needs an observer checkpoint");
    const auto t0 = clk::now();
    passes_before = nd::pass_counters().forward;
    for (std::size_t i = 0; i < images.size(); i += scorer.batch) {
      const auto chunk = images.subspan(i, std::min(scorer.batch, images.size() - i));
      for (auto& s : obs::obs_score(*models.seg, *models.obs, data::to_batch(chunk), models.obs_inputs))
        out.scores.push_back(std::move(s));
    }
    out.seconds = std::chrono::duration<double>(clk::now() - t0).count();
  } else {
    const auto m = base::parse_method(method);
    if (m == base::Method::tempscale) {
      scorer.temperature = base::fit_temperature(*models.seg, calibration);
      notes << "temperature=" << scorer.temperature << "\n";
    } else if (m == base::Method::odin) {
      const auto c = base::fit_odin(*models.seg, calibration);
      scorer.odin_temperature = c.temperature;
      scorer.odin_epsilon = c.epsilon;
      notes << "odin_temperature=" << c.temperature << "\nodin_epsilon=" << c.epsilon << "\n";
    }
    const base::ScoringContext ctx{models.seg, models.ensemble, scorer};
    const auto t0 = clk::now();
    passes_before = nd::pass_counters().forward;
    out.scores = base::score_images(m, ctx, images);
    out.seconds = std::chrono::duration<double>(clk::now() - t0).count();
  }
  out.forward_passes = nd::pass_counters().forward - passes_before;
  out.preds = seg::predict(*models.seg, images);
  out.notes = notes.str();
  return out;
}

inline void write_scored(const std::filesystem::path& dir, const ScoredSplit& s) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    pnm::write_pfm(metrics::score_path(dir, i), metrics::to_grayf(s.scores[i]));
    pnm::write_pgm(metrics::pred_path(dir, i), data::to_gray8(s.preds[i]));
    if (i < s.masks.size()) pnm::write_pgm(metrics::mask_path(dir, i), data::to_gray8(s.masks[i], 255));
  }
  if (!s.notes.empty()) write_file_atomic(dir / "calibration.txt", s.notes);
}

// Mask files are stored as {0,255}; evaluation wants {0,1}.
inline std::vector<AttackMask> read_masks(const std::filesystem::path& dir, std::size_t n) {
  std::vector<AttackMask> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto m = metrics::to_label_map(pnm::read_pgm(metrics::require_file(metrics::mask_path(dir, i))));
    for (auto& v : m.data) v = v ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

inline metrics::MetricsReport evaluate_scored(const ScoredSplit& s, std::span<const data::Scene> test,
                                              metrics::EvalMode mode, const std::string& method, std::uint64_t seed) {
  if (s.scores.size() != test.size() || s.preds.size() != test.size())
    throw ShapeError("evaluate: " + std::to_string(s.scores.size()) + " score maps for " + std::to_string(test.size()) +
                     " test scenes");
  std::vector<metrics::ImageEval> items;
  for (std::size_t i = 0; i < test.size(); ++i)
    items.push_back({&s.scores[i], &test[i].labels, &s.preds[i],
                     mode == metrics::EvalMode::attack ? &s.masks.at(i) : nullptr});
  return metrics::evaluate(items, mode, method, seed);
}

inline std::string results_csv(const std::vector<metrics::MetricsReport>& rows) {
  std::string out = std::string(metrics::kResultsHeader) + "\n";
  for (const auto& r : rows) out += metrics::csv_row(r) + "\n";
  return out;
}

// --- ensemble members --------------------------------------------------------

// Member 0 is the main segmenter; member k > 0 retrains with its own seed.
inline std::uint64_t member_seed(std::uint64_t seed, std::size_t k) { return seed * 1000 + k; }

// --- the full pipeline -------------------------------------------------------

struct PipelineResult {
  std::vector<metrics::MetricsReport> rows;
  std::string results_csv;
  std::string pareto_csv;  // method,auroc,seconds (ood mode AuROC, clean-image scoring time)
  std::string dataset_hash;
};

using Logger = std::function<void(const std::string&)>;

// gen-data -> train-seg (+ ensemble members) -> train-obsnet -> score -> eval.
// All artifacts land under cfg.root.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const Logger& log = [](const std::string&) {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path root = cfg.root;
  fs::create_directories(root);
  write_file_atomic(root / "config.txt", to_text(cfg));

  data::DatasetManifest man;
  man.seed = cfg.seed;
  man.n_train = cfg.n_train;
  man.n_test = cfg.n_test;
  const auto ds = data::generate_dataset(man);
  data::write_dataset(root / "data", ds);
  PipelineResult res;
  res.dataset_hash = data::dataset_hash(ds);
  log("dataset " + res.dataset_hash);

  auto seg_cfg = cfg.seg;
  const auto seg_run = seg_cfg.robust ? seg::train_segmenter_robust(ds.train, seg_cfg, cfg.obs.attack)
                                      : seg::train_segmenter(ds.train, seg_cfg);
  nd::save_params(root / "seg" / "seg.bin", seg_run.params);
  write_file_atomic(root / "seg" / "train_log.csv", seg_run.csv());
  log("segmenter trained, final loss " + detail::num(seg_run.log.empty() ? 0.0 : seg_run.log.back().loss));

  std::vector<seg::Params> members;
  const bool need_ensemble =
      std::find(cfg.methods.begin(), cfg.methods.end(), base::to_string(base::Method::ensemble)) != cfg.methods.end();
  if (need_ensemble) {
    members.push_back(seg_run.params);
    for (std::size_t k = 1; k < cfg.scorer.ensemble_members; ++k) {
      auto mc = seg_cfg;
      mc.seed = member_seed(cfg.seed, k);
      members.push_back(seg::train_segmenter(ds.train, mc).params);
      nd::save_params(root / "seg" / ("member_" + std::to_string(k) + ".bin"), members.back());
      log("ensemble member " + std::to_string(k) + " trained");
    }
  }

  std::optional<obs::ObsTrainResult> obs_run;
  if (std::find(cfg.methods.begin(), cfg.methods.end(), kObsnetMethod) != cfg.methods.end()) {
    obs_run = obs::train_obsnet(seg_run.params, ds.train, cfg.obs);
    nd::save_params(root / "obs" / "obs.bin", obs_run->params);
    write_file_atomic(root / "obs" / "train_log.csv", obs_run->csv());
    write_file_atomic(root / "obs" / "inputs.txt", inputs_name(cfg.obs.inputs) + "\n");
    log("observer trained, best epoch " + std::to_string(obs_run->best_epoch));
  }

  const Models models{&seg_run.params, obs_run ? &obs_run->params : nullptr, cfg.obs.inputs, members};
  const auto calib = calibration_fold(ds.train, cfg.obs.heldout_fraction);
  std::vector<data::Image> clean;
  for (const auto& s : ds.test) clean.push_back(s.image);
  const bool want_clean = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](auto m) { return m != metrics::EvalMode::attack; });
  const bool want_attack = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](auto m) { return m == metrics::EvalMode::attack; });
  std::optional<AttackedSplit> attacked;
  if (want_attack) attacked = attack_test_images(seg_run.params, ds.test, cfg.attack_eval_epsilon, cfg.seed);

  std::ostringstream pareto;
  pareto << "method,auroc,seconds\n" << std::setprecision(9);
  for (const auto& method : cfg.methods) {
    std::optional<ScoredSplit> on_clean, on_attacked;
    if (want_clean) {
      on_clean = score_method(method, models, cfg.scorer, clean, calib);
      write_scored(root / "scores" / method, *on_clean);
    }
    if (want_attack) {
      on_attacked = score_method(method, models, cfg.scorer, attacked->images, calib);
      on_attacked->masks = attacked->masks;
      write_scored(root / "scores" / (method + "_attack"), *on_attacked);
    }
    for (auto mode : cfg.modes) {
      const auto& scored = mode == metrics::EvalMode::attack ? *on_attacked : *on_clean;
      res.rows.push_back(evaluate_scored(scored, ds.test, mode, method, cfg.seed));
      if (mode == metrics::EvalMode::ood) pareto << method << ',' << res.rows.back().auroc << ',' << scored.seconds << '\n';
      log(metrics::csv_row(res.rows.back()));
    }
  }
  res.results_csv = results_csv(res.rows);
  res.pareto_csv = pareto.str();
  write_file_atomic(root / "results.csv", res.results_csv);
  write_file_atomic(root / "pareto.csv", res.pareto_csv);
  return res;
}

}  // namespace obsnet::exp
