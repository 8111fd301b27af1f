#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "obsnet/experiment.hpp"
#include "obsnet/render.hpp"
#include "obsnet/sysalloc.hpp"

namespace fs = std::filesystem;
using namespace obsnet;

namespace {

// A checkpoint argument may name the file or the directory that holds it.
fs::path checkpoint(const fs::path& p, const char* file) {
  const fs::path f = fs::is_directory(p) ? p / file : p;
  if (!fs::is_regular_file(f)) throw MissingArtifact("missing checkpoint: " + f.string());
  return f;
}

data::Dataset load_data(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingArtifact("missing dataset directory: " + dir.string());
  return data::read_dataset(dir);
}

std::vector<data::Image> test_images(const data::Dataset& ds) {
  std::vector<data::Image> out;
  for (const auto& s : ds.test) out.push_back(s.image);
  return out;
}

obs::InputFlags saved_inputs(const fs::path& obs_arg) {
  const fs::path dir = fs::is_directory(obs_arg) ? obs_arg : obs_arg.parent_path();
  const fs::path f = dir / "inputs.txt";
  if (!fs::exists(f)) return obs::InputFlags::full();
  std::string name;
  std::ifstream(f) >> name;
  return exp::parse_inputs(name);
}

struct Opts {
  // gen-data
  fs::path out;
  std::uint64_t seed = 7;
  std::size_t n_train = 400, n_test = 200;
  // training
  fs::path data, seg, obs;
  bool robust = false;
  std::size_t seg_epochs = seg::SegTrainConfig{}.epochs;
  std::size_t obs_epochs = obs::ObsTrainConfig{}.epochs;
  std::string attack = "shape", direction = "minpc", inputs = "full";
  double epsilon = laa::AttackConfig{}.epsilon;
  // scoring and evaluation
  std::string method, mode = "ood";
  std::vector<fs::path> members;
  bool attacked = false;
  double attack_epsilon = exp::ExperimentConfig{}.attack_eval_epsilon;
  fs::path scores;
  std::string grid = "0.005,0.01,0.02,0.05,0.1";
  std::size_t image = 0;
  std::vector<std::string> methods;
  fs::path config;
};

obs::ObsTrainConfig obs_config(const Opts& o) {
  obs::ObsTrainConfig c;
  c.seed = o.seed;
  exp::set_obs_epochs(c, o.obs_epochs);
  if (o.attack == "none") {
    c.attack.epsilon = 0.0;
  } else {
    c.attack.region = laa::parse_region(o.attack);
    c.attack.epsilon = o.epsilon;
  }
  c.attack.direction = laa::parse_direction(o.direction);
  c.inputs = exp::parse_inputs(o.inputs);
  return c;
}

void cmd_gen_data(const Opts& o) {
  data::DatasetManifest m;
  m.seed = o.seed;
  m.n_train = o.n_train;
  m.n_test = o.n_test;
  const auto ds = data::generate_dataset(m);
  data::write_dataset(o.out, ds);
  std::cout << data::dataset_hash(ds) << "\n";
}

void cmd_train_seg(const Opts& o) {
  const auto ds = load_data(o.data);
  seg::SegTrainConfig c;
  c.seed = o.seed;
  c.robust = o.robust;
  exp::set_seg_epochs(c, o.seg_epochs);
  const auto r = c.robust ? seg::train_segmenter_robust(ds.train, c, laa::AttackConfig{})
                          : seg::train_segmenter(ds.train, c);
  nd::save_params(o.out / "seg.bin", r.params);
  write_file_atomic(o.out / "train_log.csv", r.csv());
  const auto s = seg::miou_globalacc(r.params, ds.test);
  std::cout << "miou=" << s.miou << " global_acc=" << s.global_acc << " hash=" << seg::params_hash(r.params) << "\n";
}

void cmd_train_obsnet(const Opts& o) {
  const auto ds = load_data(o.data);
  const auto sp = nd::load_params(checkpoint(o.seg, "seg.bin"));
  const auto c = obs_config(o);
  const auto r = obs::train_obsnet(sp, ds.train, c);
  nd::save_params(o.out / "obs.bin", r.params);
  write_file_atomic(o.out / "train_log.csv", r.csv());
  write_file_atomic(o.out / "inputs.txt", o.inputs + "\n");
  std::cout << "best_epoch=" << r.best_epoch << " stopped_early=" << r.stopped_early << "\n";
}

void cmd_score(const Opts& o) {
  const auto ds = load_data(o.data);
  const auto sp = nd::load_params(checkpoint(o.seg, "seg.bin"));
  std::optional<obs::Params> op;
  exp::Models models{.seg = &sp};
  if (o.method == exp::kObsnetMethod) {
    if (o.obs.empty()) throw MissingArtifact("score: --obs is required for method obsnet");
    op = nd::load_params(checkpoint(o.obs, "obs.bin"));
    models.obs = &*op;
    models.obs_inputs = saved_inputs(o.obs);
  } else {
    base::parse_method(o.method);
  }
  std::vector<seg::Params> members{sp};
  for (const auto& m : o.members) members.push_back(nd::load_params(checkpoint(m, "seg.bin")));
  models.ensemble = members;

  base::ScorerConfig sc;
  sc.seed = o.seed;
  sc.ensemble_members = members.size();
  const auto calib = exp::calibration_fold(ds.train, obs::ObsTrainConfig{}.heldout_fraction);
  exp::ScoredSplit scored;
  if (o.attacked) {
    const auto a = exp::attack_test_images(sp, ds.test, o.attack_epsilon, o.seed);
    scored = exp::score_method(o.method, models, sc, a.images, calib);
    scored.masks = a.masks;
  } else {
    scored = exp::score_method(o.method, models, sc, test_images(ds), calib);
  }
  exp::write_scored(o.out, scored);
  std::cout << "seconds=" << scored.seconds << "\n";
}

void cmd_eval(const Opts& o) {
  const auto ds = load_data(o.data);
  const auto mode = metrics::parse_mode(o.mode);
  const std::string method = o.method.empty() ? o.scores.filename().string() : o.method;
  const auto r = metrics::evaluate_dir(o.scores, ds.test, mode, method, o.seed);
  std::string text;
  if (fs::exists(o.out)) text = read_file(o.out);
  if (text.empty()) text = std::string(metrics::kResultsHeader) + "\n";
  text += metrics::csv_row(r) + "\n";
  write_file_atomic(o.out, text);
  std::cout << metrics::csv_row(r) << "\n";
}

void cmd_sweep(const Opts& o) {
  const auto ds = load_data(o.data);
  const auto sp = nd::load_params(checkpoint(o.seg, "seg.bin"));
  const auto grid = exp::parse_grid("--grid", o.grid);
  if (grid.empty()) throw ConfigError("sweep-epsilon: empty grid");
  const auto images = test_images(ds);
  const auto preds = seg::predict(sp, images);
  std::ostringstream csv;
  csv << "epsilon,fpr95tpr\n" << std::setprecision(9);
  for (double eps : grid) {
    Opts oo = o;
    oo.epsilon = eps;
    auto c = obs_config(oo);
    const auto r = obs::train_obsnet(sp, ds.train, c);
    exp::ScoredSplit s;
    s.scores = exp::score_method(exp::kObsnetMethod, {&sp, &r.params, c.inputs, {}}, {}, images, {}).scores;
    s.preds = preds;
    const auto rep = exp::evaluate_scored(s, ds.test, metrics::EvalMode::ood, exp::kObsnetMethod, o.seed);
    csv << eps << ',' << rep.fpr95tpr << '\n';
    std::cout << eps << ',' << rep.fpr95tpr << std::endl;
  }
  write_file_atomic(o.out, csv.str());
}

void cmd_render(const Opts& o) {
  const auto ds = load_data(o.data);
  if (o.image >= ds.test.size()) throw ConfigError("render: --image out of range");
  const auto& scene = ds.test[o.image];
  const auto sp = nd::load_params(checkpoint(o.seg, "seg.bin"));
  std::vector<pnm::Rgb8> panels{data::to_rgb8(scene.image)};
  auto gt = render::colorize(scene.labels);
  render::outline(gt, scene.ood_mask);
  panels.push_back(gt);
  panels.push_back(render::colorize(seg::predict(sp, std::span(&scene.image, 1))[0]));
  for (const auto& m : o.methods) {
    const auto f = metrics::require_file(metrics::score_path(o.scores / m, o.image));
    panels.push_back(render::score_panel(metrics::to_score_map(pnm::read_pfm(f))));
  }
  pnm::write_ppm(o.out, render::hconcat(panels));
}

void cmd_attack_demo(const Opts& o) {
  const auto ds = load_data(o.data);
  if (o.image >= ds.test.size()) throw ConfigError("attack-demo: --image out of range");
  const auto& x = ds.test[o.image].image;
  const auto sp = nd::load_params(checkpoint(o.seg, "seg.bin"));
  laa::AttackConfig c;
  c.region = laa::parse_region(o.attack == "none" ? "shape" : o.attack);
  c.direction = laa::parse_direction(o.direction);
  c.epsilon = o.attack == "none" ? 0.0 : o.epsilon;
  auto rng = SeededRng::derive(o.seed, 400 + o.image);
  const auto pred = seg::predict(sp, std::span(&x, 1));
  const std::vector<AttackMask> mask{laa::sample_mask(rng, c, &pred[0]).mask};
  const auto xt = data::from_batch(laa::fgsm_local(sp, data::to_batch(x), mask, c, {}, rng), 0);
  const auto pred_t = seg::predict(sp, std::span(&xt, 1));
  fs::create_directories(o.out);
  pnm::write_ppm(o.out / "clean.ppm", data::to_rgb8(x));
  pnm::write_ppm(o.out / "perturbation_x25.ppm", data::to_rgb8(render::magnified_difference(x, xt)));
  pnm::write_ppm(o.out / "attacked.ppm", data::to_rgb8(xt));
  pnm::write_pgm(o.out / "mask.pgm", data::to_gray8(mask[0], 255));
  pnm::write_ppm(o.out / "pred_clean.ppm", render::colorize(pred[0]));
  pnm::write_ppm(o.out / "pred_attacked.ppm", render::colorize(pred_t[0]));
}

void cmd_pipeline(const Opts& o) {
  if (!fs::is_regular_file(o.config)) throw MissingArtifact("missing config: " + o.config.string());
  auto cfg = exp::parse_config(read_file(o.config), o.config.string());
  if (!o.out.empty()) cfg.root = o.out;
  exp::run_pipeline(cfg, [](const std::string& s) { std::cerr << s << std::endl; });
  std::cout << (cfg.root / "results.csv").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"ObsNet out-of-distribution detection on a synthetic segmentation benchmark"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Opts o;
  const auto regions = CLI::IsMember({"all", "sparse", "class", "square", "shape", "none"});
  const auto dirs = CLI::IsMember({"minpc", "maxpk"});

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--seed", o.seed, "Generator seed");
  gen->add_option("--n-train", o.n_train, "Train scenes");
  gen->add_option("--n-test", o.n_test, "Test scenes");

  auto* tseg = app.add_subcommand("train-seg", "Train the segmenter");
  tseg->add_option("--data", o.data, "Dataset directory")->required();
  tseg->add_option("--out", o.out, "Checkpoint directory")->required();
  tseg->add_flag("--robust", o.robust, "Train on local adversarial examples as well");
  tseg->add_option("--seed", o.seed, "Training seed");
  tseg->add_option("--epochs", o.seg_epochs, "Epochs");

  auto* tobs = app.add_subcommand("train-obsnet", "Train the observer on a frozen segmenter");
  tobs->add_option("--data", o.data, "Dataset directory")->required();
  tobs->add_option("--seg", o.seg, "Segmenter checkpoint or directory")->required();
  tobs->add_option("--out", o.out, "Checkpoint directory")->required();
  tobs->add_option("--attack", o.attack, "Attacked region")->check(regions);
  tobs->add_option("--direction", o.direction, "Attack direction")->check(dirs);
  tobs->add_option("--epsilon", o.epsilon, "Attack step size");
  tobs->add_option("--inputs", o.inputs, "Observer inputs")->check(CLI::IsMember({"full", "noskip", "noimage"}));
  tobs->add_option("--seed", o.seed, "Training seed");
  tobs->add_option("--epochs", o.obs_epochs, "Epochs");

  auto* score = app.add_subcommand("score", "Write per-pixel uncertainty maps for the test split");
  score->add_option("--data", o.data, "Dataset directory")->required();
  score->add_option("--seg", o.seg, "Segmenter checkpoint or directory")->required();
  score->add_option("--obs", o.obs, "Observer checkpoint or directory (method obsnet)");
  score->add_option("--method", o.method, "obsnet or a baseline name")->required();
  score->add_option("--members", o.members, "Extra segmenter checkpoints for the deep ensemble");
  score->add_flag("--attacked", o.attacked, "Score square-patch attacked test images and write the masks");
  score->add_option("--attack-epsilon", o.attack_epsilon, "Step size of the evaluation attack");
  score->add_option("--seed", o.seed, "Seed for stochastic scorers and the evaluation attack");
  score->add_option("--out", o.out, "Score directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a score directory and append a results row");
  eval->add_option("--data", o.data, "Dataset directory")->required();
  eval->add_option("--scores", o.scores, "Score directory")->required();
  eval->add_option("--mode", o.mode, "Evaluation mode")->check(CLI::IsMember({"ood", "error", "attack"}));
  eval->add_option("--method", o.method, "Method label (default: score directory name)");
  eval->add_option("--seed", o.seed, "Seed recorded in the row");
  eval->add_option("--out", o.out, "results.csv")->required();

  auto* sweep = app.add_subcommand("sweep-epsilon", "Train one observer per epsilon and record fpr95tpr");
  sweep->add_option("--data", o.data, "Dataset directory")->required();
  sweep->add_option("--seg", o.seg, "Segmenter checkpoint or directory")->required();
  sweep->add_option("--grid", o.grid, "Comma-separated epsilons");
  sweep->add_option("--attack", o.attack, "Attacked region")->check(regions);
  sweep->add_option("--direction", o.direction, "Attack direction")->check(dirs);
  sweep->add_option("--seed", o.seed, "Training seed");
  sweep->add_option("--epochs", o.obs_epochs, "Epochs per observer");
  sweep->add_option("--out", o.out, "sweep.csv")->required();

  auto* rend = app.add_subcommand("render", "Side-by-side panels for one test image");
  rend->add_option("--data", o.data, "Dataset directory")->required();
  rend->add_option("--seg", o.seg, "Segmenter checkpoint or directory")->required();
  rend->add_option("--image", o.image, "Test image index");
  rend->add_option("--scores", o.scores, "Directory holding one score directory per method");
  rend->add_option("--methods", o.methods, "Methods to show");
  rend->add_option("--out", o.out, "Output PPM")->required();

  auto* demo = app.add_subcommand("attack-demo", "Write clean, perturbation, attacked image and predictions");
  demo->add_option("--data", o.data, "Dataset directory")->required();
  demo->add_option("--seg", o.seg, "Segmenter checkpoint or directory")->required();
  demo->add_option("--image", o.image, "Test image index");
  demo->add_option("--attack", o.attack, "Attacked region")->check(regions);
  demo->add_option("--direction", o.direction, "Attack direction")->check(dirs);
  demo->add_option("--epsilon", o.epsilon, "Attack step size");
  demo->add_option("--seed", o.seed, "Seed");
  demo->add_option("--out", o.out, "Output directory")->required();

  auto* pipe = app.add_subcommand("pipeline", "Run generation, training, scoring and evaluation from a config");
  pipe->add_option("--config", o.config, "key=value config file")->required();
  pipe->add_option("--out", o.out, "Override the root directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return static_cast<int>(ExitCode::bad_config);
  }

  try {
    if (*gen) cmd_gen_data(o);
    else if (*tseg) cmd_train_seg(o);
    else if (*tobs) cmd_train_obsnet(o);
    else if (*score) cmd_score(o);
    else if (*eval) cmd_eval(o);
    else if (*sweep) cmd_sweep(o);
    else if (*rend) cmd_render(o);
    else if (*demo) cmd_attack_demo(o);
    else if (*pipe) cmd_pipeline(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
