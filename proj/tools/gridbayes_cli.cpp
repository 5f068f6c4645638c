#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gridbayes/error.hpp"
#include "gridbayes/evaluation.hpp"
#include "gridbayes/parallel.hpp"
#include "gridbayes/render.hpp"
#include "gridbayes/synthetic_world.hpp"
#include "gridbayes/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gridbayes;

namespace {

struct Common {
  std::optional<long> threads;
  bool print_config = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "worker threads (env GRIDBAYES_THREADS)");
  cmd->add_flag("--print-config", c.print_config, "echo the resolved configuration as JSON");
}

void echo(const Common& c, const json& j) {
  if (c.print_config) std::cout << j.dump(2) << std::endl;
}

struct GenArgs {
  Common common;
  std::string config;
  std::size_t train = 512;
  std::size_t test = 128;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  ScenarioConfig cfg;
  if (!a.config.empty()) cfg = scenario_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const std::size_t threads = resolve_threads(a.common.threads);
  echo(a.common, json{{"command", "gen"},
                      {"scenario", to_json(cfg)},
                      {"train", a.train},
                      {"test", a.test},
                      {"out", a.out},
                      {"threads", threads}});
  const DatasetSummary s = generate_dataset(cfg, a.train, a.test, a.out, threads);
  std::cerr << "wrote " << s.train_scenes << " train + " << s.test_scenes << " test scenes to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  Common common;
  std::string data;
  std::string variant = "deterministic";
  std::uint64_t seed = 0;
  std::size_t epochs = 30;
  std::size_t batch = 4;
  double lr = 5e-4;
  std::string kl_weighting = "uniform";
  std::size_t samples_per_step = 1;
  double prior_gamma = 1.0;
  double dropout = 0.5;
  std::string out;
  std::string history;
  std::size_t repeat = 1;
  std::size_t mc_samples = kDefaultMcSamples;
};

void write_history_csv(const std::vector<EpochRecord>& h, const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  std::fprintf(f, "epoch,loss,nll,kl,batches\n");
  for (const EpochRecord& e : h) {
    std::fprintf(f, "%zu,%.9g,%.9g,%.9g,%zu\n", e.epoch, e.loss, e.nll, e.kl_total, e.n_batches);
  }
  if (std::fclose(f) != 0) throw IoError("failed writing " + path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& tag) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + tag + p.extension().string());
  return out;
}

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.variant = parse_variant(a.variant);
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.kl_weighting = parse_kl_weighting(a.kl_weighting);
  cfg.samples_per_step = a.samples_per_step;
  cfg.prior_gamma = a.prior_gamma;
  cfg.dropout_rate = a.dropout;
  cfg.validate();
  if (a.repeat == 0) throw ConfigError("--repeat must be >= 1");
  if (a.mc_samples == 0) throw ConfigError("--mc-samples must be >= 1");
  const std::size_t threads = resolve_threads(a.common.threads);
  const fs::path history = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
  echo(a.common, json{{"command", "train"},
                      {"data", a.data},
                      {"train", to_json(cfg)},
                      {"out", a.out},
                      {"history", history.string()},
                      {"repeat", a.repeat},
                      {"mc_samples", a.mc_samples},
                      {"threads", threads}});

  const Manifest m = load_manifest(a.data);
  const std::vector<Sample> train_set = load_split(a.data, m, Split::kTrain);
  std::vector<Sample> test_set;
  if (a.repeat > 1) test_set = load_split(a.data, m, Split::kTest);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu/%zu loss %.5f nll %.5f kl %.2f\n", e.epoch, cfg.epochs, e.loss, e.nll,
                 e.kl_total);
  };

  std::vector<json> runs;
  std::vector<double> miou;
  std::vector<std::vector<double>> per_class;
  for (std::size_t k = 0; k < a.repeat; ++k) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + k;
    const std::string tag = a.repeat > 1 ? ".run" + std::to_string(k) : "";
    const fs::path ckpt_path = a.repeat > 1 ? with_suffix(a.out, tag) : fs::path(a.out);
    const fs::path hist_path = a.repeat > 1 ? with_suffix(history, tag) : history;
    if (a.repeat > 1) std::fprintf(stderr, "run %zu/%zu seed %llu\n", k + 1, a.repeat,
                                   static_cast<unsigned long long>(run_cfg.seed));
    const Checkpoint ckpt = train(train_set, m.grid, run_cfg, hooks);
    save_checkpoint(ckpt, ckpt_path);
    write_history_csv(ckpt.history, hist_path);
    if (a.repeat > 1) {
      EvalOptions eo;
      eo.mc_samples = a.mc_samples;
      eo.seed = run_cfg.seed;
      eo.threads = threads;
      const EvalResult r = evaluate(ckpt.network, test_set, m.grid, eo);
      miou.push_back(r.iou.miou);
      per_class.push_back(r.iou.per_class);
      runs.push_back(json{{"seed", run_cfg.seed}, {"checkpoint", ckpt_path.string()}, {"iou", to_json(r.iou)}});
      std::fprintf(stderr, "run %zu mIoU %.4f\n", k + 1, r.iou.miou);
    }
  }
  if (a.repeat > 1) {
    const double n = static_cast<double>(a.repeat);
    double mean = 0.0, sq = 0.0;
    for (double v : miou) mean += v / n;
    for (double v : miou) sq += (v - mean) * (v - mean);
    std::vector<double> class_mean(kClassCount, 0.0);
    for (const auto& pc : per_class) {
      for (std::size_t c = 0; c < pc.size(); ++c) class_mean[c] += pc[c] / n;
    }
    const json summary{{"runs", runs},
                       {"mean_miou", mean},
                       {"std_miou", std::sqrt(sq / n)},
                       {"mean_class_iou", class_mean}};
    write_json_file(a.out + ".repeat.json", summary);
    std::cout << summary.dump(2) << std::endl;
  }
  return 0;
}

struct PredictArgs {
  Common common;
  std::string checkpoint;
  std::string scene;
  std::string data;
  std::size_t mc_samples = kDefaultMcSamples;
  std::uint64_t seed = 0;
  std::size_t scale = 4;
  std::string out;
};

int cmd_predict(const PredictArgs& a) {
  if (a.mc_samples == 0) throw ConfigError("--mc-samples must be >= 1");
  if (a.scale == 0) throw ConfigError("--scale must be >= 1");
  const std::size_t threads = resolve_threads(a.common.threads);
  const fs::path data = a.data.empty() ? fs::path(a.scene).parent_path() : fs::path(a.data);
  echo(a.common, json{{"command", "predict"},
                      {"checkpoint", a.checkpoint},
                      {"scene", a.scene},
                      {"data", data.string()},
                      {"mc_samples", a.mc_samples},
                      {"seed", a.seed},
                      {"scale", a.scale},
                      {"out", a.out},
                      {"threads", threads}});
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Manifest m = load_manifest(data.empty() ? fs::path(".") : data);
  const SceneRecord scene = load_scene(a.scene, m.grid);
  const FeatureGrid x = scene_features(scene, m);
  RngStream rng(a.seed);
  const ProbStack stack = mc_predict(ckpt.network, x, a.mc_samples, rng, threads);
  const UncertaintyMaps maps = decompose(stack);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_probability_csv(stack, out / "probabilities.csv");
  write_uncertainty_csv(maps, out / "uncertainty.csv");
  const std::size_t C = stack.classes;
  write_bytes(out / "prediction.ppm", render_ppm(maps.predicted, maps.rows, maps.cols, C, {}, a.scale));
  write_bytes(out / "prediction_epistemic.ppm",
              render_ppm(maps.predicted, maps.rows, maps.cols, C, maps.epistemic, a.scale));
  write_bytes(out / "prediction_aleatoric.ppm",
              render_ppm(maps.predicted, maps.rows, maps.cols, C, maps.aleatoric, a.scale));
  std::cerr << "wrote predictions for " << scene.id << " to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t mc_samples = kDefaultMcSamples;
  std::uint64_t seed = 0;
  std::size_t quantiles = 10;
  bool visible_only = true;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  if (!a.visible_only) {
    throw ConfigError("--visible-only cannot be disabled: metrics only count cells with observability weight > 0");
  }
  if (a.mc_samples == 0) throw ConfigError("--mc-samples must be >= 1");
  if (a.quantiles == 0) throw ConfigError("--quantiles must be >= 1");
  const Split split = parse_split(a.split);
  const std::size_t threads = resolve_threads(a.common.threads);
  echo(a.common, json{{"command", "eval"},
                      {"checkpoint", a.checkpoint},
                      {"data", a.data},
                      {"split", a.split},
                      {"mc_samples", a.mc_samples},
                      {"seed", a.seed},
                      {"quantiles", a.quantiles},
                      {"visible_only", true},
                      {"out", a.out},
                      {"threads", threads}});
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Manifest m = load_manifest(a.data);
  const std::vector<Sample> samples = load_split(a.data, m, split);
  EvalOptions eo;
  eo.mc_samples = a.mc_samples;
  eo.seed = a.seed;
  eo.threads = threads;
  eo.quantiles = a.quantiles;
  const EvalResult r = evaluate(ckpt.network, samples, m.grid, eo, [&](std::size_t i) {
    if ((i + 1) % 16 == 0 || i + 1 == samples.size()) std::fprintf(stderr, "scene %zu/%zu\n", i + 1, samples.size());
  });

  fs::create_directories(a.out);
  const fs::path out(a.out);
  json j = to_json(r);
  j["variant"] = to_string(ckpt.network_config.variant);
  j["split"] = a.split;
  j["mc_samples"] = a.mc_samples;
  write_iou_csv(r.iou, out / "iou.csv");
  write_curve_csv(r.epistemic, out / "curve_epistemic.csv");
  write_curve_csv(r.aleatoric, out / "curve_aleatoric.csv");
  if (ckpt.network.head().kind == ParamKind::kVariational) {
    const WeightDensity w = weight_density_stats(ckpt.network);
    write_density_csv(w, out / "head_density.csv");
    j["head_density"] = to_json(w);
  }
  write_json_file(out / "metrics.json", j);
  std::printf("mIoU %.4f\n", r.iou.miou);
  for (std::size_t c = 0; c < r.iou.per_class.size(); ++c) {
    std::printf("  %-9s %.4f\n", class_name(static_cast<CellClass>(c)).c_str(), r.iou.per_class[c]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian grid segmentation on radar point clouds"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* g = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(g, gen.common);
  g->add_option("--config", gen.config, "scenario JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--train", gen.train, "train scene count")->capture_default_str();
  g->add_option("--test", gen.test, "test scene count")->capture_default_str();
  g->add_option("--seed", gen.seed, "overrides the scenario seed");
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "train a network");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--variant", tr.variant, "deterministic | probabilistic | hybrid | mc-dropout")
      ->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--kl-weighting", tr.kl_weighting, "uniform | geometric")->capture_default_str();
  t->add_option("--samples-per-step", tr.samples_per_step)->capture_default_str();
  t->add_option("--prior-gamma", tr.prior_gamma)->capture_default_str();
  t->add_option("--dropout", tr.dropout, "mc-dropout rate")->capture_default_str();
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--history", tr.history, "history CSV (default <out>.history.csv)");
  t->add_option("--repeat", tr.repeat, "train seeds seed..seed+N-1 and report mean test metrics")
      ->capture_default_str();
  t->add_option("--mc-samples", tr.mc_samples, "MC samples for --repeat evaluation")->capture_default_str();

  PredictArgs pr;
  CLI::App* p = app.add_subcommand("predict", "predict one scene and render uncertainty images");
  add_common(p, pr.common);
  p->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
  p->add_option("--scene", pr.scene, "scene JSON file")->required()->check(CLI::ExistingFile);
  p->add_option("--data", pr.data, "dataset directory (default: the scene's directory)");
  p->add_option("--mc-samples", pr.mc_samples)->capture_default_str();
  p->add_option("--seed", pr.seed)->capture_default_str();
  p->add_option("--scale", pr.scale, "pixels per cell")->capture_default_str();
  p->add_option("--out", pr.out, "output directory")->required();

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(e, ev.common);
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "train | test")->capture_default_str();
  e->add_option("--mc-samples", ev.mc_samples)->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--quantiles", ev.quantiles, "certainty slices per precision curve")->capture_default_str();
  e->add_flag("--visible-only,!--no-visible-only", ev.visible_only, "always on");
  e->add_option("--out", ev.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    tune_allocator();
    if (g->parsed()) return cmd_gen(gen);
    if (t->parsed()) return cmd_train(tr);
    if (p->parsed()) return cmd_predict(pr);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
