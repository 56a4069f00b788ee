#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "run_manifest.hpp"
#include "sodar/config.hpp"
#include "sodar/experiment.hpp"
#include "sodar/flops.hpp"
#include "sodar/metrics.hpp"
#include "sodar/model.hpp"
#include "sodar/postprocess.hpp"
#include "sodar/scene.hpp"
#include "sodar/train.hpp"
#include "sodar/voting.hpp"

namespace fs = std::filesystem;
using namespace sodar;
using cli::RunManifest;
using cli::UsageError;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

RunConfig load_run_config(const std::optional<fs::path>& path) {
  if (!path) return {};
  if (!fs::is_regular_file(*path)) throw UsageError("config file " + path->string() + " not found");
  try {
    RunConfig cfg = load_config(*path);
    cfg.validate();
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw UsageError(path->string() + ": " + e.what());
  }
}

std::vector<Scene> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("dataset directory " + dir.string() + " not found");
  auto scenes = read_scenes(dir);
  if (scenes.empty()) throw std::runtime_error("dataset " + dir.string() + " holds no scenes");
  return scenes;
}

struct TrainedModel {
  RunConfig config;
  ToyModel model;
};

TrainedModel load_model(const fs::path& dir) {
  const fs::path cfg_path = dir / "config.txt";
  if (!fs::is_regular_file(cfg_path)) throw UsageError(dir.string() + " is not a train output (no config.txt)");
  RunConfig cfg = load_run_config(cfg_path);
  return {cfg, ToyModel(cfg.model, load_parameters(dir / "model"))};
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Common {
  fs::path out;
  bool force = false;
};

void add_output(CLI::App* app, Common& c) {
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_flag("--force", c.force, "Replace a non-empty output directory");
}

// generate

struct GenerateArgs {
  Common common;
  uint64_t seed = 0;
  int64_t count = 0;
  int64_t size = 64;
  int64_t max_objects = 4;
};

void run_generate(const GenerateArgs& a, RunManifest& m) {
  cli::prepare_output(a.common.out, a.common.force);
  const auto scenes = generate_scenes(a.seed, a.count, a.size, a.size, a.max_objects);
  write_scenes(a.common.out, scenes);
  std::ostringstream cfg;
  cfg << "seed=" << a.seed << "\ncount=" << a.count << "\nsize=" << a.size << "\nmax_objects=" << a.max_objects
      << '\n';
  m.config = cfg.str();
  m.seed = a.seed;
  for (const auto& e : fs::directory_iterator(a.common.out)) m.outputs.push_back(e.path().filename().string());
  std::sort(m.outputs.begin(), m.outputs.end());
}

// train

struct TrainArgs {
  Common common;
  fs::path data;
  std::optional<fs::path> val;
  std::optional<fs::path> config;
  std::optional<uint64_t> seed;
};

void run_train(const TrainArgs& a, RunManifest& m) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.model.init_seed = cfg.train.seed = *a.seed;
  const auto train_set = load_dataset(a.data);
  std::vector<Scene> val_set;
  if (a.val) val_set = load_dataset(*a.val);
  cli::prepare_output(a.common.out, a.common.force);

  ToyModel model(cfg.model);
  const auto result = train(model, train_set, val_set, cfg.train, cfg.loss, cfg.decode, [](const EpochStats& s) {
    std::cerr << "epoch " << s.epoch << " loss " << s.loss;
    if (s.val_ap) std::cerr << " val_ap " << *s.val_ap;
    std::cerr << '\n';
  });
  save_parameters(a.common.out / "model", model.params());
  write_text(a.common.out / "config.txt", dump_config(cfg));
  write_text(a.common.out / "curve.csv", result.curve_csv());
  m.outputs = {"model", "config.txt", "curve.csv"};
  if (!val_set.empty()) {
    write_text(a.common.out / "eval.csv", evaluate_model(model, val_set, cfg.decode).to_csv());
    m.outputs.push_back("eval.csv");
  }
  m.config = dump_config(cfg);
  m.seed = cfg.train.seed;
  m.inputs.emplace_back("data", a.data);
  if (a.val) m.inputs.emplace_back("val", *a.val);
  if (a.config) m.inputs.emplace_back("config", *a.config);
}

// eval

struct EvalArgs {
  Common common;
  fs::path model;
  fs::path data;
};

void run_eval(const EvalArgs& a, RunManifest& m) {
  const auto tm = load_model(a.model);
  const auto scenes = load_dataset(a.data);
  cli::prepare_output(a.common.out, a.common.force);
  const auto dets = predict_all(tm.model, scenes, tm.config.decode);
  std::ofstream os(a.common.out / "detections.txt");
  for (size_t s = 0; s < scenes.size(); ++s) {
    write_detections(os, static_cast<int64_t>(s), dets[s], scenes[s].height(), scenes[s].width());
  }
  os.close();
  write_text(a.common.out / "eval.csv", evaluate(dets, scenes, tm.config.model.num_classes).to_csv());
  m.config = dump_config(tm.config);
  m.seed = tm.config.train.seed;
  m.inputs = {{"model", a.model}, {"data", a.data}};
  m.outputs = {"detections.txt", "eval.csv"};
}

// ablate

struct AblateArgs {
  Common common;
  std::string axis;
  std::optional<fs::path> data;
  std::optional<fs::path> val;
  std::optional<fs::path> config;
  std::vector<uint64_t> seeds{1, 2, 3};
  bool baseline = false;
  BenchmarkConfig bench;
};

void run_ablate(const AblateArgs& a, RunManifest& m) {
  AblationAxis axis{};
  try {
    axis = parse_ablation_axis(a.axis);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.data.has_value() != a.val.has_value()) throw UsageError("--data and --val go together");
  const RunConfig base = load_run_config(a.config);
  Benchmark bench;
  if (a.data) {
    bench.train = load_dataset(*a.data);
    bench.val = load_dataset(*a.val);
  } else {
    bench = make_benchmark(a.bench);
  }
  cli::prepare_output(a.common.out, a.common.force);

  auto variants = ablation_variants(axis, base);
  if (a.baseline) variants.push_back(baseline_variant(base));
  std::vector<VariantRun> runs;
  for (const auto& v : variants) {
    for (uint64_t seed : a.seeds) {
      std::cerr << "training " << v.name << " seed " << seed << '\n';
      runs.push_back(run_variant(v, bench.train, bench.val, seed));
      runs.back().params.clear();
    }
  }
  write_text(a.common.out / "runs.csv", runs_csv(runs));
  write_text(a.common.out / "summary.csv", summary_csv(summarize(runs)));

  std::ostringstream cfg;
  cfg << "axis=" << to_string(axis) << "\nseeds=";
  for (size_t k = 0; k < a.seeds.size(); ++k) cfg << (k ? "," : "") << a.seeds[k];
  if (!a.data) {
    cfg << "\nbenchmark_seed=" << a.bench.seed << "\ntrain_count=" << a.bench.train_count
        << "\nval_count=" << a.bench.val_count << "\nsize=" << a.bench.size << "\nmax_objects=" << a.bench.max_objects;
  }
  cfg << '\n' << dump_config(base);
  m.config = cfg.str();
  m.seed = a.seeds.front();
  if (a.data) m.inputs = {{"data", *a.data}, {"val", *a.val}};
  if (a.config) m.inputs.emplace_back("config", *a.config);
  m.outputs = {"runs.csv", "summary.csv"};
}

// vote

struct VoteArgs {
  Common common;
  fs::path model;
  fs::path data;
  std::string scheme = "all";
};

void run_vote(const VoteArgs& a, RunManifest& m) {
  std::vector<VoteScheme> schemes;
  if (a.scheme == "all") {
    schemes = {VoteScheme::kAverage, VoteScheme::kScoreWeighted, VoteScheme::kIouWeighted};
  } else {
    try {
      schemes = {parse_vote_scheme(a.scheme)};
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const auto tm = load_model(a.model);
  const auto scenes = load_dataset(a.data);
  cli::prepare_output(a.common.out, a.common.force);
  const auto preds = collect_predictions(tm.model, scenes, tm.config.decode);
  const auto study = run_voting_study(preds, scenes, tm.config.model.num_classes, schemes);
  write_text(a.common.out / "voting.csv", voting_csv(study));
  m.config = "scheme=" + a.scheme + "\n" + dump_config(tm.config);
  m.seed = tm.config.train.seed;
  m.inputs = {{"model", a.model}, {"data", a.data}};
  m.outputs = {"voting.csv"};
}

// bench-flops

struct FlopsArgs {
  Common common;
  std::optional<fs::path> config;
};

void run_flops(const FlopsArgs& a, RunManifest& m) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.config) cfg.model.grids = default_pyramid();
  // Compared against the default pyramid, or against G_mask = G when the level counts differ.
  GridConfig base_grids = default_pyramid();
  if (base_grids.levels.size() != cfg.model.grids.levels.size()) {
    base_grids = cfg.model.grids;
    for (auto& lv : base_grids.levels) lv.mask_grid = lv.grid;
  }
  cli::prepare_output(a.common.out, a.common.force);
  const auto base = flops_mask_head(base_grids, cfg.model.agg, {});
  const auto variant = flops_mask_head(cfg.model.grids, cfg.model.agg, {});
  write_text(a.common.out / "flops.csv", flops_table_csv(base, variant));
  m.config = dump_config(cfg);
  if (a.config) m.inputs = {{"config", *a.config}};
  m.outputs = {"flops.csv"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SODAR toy instance segmentation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic scene dataset");
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--count", gen.count, "Number of scenes")->required()->check(CLI::Range(int64_t{1}, int64_t{1000000}));
  g->add_option("--size", gen.size, "Image side, a multiple of 4")->check(CLI::Range(int64_t{16}, int64_t{4096}));
  g->add_option("--max-objects", gen.max_objects, "Objects per scene, at most")->check(CLI::Range(int64_t{1}, int64_t{64}));
  add_output(g, gen.common);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--val", tr.val, "Validation dataset");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--seed", tr.seed, "Overrides init_seed and seed");
  add_output(t, tr.common);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained model");
  e->add_option("--model", ev.model, "train output directory")->required();
  e->add_option("--data", ev.data, "Dataset")->required();
  add_output(e, ev.common);

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train every variant of one ablation axis");
  a->add_option("--axis", ab.axis, "agg|neighbors|context|layers|kernel|two-stage|deform|grid")->required();
  a->add_option("--data", ab.data, "Training dataset (default: generated benchmark)");
  a->add_option("--val", ab.val, "Validation dataset");
  a->add_option("--config", ab.config, "Base config");
  a->add_option("--seeds", ab.seeds, "Training seeds")->expected(1, -1);
  a->add_flag("--baseline", ab.baseline, "Also train the plain grid-cell baseline");
  a->add_option("--bench-seed", ab.bench.seed, "Benchmark seed");
  a->add_option("--train-count", ab.bench.train_count)->check(CLI::Range(int64_t{1}, int64_t{1000000}));
  a->add_option("--val-count", ab.bench.val_count)->check(CLI::Range(int64_t{1}, int64_t{1000000}));
  a->add_option("--size", ab.bench.size)->check(CLI::Range(int64_t{16}, int64_t{4096}));
  a->add_option("--max-objects", ab.bench.max_objects)->check(CLI::Range(int64_t{1}, int64_t{64}));
  add_output(a, ab.common);

  VoteArgs vo;
  auto* v = app.add_subcommand("vote", "Mask voting study on a trained model");
  v->add_option("--model", vo.model, "train output directory")->required();
  v->add_option("--data", vo.data, "Dataset")->required();
  v->add_option("--scheme", vo.scheme, "average|score_weighted|iou_weighted|all");
  add_output(v, vo.common);

  FlopsArgs fl;
  auto* f = app.add_subcommand("bench-flops", "Mask-branch multiply-adds against the default pyramid");
  f->add_option("--config", fl.config, "Config whose grids are compared");
  add_output(f, fl.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  RunManifest manifest;
  for (int k = 0; k < argc; ++k) manifest.argv.emplace_back(argv[k]);
  const Timer timer;
  fs::path out;
  try {
    if (g->parsed()) {
      if (gen.size % 4 != 0) throw UsageError("--size must be a multiple of 4");
      manifest.command = "generate";
      out = gen.common.out;
      run_generate(gen, manifest);
    } else if (t->parsed()) {
      manifest.command = "train";
      out = tr.common.out;
      run_train(tr, manifest);
    } else if (e->parsed()) {
      manifest.command = "eval";
      out = ev.common.out;
      run_eval(ev, manifest);
    } else if (a->parsed()) {
      if (ab.bench.size % 4 != 0) throw UsageError("--size must be a multiple of 4");
      manifest.command = "ablate";
      out = ab.common.out;
      run_ablate(ab, manifest);
    } else if (v->parsed()) {
      manifest.command = "vote";
      out = vo.common.out;
      run_vote(vo, manifest);
    } else {
      manifest.command = "bench-flops";
      out = fl.common.out;
      run_flops(fl, manifest);
    }
    manifest.wall_seconds = timer.seconds();
    manifest.write(out);
  } catch (const UsageError& err) {
    std::cerr << "sodar: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "sodar: " << err.what() << '\n';
    return kExitRuntime;
  }
  std::cout << out.string() << '\n';
  return kExitOk;
}
