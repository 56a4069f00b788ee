#include "sodar/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sodar/parallel.hpp"

namespace sodar {

Benchmark make_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.train_count <= 0 || cfg.val_count < 0) throw std::invalid_argument("benchmark: scene counts must be positive");
  Benchmark b;
  b.train.resize(static_cast<size_t>(cfg.train_count));
  b.val.resize(static_cast<size_t>(cfg.val_count));
  parallel_for(cfg.train_count + cfg.val_count, [&](int64_t k) {
    Scene s = generate_scene(cfg.seed, k, cfg.size, cfg.size, cfg.max_objects);
    if (k < cfg.train_count) {
      b.train[static_cast<size_t>(k)] = std::move(s);
    } else {
      b.val[static_cast<size_t>(k - cfg.train_count)] = std::move(s);
    }
  });
  return b;
}

namespace {

constexpr std::pair<AblationAxis, std::string_view> kAxisNames[] = {
    {AblationAxis::kAgg, "agg"},         {AblationAxis::kNeighbors, "neighbors"},
    {AblationAxis::kContext, "context"}, {AblationAxis::kLayers, "layers"},
    {AblationAxis::kKernel, "kernel"},   {AblationAxis::kTwoStage, "two-stage"},
    {AblationAxis::kDeform, "deform"},   {AblationAxis::kGrid, "grid"},
};

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string_view to_string(AblationAxis axis) {
  for (const auto& [a, name] : kAxisNames)
    if (a == axis) return name;
  return "?";
}

AblationAxis parse_ablation_axis(std::string_view text) {
  for (const auto& [a, name] : kAxisNames)
    if (name == text) return a;
  throw std::invalid_argument("unknown ablation axis '" + std::string(text) +
                              "' (agg, neighbors, context, layers, kernel, two-stage, deform, grid)");
}

std::vector<Variant> ablation_variants(AblationAxis axis, const RunConfig& base) {
  std::vector<Variant> out;
  auto add = [&](std::string name, auto&& edit) {
    RunConfig c = base;
    edit(c);
    c.validate();
    out.push_back({std::move(name), std::move(c)});
  };
  switch (axis) {
    case AblationAxis::kAgg:
      add("agg-D", [](RunConfig& c) { c.model.agg_mode = AggMode::kDynamic; });
      add("agg-S", [](RunConfig& c) {
        c.model.agg_mode = AggMode::kStatic;
        c.model.agg.deformable = false;
      });
      break;
    case AblationAxis::kNeighbors:
      for (auto s : {NeighborScheme::kNone, NeighborScheme::kRow2, NeighborScheme::kCol2, NeighborScheme::kFour,
                     NeighborScheme::kEight}) {
        add("neighbors-" + std::string(to_string(s)), [s](RunConfig& c) { c.model.agg.scheme = s; });
      }
      break;
    case AblationAxis::kContext:
      for (auto m : {ContextMode::kWith, ContextMode::kWithout, ContextMode::kOnly}) {
        add("context-" + std::string(to_string(m)), [m](RunConfig& c) {
          c.model.agg.context = m;
          if (m == ContextMode::kOnly) c.model.agg.deformable = false;
        });
      }
      break;
    case AblationAxis::kLayers:
      for (int64_t n = 1; n <= 4; ++n) add("layers-" + std::to_string(n), [n](RunConfig& c) { c.model.agg.layer_count = n; });
      break;
    case AblationAxis::kKernel:
      for (int64_t k : {1, 3}) add("kernel-" + std::to_string(k), [k](RunConfig& c) { c.model.agg.kernel = k; });
      break;
    case AblationAxis::kTwoStage:
      add("two-stage-off", [](RunConfig& c) { c.loss.two_stage = false; });
      add("two-stage-on", [](RunConfig& c) { c.loss.two_stage = true; });
      break;
    case AblationAxis::kDeform:
      add("deform-off", [](RunConfig& c) { c.model.agg.deformable = false; });
      add("deform-on", [](RunConfig& c) { c.model.agg.deformable = true; });
      break;
    case AblationAxis::kGrid:
      add("grid-base", [](RunConfig& c) { c.model.grids.levels = {{8, 8}}; });
      add("grid-plus-cls", [](RunConfig& c) { c.model.grids.levels = {{10, 8}}; });
      add("grid-minus-mask", [](RunConfig& c) { c.model.grids.levels = {{8, 4}}; });
      break;
  }
  return out;
}

Variant baseline_variant(const RunConfig& base) {
  RunConfig c = base;
  c.model.agg_mode = AggMode::kDirect;
  c.model.agg.deformable = false;
  c.loss.two_stage = false;
  c.validate();
  return {"baseline", std::move(c)};
}

VariantRun run_variant(const Variant& variant, std::span<const Scene> train_set, std::span<const Scene> val_set,
                       uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  VariantRun run;
  run.variant = variant.name;
  run.seed = seed;
  run.config = variant.config;
  run.config.model.init_seed = seed;
  run.config.train.seed = seed;
  ToyModel model(run.config.model);
  run.training = train(model, train_set, val_set, run.config.train, run.config.loss, run.config.decode);
  run.report = evaluate_model(model, val_set, run.config.decode);
  run.params = model.params();
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

std::string runs_csv(std::span<const VariantRun> runs) {
  std::string out = "variant,seed,ap,ap50,ap75,seconds\n";
  for (const auto& r : runs) {
    out += r.variant + "," + std::to_string(r.seed) + "," + fixed(r.report.ap) + "," + fixed(r.report.ap50) + "," +
           fixed(r.report.ap75) + "," + fixed(r.seconds, 1) + "\n";
  }
  return out;
}

std::vector<VariantSummary> summarize(std::span<const VariantRun> runs) {
  std::vector<VariantSummary> rows;
  std::map<std::string, std::vector<const VariantRun*>> groups;
  for (const auto& r : runs) {
    if (!groups.contains(r.variant)) rows.push_back({r.variant});
    groups[r.variant].push_back(&r);
  }
  for (auto& row : rows) {
    const auto& g = groups[row.variant];
    row.runs = static_cast<int64_t>(g.size());
    for (const auto* r : g) {
      row.mean_ap += r->report.ap;
      row.mean_ap50 += r->report.ap50;
    }
    row.mean_ap /= static_cast<double>(g.size());
    row.mean_ap50 /= static_cast<double>(g.size());
    if (g.size() > 1) {
      double ss = 0.0;
      for (const auto* r : g) ss += (r->report.ap - row.mean_ap) * (r->report.ap - row.mean_ap);
      row.std_ap = std::sqrt(ss / static_cast<double>(g.size() - 1));
    }
  }
  return rows;
}

std::string summary_csv(std::span<const VariantSummary> rows) {
  std::string out = "variant,runs,mean_ap,std_ap,mean_ap50,delta_ap\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.runs) + "," + fixed(r.mean_ap) + "," + fixed(r.std_ap) + "," +
           fixed(r.mean_ap50) + "," + fixed(r.mean_ap - rows.front().mean_ap) + "\n";
  }
  return out;
}

std::vector<ScenePredictions> collect_predictions(const ToyModel& model, std::span<const Scene> scenes,
                                                  const DecodeConfig& decode) {
  std::vector<ScenePredictions> out(scenes.size());
  parallel_for(static_cast<int64_t>(scenes.size()), [&](int64_t k) {
    auto& p = out[static_cast<size_t>(k)];
    p.candidates = predict_candidates(model, scenes[static_cast<size_t>(k)].image, decode);
    p.kept = mask_nms(p.candidates, decode.nms_iou, decode.max_detections).kept;
  });
  return out;
}

const VotingRow& VotingStudy::best() const {
  if (rows.empty()) throw std::logic_error("voting study has no schemes");
  const VotingRow* best = &rows.front();
  for (const auto& r : rows)
    if (r.search.best_ap > best->search.best_ap) best = &r;
  return *best;
}

VotingStudy run_voting_study(std::span<const ScenePredictions> predictions, std::span<const Scene> scenes,
                             int64_t num_classes, std::span<const VoteScheme> schemes) {
  VotingStudy study;
  std::vector<std::vector<Detection>> kept;
  for (const auto& p : predictions) kept.push_back(p.kept);
  study.base_ap = evaluate(kept, scenes, num_classes).ap;
  for (VoteScheme s : schemes) study.rows.push_back({s, grid_search_tau(predictions, scenes, s, num_classes)});
  return study;
}

std::string voting_csv(const VotingStudy& study) {
  std::string out = "method,tau,ap,delta_ap,best\n";
  out += "none,," + fixed(study.base_ap) + "," + fixed(0.0) + ",1\n";
  for (const auto& r : study.rows) {
    for (const auto& t : r.search.table) {
      out += std::string(to_string(r.scheme)) + "," + fixed(t.tau, 1) + "," + fixed(t.ap) + "," +
             fixed(t.ap - study.base_ap) + "," + (t.tau == r.search.best_tau ? "1" : "0") + "\n";
    }
  }
  return out;
}

}  // namespace sodar
