#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sodar/config.hpp"
#include "sodar/metrics.hpp"
#include "sodar/voting.hpp"

namespace sodar {

struct BenchmarkConfig {
  uint64_t seed = 7;
  int64_t train_count = 500;
  int64_t val_count = 100;
  int64_t size = 64;
  int64_t max_objects = 4;
};

// Train scenes are stream indices [0, train_count), validation scenes follow them.
struct Benchmark {
  std::vector<Scene> train;
  std::vector<Scene> val;
};
Benchmark make_benchmark(const BenchmarkConfig& cfg);

enum class AblationAxis { kAgg, kNeighbors, kContext, kLayers, kKernel, kTwoStage, kDeform, kGrid };
std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view text);

struct Variant {
  std::string name;
  RunConfig config;
};

// The sweep for one axis, every variant derived from base.
std::vector<Variant> ablation_variants(AblationAxis axis, const RunConfig& base);
// Plain grid-cell masks without aggregation.
Variant baseline_variant(const RunConfig& base);

struct VariantRun {
  std::string variant;
  uint64_t seed = 0;
  RunConfig config;
  ParameterSet params;
  TrainResult training;
  EvalReport report;
  double seconds = 0.0;
};

// Trains from scratch with model init and shuffling both seeded by seed.
VariantRun run_variant(const Variant& variant, std::span<const Scene> train_set, std::span<const Scene> val_set,
                       uint64_t seed);

// variant,seed,ap,ap50,ap75,seconds rows.
std::string runs_csv(std::span<const VariantRun> runs);

struct VariantSummary {
  std::string variant;
  int64_t runs = 0;
  double mean_ap = 0.0;
  double std_ap = 0.0;
  double mean_ap50 = 0.0;
};
// Per-variant mean and sample standard deviation, in first-appearance order.
std::vector<VariantSummary> summarize(std::span<const VariantRun> runs);
// variant,runs,mean_ap,std_ap,mean_ap50,delta_ap with deltas against the first row.
std::string summary_csv(std::span<const VariantSummary> rows);

std::vector<ScenePredictions> collect_predictions(const ToyModel& model, std::span<const Scene> scenes,
                                                  const DecodeConfig& decode);

struct VotingRow {
  VoteScheme scheme;
  TauSearch search;
};

struct VotingStudy {
  double base_ap = 0.0;
  std::vector<VotingRow> rows;
  const VotingRow& best() const;
};

VotingStudy run_voting_study(std::span<const ScenePredictions> predictions, std::span<const Scene> scenes,
                             int64_t num_classes, std::span<const VoteScheme> schemes);
// method,tau,ap,delta_ap with a "none" row first, then the full tau table per scheme.
std::string voting_csv(const VotingStudy& study);

}  // namespace sodar
