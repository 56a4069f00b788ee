#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sodar/aggregation.hpp"
#include "sodar/geometry.hpp"
#include "sodar/ops.hpp"
#include "sodar/scene.hpp"
#include "sodar/tensor.hpp"

namespace sodar {

// kDynamic: per-cell predicted aggregation parameters (agg-D).
// kStatic: one learned parameter vector shared by all cells (agg-S).
// kDirect: no aggregation; the mask of cell (i, j) is sigmoid of its own
//          representation, i.e. the plain grid-cell baseline.
enum class AggMode { kDynamic, kStatic, kDirect };
std::string_view to_string(AggMode mode);
AggMode parse_agg_mode(std::string_view text);

struct ModelConfig {
  int64_t num_classes = kNumShapeClasses;
  GridConfig grids;
  AggMode agg_mode = AggMode::kDynamic;
  AggregationConfig agg;
  double center_region = 0.2;  // positive region as a fraction of the box extent
  double param_init_std = 0.05;
  uint64_t init_seed = 1;

  int64_t theta_dim() const;     // D, or 0 for kDirect
  int64_t offset_dim() const;    // P, or 0 without deformable sampling
  int64_t param_channels() const { return agg_mode == AggMode::kDynamic ? theta_dim() + offset_dim() : 0; }
  void validate() const;
};

// Named parameter tensors; the map order fixes every reduction and update order.
using ParameterSet = std::map<std::string, GridTensor>;
ParameterSet zeros_like(const ParameterSet& params);
int64_t parameter_count(const ParameterSet& params);

struct LevelOutput {
  GridTensor cls_logits;  // [C, G, G]
  GridTensor cls;         // [C, G, G], sigmoid scores
  GridTensor reps;        // [G'^2, H, W], raw
  GridTensor param_map;   // [D + P, G, G] (kDynamic only)
  DynamicParams params;   // theta [G, G, D] (+ offsets [G, G, P]); empty for kDirect
};

struct ModelOutput {
  std::vector<LevelOutput> levels;
  GridTensor context;  // [ctx, H, W]
};

// Gradients with respect to the model outputs. theta and offsets use the
// DynamicParams layout ([G, G, D] and [G, G, P]) in both aggregation modes.
struct LevelOutputGrads {
  GridTensor cls_logits;
  GridTensor reps;
  GridTensor theta;
  GridTensor offsets;
};

struct OutputGrads {
  std::vector<LevelOutputGrads> levels;
  GridTensor context;
};

class ToyModel;

// Intermediate activations recorded by forward for backward.
struct ForwardTrace {
  int64_t in_h = 0, in_w = 0;
  Conv2dNode enc1, enc2, enc3, ctx_conv, mask_tower;
  ReluNode relu1, relu2, relu3, relu_mask;
  ConcatNode mask_in;
  struct Level {
    Conv2dNode mask_out, cls_tower, cls_tower2, cls_out, param_tower, param_out;
    ReluNode relu_cls, relu_cls2, relu_param;
  };
  std::vector<Level> levels;
  bool recorded = false;
};

class ToyModel {
 public:
  explicit ToyModel(ModelConfig config);
  ToyModel(ModelConfig config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  // image: [3, H, W] with H, W divisible by 4. Mask outputs are H/2 x W/2.
  ModelOutput forward(const GridTensor& image, ForwardTrace* trace = nullptr) const;
  // Accumulates parameter gradients into grads.
  void backward(const ForwardTrace& trace, const OutputGrads& out_grads, ParameterSet& grads) const;

  OutputGrads zero_output_grads(const ModelOutput& out) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

ParameterSet init_parameters(const ModelConfig& config);

// Target assignment: cells whose centre lies in the instance's centre region
// (center_region x box extent around the mass centre), plus the cell holding
// the mass centre. Contended cells go to the smaller instance.
struct PositiveCell {
  Cell cell;
  int64_t instance = 0;
};

struct LevelTargets {
  GridTensor cls_target;  // [C, G, G] one-hot at positives
  std::vector<PositiveCell> positives;  // row-major cell order
};

struct LabelAssignment {
  std::vector<LevelTargets> levels;
  std::vector<GridTensor> target_masks;  // per instance, [H/2, W/2] binary
  int64_t num_positive() const;
};

// Level index per instance from sqrt(area) against geometric-midpoint thresholds.
std::vector<int64_t> assign_levels(const Scene& scene, const GridConfig& grids);
LabelAssignment assign_labels(const Scene& scene, const GridConfig& grids, int64_t num_classes,
                              double center_region = 0.2);

// Downsamples a full-resolution instance mask to the mask-head resolution.
GridTensor downsample_mask(const BinaryMask& mask, int64_t out_h, int64_t out_w);

// Checkpoint directory: one GTF per tensor plus manifest.txt with
// "name file d0xd1x..." lines.
void save_parameters(const std::filesystem::path& dir, const ParameterSet& params);
ParameterSet load_parameters(const std::filesystem::path& dir);

}  // namespace sodar
