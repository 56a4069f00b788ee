#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "sodar/mask.hpp"
#include "sodar/model.hpp"
#include "sodar/tensor.hpp"

namespace sodar {

struct SourceCell {
  int64_t level = 0;
  Cell cell;
  friend auto operator<=>(const SourceCell&, const SourceCell&) = default;
  friend bool operator==(const SourceCell&, const SourceCell&) = default;
};

struct Detection {
  int class_id = 0;
  double score = 0.0;
  BinaryMask mask;        // image resolution
  GridTensor soft_mask;   // [H, W] probabilities, image resolution
  SourceCell source;
};

struct DecodeConfig {
  double score_threshold = 0.1;  // s_min
  double mask_threshold = 0.5;
  double nms_iou = 0.5;          // tau_nms
  int64_t max_detections = 100;
};

struct CandidateCell {
  SourceCell source;
  int class_id = 0;
  double score = 0.0;
};

// Cells whose best class score reaches s_min, in level then row-major order.
std::vector<CandidateCell> select_candidates(std::span<const GridTensor> cls_levels, double score_threshold);

// Given the selected cells of one level, returns their raw mask logits [N, h, w].
using MaskLogitProvider = std::function<GridTensor(int64_t level, std::span<const Cell> cells)>;

// Score filter, sigmoid, bilinear upsample to the image size, binarize; empty
// masks are dropped.
std::vector<Detection> decode(std::span<const GridTensor> cls_levels, const MaskLogitProvider& logits,
                              int64_t image_h, int64_t image_w, const DecodeConfig& cfg);

// Score descending, ties broken by lower (level, i, j).
void sort_detections(std::vector<Detection>& dets);

struct NmsResult {
  std::vector<Detection> kept;
  std::vector<Detection> suppressed;
};

// Greedy class-aware mask NMS: suppresses same-class masks with IoU > iou.
NmsResult mask_nms(std::vector<Detection> candidates, double iou, int64_t max_detections = 100);

// Forward pass, batched aggregation over the candidate cells and decode.
// Returns all decoded candidates (before NMS).
std::vector<Detection> predict_candidates(const ToyModel& model, const GridTensor& image, const DecodeConfig& cfg);
std::vector<Detection> predict(const ToyModel& model, const GridTensor& image, const DecodeConfig& cfg);

// Line format per scene: "scene <index> <H> <W> <count>" followed by
// "<class> <score> <rle counts...>" lines.
void write_detections(std::ostream& os, int64_t scene_index, std::span<const Detection> dets, int64_t h, int64_t w);
std::vector<std::vector<Detection>> read_detections(std::istream& is);

}  // namespace sodar
