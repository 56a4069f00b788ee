#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sodar/postprocess.hpp"
#include "sodar/scene.hpp"

namespace sodar {

// COCO-style mask AP at one IoU threshold: detections matched greedily in
// score order to the unmatched same-class ground truth of highest IoU (at
// least iou_threshold), precision made monotone, sampled at 101 recall
// points, averaged over classes that have ground truth. nullopt when no
// ground truth exists at all.
std::optional<double> average_precision(std::span<const std::vector<Detection>> detections,
                                         std::span<const Scene> scenes, double iou_threshold, int64_t num_classes);

struct EvalReport {
  double ap = 0.0;  // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::map<int, double> ladder;     // AP at 50, 60, 70, 80, 90
  std::map<int, double> per_class;  // mean over thresholds, classes with ground truth only
  int64_t num_detections = 0;
  int64_t num_ground_truth = 0;
  bool has_ground_truth = false;

  // "metric,value" rows.
  std::string to_csv() const;
};

EvalReport evaluate(std::span<const std::vector<Detection>> detections, std::span<const Scene> scenes,
                    int64_t num_classes);

std::vector<double> coco_iou_thresholds();

}  // namespace sodar
