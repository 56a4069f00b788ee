#include "sodar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sodar {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back(0.5 + 0.05 * k);
  return t;
}

namespace {

struct DetRef {
  double score;
  size_t scene;
  size_t index;
  SourceCell source;
};

class Matcher {
 public:
  Matcher(std::span<const std::vector<Detection>> detections, std::span<const Scene> scenes, int64_t num_classes)
      : scenes_(scenes), num_classes_(num_classes) {
    if (detections.size() != scenes.size()) {
      throw std::invalid_argument("evaluation needs one detection list per scene (" +
                                  std::to_string(detections.size()) + " vs " + std::to_string(scenes.size()) + ")");
    }
    by_class_.resize(static_cast<size_t>(num_classes));
    gt_count_.assign(static_cast<size_t>(num_classes), 0);
    ious_.resize(scenes.size());
    for (size_t s = 0; s < scenes.size(); ++s) {
      const auto& gts = scenes[s].instances;
      for (const auto& g : gts) {
        if (g.class_id >= 0 && g.class_id < num_classes) ++gt_count_[static_cast<size_t>(g.class_id)];
      }
      const auto& dets = detections[s];
      ious_[s].assign(dets.size() * gts.size(), 0.0);
      for (size_t d = 0; d < dets.size(); ++d) {
        if (dets[d].class_id < 0 || dets[d].class_id >= num_classes) continue;
        by_class_[static_cast<size_t>(dets[d].class_id)].push_back({dets[d].score, s, d, dets[d].source});
        for (size_t g = 0; g < gts.size(); ++g) {
          if (gts[g].class_id == dets[d].class_id) ious_[s][d * gts.size() + g] = mask_iou(dets[d].mask, gts[g].mask);
        }
      }
    }
    for (auto& refs : by_class_) {
      std::stable_sort(refs.begin(), refs.end(), [](const DetRef& a, const DetRef& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.source < b.source;
      });
    }
  }

  int64_t gt_count(int c) const { return gt_count_[static_cast<size_t>(c)]; }

  double class_ap(int c, double threshold) const {
    const auto npos = static_cast<double>(gt_count(c));
    std::vector<std::vector<bool>> matched(scenes_.size());
    for (size_t s = 0; s < scenes_.size(); ++s) matched[s].assign(scenes_[s].instances.size(), false);
    std::vector<double> precision, recall;
    double tp = 0, fp = 0;
    for (const DetRef& r : by_class_[static_cast<size_t>(c)]) {
      const auto& gts = scenes_[r.scene].instances;
      int64_t best = -1;
      double best_iou = threshold;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_id != c || matched[r.scene][g]) continue;
        const double iou = ious_[r.scene][r.index * gts.size() + g];
        if (iou >= best_iou && (best < 0 || iou > best_iou)) {
          best = static_cast<int64_t>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        matched[r.scene][static_cast<size_t>(best)] = true;
        ++tp;
      } else {
        ++fp;
      }
      recall.push_back(tp / npos);
      precision.push_back(tp / (tp + fp));
    }
    for (size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
      const double r = k / 100.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
    }
    return sum / 101.0;
  }

  // Mean over classes with ground truth; nullopt when there is none.
  std::optional<double> mean_ap(double threshold) const {
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes_; ++c) {
      if (gt_count(c) == 0) continue;
      sum += class_ap(c, threshold);
      ++present;
    }
    if (present == 0) return std::nullopt;
    return sum / present;
  }

 private:
  std::span<const Scene> scenes_;
  int64_t num_classes_;
  std::vector<std::vector<DetRef>> by_class_;
  std::vector<int64_t> gt_count_;
  std::vector<std::vector<double>> ious_;  // per scene, [det][gt]
};

}  // namespace

std::optional<double> average_precision(std::span<const std::vector<Detection>> detections,
                                         std::span<const Scene> scenes, double iou_threshold, int64_t num_classes) {
  return Matcher(detections, scenes, num_classes).mean_ap(iou_threshold);
}

EvalReport evaluate(std::span<const std::vector<Detection>> detections, std::span<const Scene> scenes,
                    int64_t num_classes) {
  const Matcher matcher(detections, scenes, num_classes);
  EvalReport rep;
  for (const auto& d : detections) rep.num_detections += static_cast<int64_t>(d.size());
  for (int c = 0; c < num_classes; ++c) rep.num_ground_truth += matcher.gt_count(c);
  rep.has_ground_truth = rep.num_ground_truth > 0;
  if (!rep.has_ground_truth) return rep;
  const auto thresholds = coco_iou_thresholds();
  std::map<int, double> class_sum;
  double total = 0.0;
  for (size_t t = 0; t < thresholds.size(); ++t) {
    const double thr = thresholds[t];
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
      if (matcher.gt_count(c) == 0) continue;
      const double ap = matcher.class_ap(c, thr);
      class_sum[c] += ap;
      sum += ap;
      ++present;
    }
    const double mean = sum / present;
    total += mean;
    const int pct = static_cast<int>(std::lround(thr * 100));
    if (pct == 50) rep.ap50 = mean;
    if (pct == 75) rep.ap75 = mean;
    if (pct % 10 == 0) rep.ladder[pct] = mean;
  }
  rep.ap = total / static_cast<double>(thresholds.size());
  for (const auto& [c, s] : class_sum) rep.per_class[c] = s / static_cast<double>(thresholds.size());
  return rep;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "metric,value\n";
  os << "AP," << ap << "\nAP50," << ap50 << "\nAP75," << ap75 << '\n';
  for (const auto& [pct, v] : ladder) os << "AP" << pct << ',' << v << '\n';
  for (const auto& [c, v] : per_class) os << "AP_class" << c << ',' << v << '\n';
  os << "detections," << num_detections << "\nground_truth," << num_ground_truth << '\n';
  return os.str();
}

}  // namespace sodar
