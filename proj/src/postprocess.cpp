#include "sodar/postprocess.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sodar/loss.hpp"

namespace sodar {

std::vector<CandidateCell> select_candidates(std::span<const GridTensor> cls_levels, double score_threshold) {
  std::vector<CandidateCell> out;
  for (size_t l = 0; l < cls_levels.size(); ++l) {
    const GridTensor& cls = cls_levels[l];
    const int64_t C = cls.dim(0), G = cls.dim(1);
    for (int64_t i = 0; i < G; ++i)
      for (int64_t j = 0; j < cls.dim(2); ++j) {
        int best = 0;
        for (int64_t c = 1; c < C; ++c)
          if (cls.at(c, i, j) > cls.at(best, i, j)) best = static_cast<int>(c);
        const double s = cls.at(best, i, j);
        if (s >= score_threshold) out.push_back({{static_cast<int64_t>(l), {i, j}}, best, s});
      }
  }
  return out;
}

std::vector<Detection> decode(std::span<const GridTensor> cls_levels, const MaskLogitProvider& logits,
                              int64_t image_h, int64_t image_w, const DecodeConfig& cfg) {
  const auto cands = select_candidates(cls_levels, cfg.score_threshold);
  std::vector<Detection> out;
  size_t pos = 0;
  while (pos < cands.size()) {
    const int64_t level = cands[pos].source.level;
    size_t end = pos;
    std::vector<Cell> cells;
    while (end < cands.size() && cands[end].source.level == level) cells.push_back(cands[end++].source.cell);
    const GridTensor maps = logits(level, cells);
    if (maps.rank() != 3 || maps.dim(0) != static_cast<int64_t>(cells.size())) {
      throw std::invalid_argument("mask provider returned shape " + shape_to_string(maps.shape()));
    }
    const GridTensor soft = resize_bilinear(sigmoid(maps), image_h, image_w);
    for (size_t k = pos; k < end; ++k) {
      const auto plane = soft.plane(static_cast<int64_t>(k - pos));
      Detection d;
      d.class_id = cands[k].class_id;
      d.score = cands[k].score;
      d.source = cands[k].source;
      d.soft_mask = GridTensor({image_h, image_w}, std::vector<double>(plane.begin(), plane.end()));
      // p > 0.5 exactly when logit > 0.
      d.mask = BinaryMask::threshold(d.soft_mask.values(), image_h, image_w, cfg.mask_threshold);
      if (d.mask.empty()) continue;
      out.push_back(std::move(d));
    }
    pos = end;
  }
  return out;
}

void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.source < b.source;
  });
}

NmsResult mask_nms(std::vector<Detection> candidates, double iou, int64_t max_detections) {
  sort_detections(candidates);
  NmsResult r;
  std::vector<bool> removed(candidates.size(), false);
  for (size_t a = 0; a < candidates.size(); ++a) {
    if (removed[a]) continue;
    if (static_cast<int64_t>(r.kept.size()) >= max_detections) {
      removed[a] = true;
      continue;
    }
    for (size_t b = a + 1; b < candidates.size(); ++b) {
      if (removed[b] || candidates[b].class_id != candidates[a].class_id) continue;
      if (mask_iou(candidates[a].mask, candidates[b].mask) > iou) removed[b] = true;
    }
    r.kept.push_back(candidates[a]);
  }
  for (size_t a = 0; a < candidates.size(); ++a)
    if (removed[a]) r.suppressed.push_back(std::move(candidates[a]));
  return r;
}

std::vector<Detection> predict_candidates(const ToyModel& model, const GridTensor& image, const DecodeConfig& cfg) {
  const ModelOutput out = model.forward(image);
  const auto& mc = model.config();
  std::vector<GridTensor> cls;
  for (const auto& lo : out.levels) cls.push_back(lo.cls);
  MaskLogitProvider provider = [&](int64_t level, std::span<const Cell> cells) {
    const auto l = static_cast<size_t>(level);
    const LevelOutput& lo = out.levels[l];
    if (mc.agg_mode != AggMode::kDirect) {
      return aggregate_batch(lo.reps, lo.params, out.context, cells, mc.agg, mc.grids.levels[l]);
    }
    GridTensor maps({static_cast<int64_t>(cells.size()), lo.reps.dim(1), lo.reps.dim(2)});
    for (size_t k = 0; k < cells.size(); ++k) {
      const GridTensor m = cell_mask_logits(model, out, l, cells[k]);
      std::copy(m.values().begin(), m.values().end(), maps.plane(static_cast<int64_t>(k)).begin());
    }
    return maps;
  };
  return decode(cls, provider, image.dim(1), image.dim(2), cfg);
}

std::vector<Detection> predict(const ToyModel& model, const GridTensor& image, const DecodeConfig& cfg) {
  return mask_nms(predict_candidates(model, image, cfg), cfg.nms_iou, cfg.max_detections).kept;
}

void write_detections(std::ostream& os, int64_t scene_index, std::span<const Detection> dets, int64_t h, int64_t w) {
  os << "scene " << scene_index << ' ' << h << ' ' << w << ' ' << dets.size() << '\n';
  for (const auto& d : dets) {
    os << d.class_id << ' ' << std::setprecision(9) << d.score << ' ' << rle_to_string(d.mask) << '\n';
  }
}

std::vector<std::vector<Detection>> read_detections(std::istream& is) {
  std::vector<std::vector<Detection>> scenes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string tag;
    int64_t index = 0, h = 0, w = 0;
    size_t n = 0;
    hs >> tag >> index >> h >> w >> n;
    if (tag != "scene") throw std::runtime_error("detections: expected a scene header, got '" + line + "'");
    std::vector<Detection> dets;
    for (size_t k = 0; k < n; ++k) {
      if (!std::getline(is, line)) throw std::runtime_error("detections: truncated scene " + std::to_string(index));
      std::istringstream ls(line);
      Detection d;
      ls >> d.class_id >> d.score;
      std::string rest;
      std::getline(ls, rest);
      d.mask = rle_from_string(rest, h, w);
      d.soft_mask = d.mask.to_tensor();
      dets.push_back(std::move(d));
    }
    if (static_cast<int64_t>(scenes.size()) <= index) scenes.resize(static_cast<size_t>(index + 1));
    scenes[static_cast<size_t>(index)] = std::move(dets);
  }
  return scenes;
}

}  // namespace sodar
