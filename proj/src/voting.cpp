#include "sodar/voting.hpp"

#include <stdexcept>
#include <string>

#include "sodar/metrics.hpp"

namespace sodar {

std::string_view to_string(VoteScheme scheme) {
  switch (scheme) {
    case VoteScheme::kAverage: return "average";
    case VoteScheme::kScoreWeighted: return "score_weighted";
    case VoteScheme::kIouWeighted: return "iou_weighted";
  }
  return "?";
}

VoteScheme parse_vote_scheme(std::string_view text) {
  for (auto s : {VoteScheme::kAverage, VoteScheme::kScoreWeighted, VoteScheme::kIouWeighted}) {
    if (to_string(s) == text) return s;
  }
  if (text == "avg" || text == "mean") return VoteScheme::kAverage;
  if (text == "score") return VoteScheme::kScoreWeighted;
  if (text == "iou") return VoteScheme::kIouWeighted;
  throw std::invalid_argument("unknown voting scheme '" + std::string(text) + "'");
}

void VoteConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("voting IoU threshold must lie strictly between 0 and 1");
  }
}

GridTensor vote(const GridTensor& kept_soft, const BinaryMask& kept_mask, std::span<const VoteCandidate> candidates,
                const VoteConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<const GridTensor*, double>> members;
  double total = 0.0;
  for (const auto& c : candidates) {
    if (c.soft_mask->shape() != kept_soft.shape()) throw std::invalid_argument("vote: candidate shape mismatch");
    const double iou = mask_iou(kept_mask, *c.mask);
    if (iou < cfg.iou_threshold) continue;
    double w = 1.0;
    if (cfg.scheme == VoteScheme::kScoreWeighted) w = c.score;
    if (cfg.scheme == VoteScheme::kIouWeighted) w = iou;
    members.emplace_back(c.soft_mask, w);
    total += w;
  }
  if (members.empty() || !(total > 0.0)) return kept_soft;
  GridTensor out(kept_soft.shape());
  for (const auto& [m, w] : members) {
    const double nw = w / total;
    for (size_t k = 0; k < out.size(); ++k) out[k] += nw * (*m)[k];
  }
  return out;
}

std::vector<Detection> apply_voting(const std::vector<Detection>& kept, const std::vector<Detection>& candidates,
                                    const VoteConfig& cfg, double mask_threshold) {
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (const auto& d : kept) {
    std::vector<VoteCandidate> pool;
    for (const auto& c : candidates)
      if (c.class_id == d.class_id) pool.push_back({&c.soft_mask, &c.mask, c.score});
    Detection v = d;
    v.soft_mask = vote(d.soft_mask, d.mask, pool, cfg);
    v.mask = BinaryMask::threshold(v.soft_mask.values(), d.mask.height, d.mask.width, mask_threshold);
    if (v.mask.empty()) {
      v.mask = d.mask;
      v.soft_mask = d.soft_mask;
    }
    out.push_back(std::move(v));
  }
  return out;
}

TauSearch grid_search_tau(std::span<const ScenePredictions> predictions, std::span<const Scene> scenes,
                          VoteScheme scheme, int64_t num_classes) {
  TauSearch search;
  bool first = true;
  for (double tau : kTauGrid) {
    std::vector<std::vector<Detection>> voted;
    voted.reserve(predictions.size());
    for (const auto& p : predictions) voted.push_back(apply_voting(p.kept, p.candidates, {scheme, tau}));
    const double ap = evaluate(voted, scenes, num_classes).ap;
    search.table.push_back({tau, ap});
    if (first || ap > search.best_ap) {
      search.best_ap = ap;
      search.best_tau = tau;
      first = false;
    }
  }
  return search;
}

}  // namespace sodar
