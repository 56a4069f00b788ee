#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "sodar/postprocess.hpp"
#include "sodar/scene.hpp"

namespace sodar {

enum class VoteScheme { kAverage, kScoreWeighted, kIouWeighted };
std::string_view to_string(VoteScheme scheme);
VoteScheme parse_vote_scheme(std::string_view text);

struct VoteConfig {
  VoteScheme scheme = VoteScheme::kAverage;
  double iou_threshold = 0.5;  // tau_v, strictly inside (0, 1)
  void validate() const;
};

struct VoteCandidate {
  const GridTensor* soft_mask = nullptr;
  const BinaryMask* mask = nullptr;
  double score = 0.0;
};

// Weighted mean of the candidates whose mask IoU with the kept mask is at
// least tau_v. Weights are 1, the score, or that IoU, normalised to sum to 1.
// Returns the kept soft mask unchanged when no candidate qualifies.
GridTensor vote(const GridTensor& kept_soft, const BinaryMask& kept_mask, std::span<const VoteCandidate> candidates,
                const VoteConfig& cfg);

// Re-votes every kept detection against all same-class candidates of the
// image and re-binarizes at mask_threshold (falling back to the original mask
// when the vote empties it).
std::vector<Detection> apply_voting(const std::vector<Detection>& kept, const std::vector<Detection>& candidates,
                                    const VoteConfig& cfg, double mask_threshold = 0.5);

// Per-image prediction results retained for voting experiments.
struct ScenePredictions {
  std::vector<Detection> candidates;  // decoded, before NMS
  std::vector<Detection> kept;        // after NMS
};

struct TauResult {
  double tau = 0.0;
  double ap = 0.0;
};

struct TauSearch {
  std::vector<TauResult> table;
  double best_tau = 0.0;
  double best_ap = 0.0;
};

inline constexpr double kTauGrid[] = {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

// Evaluates mean AP over tau_v in {0.3, ..., 0.9}; ties go to the smaller tau.
TauSearch grid_search_tau(std::span<const ScenePredictions> predictions, std::span<const Scene> scenes,
                          VoteScheme scheme, int64_t num_classes);

}  // namespace sodar
