#pragma once

#include <span>
#include <string_view>

#include "sodar/model.hpp"

namespace sodar {

enum class ClsLoss { kFocal, kBce };
std::string_view to_string(ClsLoss loss);
ClsLoss parse_cls_loss(std::string_view text);

struct LossConfig {
  double mask_loss_weight = 3.0;  // lambda_m
  ClsLoss cls_loss = ClsLoss::kFocal;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1e-6;
  // Adds direct Dice supervision on sigmoid of the representation at the
  // mapped mask cell of every positive.
  bool two_stage = false;

  void validate() const;
};

// 1 - 2 sum(p g) / (sum p^2 + sum g^2 + eps)
double dice_loss(std::span<const double> pred, std::span<const double> target, double eps = 1e-6);
// d loss / d pred
std::vector<double> dice_loss_grad(std::span<const double> pred, std::span<const double> target, double eps = 1e-6);

struct ClsLossResult {
  double loss = 0.0;
  GridTensor grad_logits;
};
// Summed over every cell and class, divided by (positives + 1).
ClsLossResult classification_loss(const GridTensor& logits, const GridTensor& target, int64_t num_positive,
                                  const LossConfig& cfg);

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double mask = 0.0;       // mean Dice over positives (before lambda_m)
  double two_stage = 0.0;  // mean Dice on the representations (before lambda_m)
  int64_t num_positive = 0;
};

// L = L_cls + lambda_m * mean_pos dice(sigmoid(Agg(...)), target)
//     [+ lambda_m * mean_pos dice(sigmoid(M_hat at mapped cell), target)]
// Fills gradients with respect to the model outputs when grads is non-null.
LossBreakdown compute_loss(const ToyModel& model, const ModelOutput& out, const LabelAssignment& labels,
                           const LossConfig& cfg, OutputGrads* grads);

// Raw mask logits of a positive cell under the model's aggregation mode.
GridTensor cell_mask_logits(const ToyModel& model, const ModelOutput& out, size_t level, Cell cell);

}  // namespace sodar
