#include "sodar/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sodar {

std::string_view to_string(ClsLoss loss) { return loss == ClsLoss::kFocal ? "focal" : "bce"; }

ClsLoss parse_cls_loss(std::string_view text) {
  if (text == "focal") return ClsLoss::kFocal;
  if (text == "bce") return ClsLoss::kBce;
  throw std::invalid_argument("unknown classification loss '" + std::string(text) + "'");
}

void LossConfig::validate() const {
  if (!(mask_loss_weight > 0.0)) throw std::invalid_argument("mask_loss_weight must be > 0");
  if (dice_eps <= 0.0) throw std::invalid_argument("dice_eps must be > 0");
  if (focal_gamma < 0.0 || focal_alpha <= 0.0 || focal_alpha >= 1.0) {
    throw std::invalid_argument("focal parameters out of range");
  }
}

double dice_loss(std::span<const double> pred, std::span<const double> target, double eps) {
  if (pred.size() != target.size()) throw std::invalid_argument("dice: pred and target sizes differ");
  double a = 0.0, pp = 0.0, gg = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) {
    a += pred[k] * target[k];
    pp += pred[k] * pred[k];
    gg += target[k] * target[k];
  }
  return 1.0 - 2.0 * a / (pp + gg + eps);
}

std::vector<double> dice_loss_grad(std::span<const double> pred, std::span<const double> target, double eps) {
  if (pred.size() != target.size()) throw std::invalid_argument("dice: pred and target sizes differ");
  double a = 0.0, pp = 0.0, gg = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) {
    a += pred[k] * target[k];
    pp += pred[k] * pred[k];
    gg += target[k] * target[k];
  }
  const double b = pp + gg + eps;
  std::vector<double> g(pred.size());
  for (size_t k = 0; k < pred.size(); ++k) g[k] = -2.0 * (target[k] * b - 2.0 * a * pred[k]) / (b * b);
  return g;
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

ClsLossResult classification_loss(const GridTensor& logits, const GridTensor& target, int64_t num_positive,
                                  const LossConfig& cfg) {
  if (logits.shape() != target.shape()) throw std::invalid_argument("classification loss: shape mismatch");
  const double norm = 1.0 / static_cast<double>(num_positive + 1);
  ClsLossResult r{0.0, GridTensor(logits.shape())};
  const double gamma = cfg.focal_gamma, alpha = cfg.focal_alpha;
  for (size_t k = 0; k < logits.size(); ++k) {
    const double z = logits[k], t = target[k];
    const double p = sigmoid(z);
    const double log_p = -softplus(-z), log_q = -softplus(z);
    double loss = 0.0, dz = 0.0;
    if (cfg.cls_loss == ClsLoss::kBce) {
      loss = -(t * log_p + (1.0 - t) * log_q);
      dz = p - t;
    } else if (t > 0.5) {
      // -alpha (1-p)^gamma log p
      const double q = 1.0 - p;
      loss = -alpha * std::pow(q, gamma) * log_p;
      const double dldp = alpha * (gamma * std::pow(q, gamma - 1.0) * log_p - std::pow(q, gamma) / p);
      dz = dldp * p * q;
      if (!std::isfinite(dz)) dz = -alpha * std::pow(q, gamma) * q;  // p underflow limit
    } else {
      // -(1-alpha) p^gamma log(1-p)
      const double q = 1.0 - p;
      loss = -(1.0 - alpha) * std::pow(p, gamma) * log_q;
      const double dldp = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * log_q - std::pow(p, gamma) / q);
      dz = dldp * p * q;
      if (!std::isfinite(dz)) dz = (1.0 - alpha) * std::pow(p, gamma) * p;
    }
    r.loss += loss * norm;
    r.grad_logits[k] = dz * norm;
  }
  return r;
}

GridTensor cell_mask_logits(const ToyModel& model, const ModelOutput& out, size_t level, Cell cell) {
  const auto& cfg = model.config();
  const GridLevel& lv = cfg.grids.levels[level];
  const LevelOutput& lo = out.levels[level];
  if (cfg.agg_mode == AggMode::kDirect) {
    const Cell m = interp_index(cell.row, cell.col, lv.grid, lv.mask_grid);
    const auto plane = lo.reps.plane(m.row * lv.mask_grid + m.col);
    return GridTensor({lo.reps.dim(1), lo.reps.dim(2)}, std::vector<double>(plane.begin(), plane.end()));
  }
  return aggregate_dynamic(lo.reps, lo.params, out.context, cell, cfg.agg, lv);
}

LossBreakdown compute_loss(const ToyModel& model, const ModelOutput& out, const LabelAssignment& labels,
                           const LossConfig& cfg, OutputGrads* grads) {
  cfg.validate();
  const auto& mc = model.config();
  LossBreakdown lb;
  lb.num_positive = labels.num_positive();
  if (labels.levels.size() != out.levels.size()) throw std::invalid_argument("label/output level count mismatch");

  for (size_t l = 0; l < out.levels.size(); ++l) {
    auto cr = classification_loss(out.levels[l].cls_logits, labels.levels[l].cls_target, lb.num_positive, cfg);
    lb.cls += cr.loss;
    if (grads) grads->levels[l].cls_logits.add_(cr.grad_logits);
  }
  if (lb.num_positive == 0) {
    lb.total = lb.cls;
    return lb;
  }

  const double inv_pos = 1.0 / static_cast<double>(lb.num_positive);
  const double mask_scale = cfg.mask_loss_weight * inv_pos;
  for (size_t l = 0; l < out.levels.size(); ++l) {
    const GridLevel& lv = mc.grids.levels[l];
    const LevelOutput& lo = out.levels[l];
    for (const PositiveCell& pc : labels.levels[l].positives) {
      const GridTensor& target = labels.target_masks[static_cast<size_t>(pc.instance)];
      const Cell m = interp_index(pc.cell.row, pc.cell.col, lv.grid, lv.mask_grid);
      const int64_t rep_channel = m.row * lv.mask_grid + m.col;

      if (mc.agg_mode == AggMode::kDirect) {
        const auto plane = lo.reps.plane(rep_channel);
        GridTensor prob({lo.reps.dim(1), lo.reps.dim(2)});
        for (size_t k = 0; k < prob.size(); ++k) prob[k] = sigmoid(plane[k]);
        lb.mask += dice_loss(prob.values(), target.values(), cfg.dice_eps) * inv_pos;
        if (grads) {
          const auto dp = dice_loss_grad(prob.values(), target.values(), cfg.dice_eps);
          auto dst = grads->levels[l].reps.plane(rep_channel);
          for (size_t k = 0; k < dp.size(); ++k) dst[k] += mask_scale * dp[k] * prob[k] * (1.0 - prob[k]);
        }
      } else {
        CellAggregator agg(mc.agg, lv);
        const GridTensor logits = agg.forward(lo.reps, out.context, pc.cell, lo.params.theta_at(pc.cell.row, pc.cell.col),
                                              lo.params.offsets_at(pc.cell.row, pc.cell.col));
        const GridTensor prob = sigmoid(logits);
        lb.mask += dice_loss(prob.values(), target.values(), cfg.dice_eps) * inv_pos;
        if (grads) {
          const auto dp = dice_loss_grad(prob.values(), target.values(), cfg.dice_eps);
          GridTensor dlogits(logits.shape());
          for (size_t k = 0; k < dp.size(); ++k) dlogits[k] = mask_scale * dp[k] * prob[k] * (1.0 - prob[k]);
          auto& lg = grads->levels[l];
          const auto ag = agg.backward(dlogits, &lg.reps, &grads->context);
          const int64_t g = lv.grid;
          const auto d = static_cast<int64_t>(ag.theta.size());
          for (int64_t q = 0; q < d; ++q) lg.theta[static_cast<size_t>((pc.cell.row * g + pc.cell.col) * d + q)] += ag.theta[static_cast<size_t>(q)];
          const auto p = static_cast<int64_t>(ag.offsets.size());
          for (int64_t q = 0; q < p; ++q) lg.offsets[static_cast<size_t>((pc.cell.row * g + pc.cell.col) * p + q)] += ag.offsets[static_cast<size_t>(q)];
        }
        if (cfg.two_stage) {
          const auto plane = lo.reps.plane(rep_channel);
          GridTensor rp({lo.reps.dim(1), lo.reps.dim(2)});
          for (size_t k = 0; k < rp.size(); ++k) rp[k] = sigmoid(plane[k]);
          lb.two_stage += dice_loss(rp.values(), target.values(), cfg.dice_eps) * inv_pos;
          if (grads) {
            const auto dp = dice_loss_grad(rp.values(), target.values(), cfg.dice_eps);
            auto dst = grads->levels[l].reps.plane(rep_channel);
            for (size_t k = 0; k < dp.size(); ++k) dst[k] += mask_scale * dp[k] * rp[k] * (1.0 - rp[k]);
          }
        }
      }
    }
  }
  lb.total = lb.cls + cfg.mask_loss_weight * (lb.mask + lb.two_stage);
  return lb;
}

}  // namespace sodar
