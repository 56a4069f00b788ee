#include "sodar/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sodar/parallel.hpp"

namespace sodar {

Adam::Adam(const ParameterSet& params, AdamConfig cfg) : cfg_(cfg), m_(zeros_like(params)), v_(zeros_like(params)) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    const GridTensor& g = grads.at(name);
    GridTensor& m = m_.at(name);
    GridTensor& v = v_.at(name);
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
    }
  }
}

double TrainConfig::lr_at_epoch(int64_t epoch) const {
  const auto boundary = static_cast<int64_t>(std::ceil(decay_at * static_cast<double>(epochs)));
  return epoch < boundary ? learning_rate : learning_rate * lr_decay;
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("epochs must be >= 0 and batch_size >= 1");
  if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be non-negative");
}

std::string TrainResult::curve_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,cls_loss,mask_loss,learning_rate,val_ap\n";
  for (const auto& e : curve) {
    os << e.epoch << ',' << e.loss << ',' << e.cls_loss << ',' << e.mask_loss << ',' << e.learning_rate << ',';
    if (e.val_ap) os << *e.val_ap;
    os << '\n';
  }
  return os.str();
}

LossBreakdown scene_gradients(const ToyModel& model, const Scene& scene, const LabelAssignment& labels,
                              const LossConfig& loss, ParameterSet& grads) {
  ForwardTrace trace;
  const ModelOutput out = model.forward(scene.image, &trace);
  OutputGrads og = model.zero_output_grads(out);
  const LossBreakdown lb = compute_loss(model, out, labels, loss, &og);
  model.backward(trace, og, grads);
  return lb;
}

Scene flip_horizontal(const Scene& scene) {
  Scene f = scene;
  const int64_t H = scene.height(), W = scene.width();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) f.image.at(c, y, x) = scene.image.at(c, y, W - 1 - x);
  for (size_t k = 0; k < scene.instances.size(); ++k)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) f.instances[k].mask.at(y, x) = scene.instances[k].mask.at(y, W - 1 - x);
  return f;
}

std::vector<std::vector<Detection>> predict_all(const ToyModel& model, std::span<const Scene> scenes,
                                                const DecodeConfig& decode) {
  std::vector<std::vector<Detection>> out(scenes.size());
  parallel_for(static_cast<int64_t>(scenes.size()),
               [&](int64_t k) { out[static_cast<size_t>(k)] = predict(model, scenes[static_cast<size_t>(k)].image, decode); });
  return out;
}

EvalReport evaluate_model(const ToyModel& model, std::span<const Scene> scenes, const DecodeConfig& decode) {
  const auto dets = predict_all(model, scenes, decode);
  return evaluate(dets, scenes, model.config().num_classes);
}

TrainResult train(ToyModel& model, std::span<const Scene> train_set, std::span<const Scene> val_set,
                  const TrainConfig& cfg, const LossConfig& loss, const DecodeConfig& decode,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  loss.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  const auto& mc = model.config();

  std::vector<LabelAssignment> labels, flipped_labels;
  std::vector<Scene> flipped;
  for (const auto& s : train_set) labels.push_back(assign_labels(s, mc.grids, mc.num_classes, mc.center_region));
  if (cfg.hflip) {
    for (const auto& s : train_set) {
      flipped.push_back(flip_horizontal(s));
      flipped_labels.push_back(assign_labels(flipped.back(), mc.grids, mc.num_classes, mc.center_region));
    }
  }

  Adam adam(model.params(), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train_set.size());
  TrainResult result;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at_epoch(epoch);
    EpochStats stats{epoch, 0.0, 0.0, 0.0, lr, std::nullopt};
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const auto n = static_cast<int64_t>(end - start);
      std::vector<ParameterSet> per_scene(static_cast<size_t>(n));
      std::vector<LossBreakdown> losses(static_cast<size_t>(n));
      parallel_for(n, [&](int64_t b) {
        const size_t idx = order[start + static_cast<size_t>(b)];
        const bool flip = cfg.hflip && ((idx + static_cast<size_t>(epoch)) % 2 == 1);
        per_scene[static_cast<size_t>(b)] = zeros_like(model.params());
        losses[static_cast<size_t>(b)] =
            scene_gradients(model, flip ? flipped[idx] : train_set[idx], flip ? flipped_labels[idx] : labels[idx], loss,
                            per_scene[static_cast<size_t>(b)]);
      });
      ParameterSet grads = zeros_like(model.params());
      for (int64_t b = 0; b < n; ++b) {
        const auto& lb = losses[static_cast<size_t>(b)];
        if (!std::isfinite(lb.total)) {
          std::ostringstream msg;
          msg << "training diverged at epoch " << epoch << ": non-finite loss on scene " << order[start + static_cast<size_t>(b)]
              << " (cls=" << lb.cls << ", mask=" << lb.mask << ")";
          throw std::runtime_error(msg.str());
        }
        stats.loss += lb.total;
        stats.cls_loss += lb.cls;
        stats.mask_loss += lb.mask;
        for (auto& [name, g] : grads) g.add_(per_scene[static_cast<size_t>(b)].at(name));
      }
      for (auto& [name, g] : grads) g.scale_(1.0 / static_cast<double>(n));
      adam.step(model.params(), grads, lr);
    }
    const double inv = 1.0 / static_cast<double>(train_set.size());
    stats.loss *= inv;
    stats.cls_loss *= inv;
    stats.mask_loss *= inv;
    const bool last = epoch + 1 == cfg.epochs;
    const bool due = cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0;
    if (!val_set.empty() && (last || due)) stats.val_ap = evaluate_model(model, val_set, decode).ap;
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

}  // namespace sodar
