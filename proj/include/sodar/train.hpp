#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sodar/loss.hpp"
#include "sodar/metrics.hpp"
#include "sodar/model.hpp"
#include "sodar/postprocess.hpp"

namespace sodar {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig cfg = {});
  void step(ParameterSet& params, const ParameterSet& grads, double lr);
  int64_t steps() const { return steps_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  ParameterSet m_, v_;
  int64_t steps_ = 0;
};

struct TrainConfig {
  int64_t epochs = 12;
  int64_t batch_size = 4;
  double learning_rate = 5e-3;
  double lr_decay = 0.1;      // multiplier applied once
  double decay_at = 0.75;     // fraction of the epochs before the decay
  uint64_t seed = 1;          // shuffling
  int64_t val_every = 1;      // epochs between validation passes; 0 = only at the end
  bool hflip = false;
  AdamConfig adam;

  double lr_at_epoch(int64_t epoch) const;
  void validate() const;
};

struct EpochStats {
  int64_t epoch = 0;
  double loss = 0.0;
  double cls_loss = 0.0;
  double mask_loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> val_ap;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::string curve_csv() const;
};

// Loss and parameter gradients for one scene (gradients accumulated into grads).
LossBreakdown scene_gradients(const ToyModel& model, const Scene& scene, const LabelAssignment& labels,
                              const LossConfig& loss, ParameterSet& grads);

// Mini-batch Adam. Per-scene gradients are reduced in batch order so the
// result does not depend on the thread count. Throws std::runtime_error on a
// non-finite loss.
TrainResult train(ToyModel& model, std::span<const Scene> train_set, std::span<const Scene> val_set,
                  const TrainConfig& cfg, const LossConfig& loss, const DecodeConfig& decode = {},
                  const std::function<void(const EpochStats&)>& on_epoch = {});

std::vector<std::vector<Detection>> predict_all(const ToyModel& model, std::span<const Scene> scenes,
                                                const DecodeConfig& decode);
EvalReport evaluate_model(const ToyModel& model, std::span<const Scene> scenes, const DecodeConfig& decode);

Scene flip_horizontal(const Scene& scene);

}  // namespace sodar
