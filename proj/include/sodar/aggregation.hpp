#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sodar/geometry.hpp"
#include "sodar/ops.hpp"
#include "sodar/tensor.hpp"

namespace sodar {

// Which inputs the aggregation network sees besides the gathered
// representations.
enum class ContextMode { kWith, kWithout, kOnly };
std::string_view to_string(ContextMode mode);
ContextMode parse_context_mode(std::string_view text);

// Conv stack [in, hidden, ..., hidden, 1] with ReLU between layers and no
// activation after the last one.
struct AggArchitecture {
  int64_t input_channels = 21;
  int64_t layer_count = 3;
  int64_t kernel = 3;
  int64_t hidden = 4;

  std::vector<int64_t> channels() const;
  int64_t param_count() const;  // D
  void validate() const;
};

struct AggregationConfig {
  NeighborScheme scheme = NeighborScheme::kFour;
  ContextMode context = ContextMode::kWith;
  int64_t context_channels = 16;
  bool deformable = false;
  int64_t layer_count = 3;
  int64_t kernel = 3;
  int64_t hidden = 4;

  int64_t rep_channels() const { return context == ContextMode::kOnly ? 0 : arity(scheme) + 1; }
  int64_t ctx_input_channels() const { return context == ContextMode::kWithout ? 0 : context_channels; }
  int64_t offset_count() const { return deformable && rep_channels() > 0 ? 2 * (arity(scheme) + 1) : 0; }
  AggArchitecture architecture() const;
};

struct AggLayer {
  GridTensor weight;  // [out, in, k, k]
  GridTensor bias;    // [out]
};

// theta layout: layers in order; per layer the weights (out-major, then in,
// ky, kx) followed by the biases.
std::vector<AggLayer> unpack_theta(std::span<const double> theta, const AggArchitecture& arch);
std::vector<double> pack_theta(std::span<const AggLayer> layers, const AggArchitecture& arch);

// Per-cell aggregation parameters at classification resolution.
struct DynamicParams {
  GridTensor theta;                   // [G, G, D]
  std::optional<GridTensor> offsets;  // [G, G, P]

  std::span<const double> theta_at(int64_t i, int64_t j) const;
  std::span<const double> offsets_at(int64_t i, int64_t j) const;
};

// The conv stack evaluated with an explicit parameter vector.
class AggNet {
 public:
  // stack: [Cin, H, W] -> logits [1, H, W]
  GridTensor forward(const GridTensor& stack, std::span<const double> theta, const AggArchitecture& arch);

  struct Grads {
    GridTensor stack;
    std::vector<double> theta;
  };
  Grads backward(const GridTensor& grad_out) const;

 private:
  std::optional<AggArchitecture> arch_;
  std::vector<AggLayer> layers_;
  std::vector<Conv2dNode> convs_;
  std::vector<ReluNode> relus_;
};

// Runs the stack with one shared parameter vector. Returns logits [H, W].
GridTensor aggregate_static(const GridTensor& stack, std::span<const double> shared_theta,
                            const AggArchitecture& arch);

// Builds the aggregation input for classification cell (i, j): gathered
// representations (fixed or deformable) followed by the context channels.
GridTensor build_stack(const GridTensor& reps, const GridTensor& context, int64_t i, int64_t j,
                       std::span<const double> offsets, const AggregationConfig& cfg, const GridLevel& level);

// Raw mask logits [H, W] for cell (i, j) using theta_ij (and offsets_ij when
// cfg.deformable).
GridTensor aggregate_dynamic(const GridTensor& reps, const DynamicParams& params, const GridTensor& context,
                             Cell cell, const AggregationConfig& cfg, const GridLevel& level);

// Same result as aggregate_dynamic over every cell, computed with one grouped
// convolution per layer (one group per cell). Returns [N, H, W].
GridTensor aggregate_batch(const GridTensor& reps, const DynamicParams& params, const GridTensor& context,
                           std::span<const Cell> cells, const AggregationConfig& cfg, const GridLevel& level);

// Differentiable single-cell aggregation used in training.
class CellAggregator {
 public:
  CellAggregator(const AggregationConfig& cfg, const GridLevel& level) : cfg_(cfg), level_(level) {}

  GridTensor forward(const GridTensor& reps, const GridTensor& context, Cell cell, std::span<const double> theta,
                     std::span<const double> offsets);

  struct Grads {
    std::vector<double> theta;
    std::vector<double> offsets;
  };
  // grad_out: [H, W]. Accumulates into reps_grad and context_grad (either may
  // be null when that input is unused).
  Grads backward(const GridTensor& grad_out, GridTensor* reps_grad, GridTensor* context_grad) const;

 private:
  AggregationConfig cfg_;
  GridLevel level_;
  const GridTensor* reps_ = nullptr;
  Cell cell_{};
  std::vector<double> offsets_;
  AggNet net_;
  bool recorded_ = false;
};

}  // namespace sodar
