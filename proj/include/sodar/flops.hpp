#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sodar/aggregation.hpp"
#include "sodar/geometry.hpp"

namespace sodar {

// Multiply-add counts for the mask branch, evaluated in closed form.
struct MaskHeadShape {
  int64_t height = 32;             // mask resolution H
  int64_t width = 32;              // mask resolution W
  int64_t head_in_channels = 16;   // channels entering the representation conv
  int64_t head_kernel = 1;
  bool aggregate = true;           // false: plain per-cell masks, no aggregation
  // Cells aggregated per level; defaults to G*G (every classification cell).
  std::optional<int64_t> evaluated_cells;
};

struct LevelFlops {
  GridLevel level;
  int64_t representation = 0;  // G'^2 output maps
  int64_t aggregation = 0;     // evaluated cells x per-cell stack
  int64_t total() const { return representation + aggregation; }
};

// Per-layer MACs of one aggregation-network evaluation at H x W.
std::vector<int64_t> aggregation_layer_macs(const AggArchitecture& arch, int64_t height, int64_t width);

std::vector<LevelFlops> flops_mask_head(const GridConfig& grids, const AggregationConfig& agg,
                                        const MaskHeadShape& shape);

// CSV: level,G,G_mask,representation,aggregation,total[,ratio columns]
std::string flops_table_csv(const std::vector<LevelFlops>& base, const std::vector<LevelFlops>& variant);

}  // namespace sodar
