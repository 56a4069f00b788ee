#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sodar/tensor.hpp"

namespace sodar {

// Classification grid G and mask-representation grid G' of one pyramid level.
struct GridLevel {
  int64_t grid = 8;       // G
  int64_t mask_grid = 8;  // G', 1 <= G' <= G
  void validate() const;
  friend bool operator==(const GridLevel&, const GridLevel&) = default;
};

struct GridConfig {
  std::vector<GridLevel> levels{{8, 8}};
  void validate() const;
};

// The five-level pyramids used for the mask-interpolation schemes.
GridConfig default_pyramid();       // [40,36,24,16,12] for both grids
GridConfig plus_cls_pyramid();      // classification [50,40,24,16,12], masks [40,36,24,16,12]
GridConfig minus_mask_pyramid();    // classification [40,36,24,16,12], masks [20,18,12,8,6]

enum class NeighborScheme { kNone, kRow2, kCol2, kFour, kEight };

int64_t arity(NeighborScheme scheme);
std::string_view to_string(NeighborScheme scheme);
NeighborScheme parse_neighbor_scheme(std::string_view text);

struct Cell {
  int64_t row = 0;
  int64_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

// Gathered cells around (i, j), center included. Orders:
//   none  : [center]
//   row2  : [left, center, right]
//   col2  : [top, center, bottom]
//   four  : [top, left, center, bottom, right]
//   eight : 8 surrounding cells row-major, then center
// Cells outside the grid are returned as-is.
std::vector<Cell> neighbor_cells(int64_t i, int64_t j, NeighborScheme scheme);

// Classification cell -> mask-grid cell: (floor(i*G'/G), floor(j*G'/G)).
Cell interp_index(int64_t i, int64_t j, int64_t grid, int64_t mask_grid);

// Mask representations for one level: [G'*G', H, W], channel a*G'+b holds cell (a, b).
int64_t mask_grid_of(const GridTensor& reps);

GridTensor gather_fixed(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                        const GridLevel& level);

// Offsets are (dy, dx) pairs in mask-grid cell units, one per gathered cell
// in neighbor_cells order. Fractional positions are resolved bilinearly over
// the four enclosing cells; cells outside the grid read as zero maps.
GridTensor gather_deformable(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                             std::span<const double> offsets, const GridLevel& level);

struct GatherGrads {
  std::vector<double> offsets;  // d/d offsets, length 2 * (arity + 1)
};
// Accumulates d/d reps into reps_grad and returns d/d offsets.
GatherGrads gather_deformable_backward(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                                       std::span<const double> offsets, const GridLevel& level,
                                       const GridTensor& grad_out, GridTensor& reps_grad);
// Accumulates d/d reps for gather_fixed.
void gather_fixed_backward(int64_t i, int64_t j, NeighborScheme scheme, const GridLevel& level,
                           const GridTensor& grad_out, GridTensor& reps_grad);

// [G'*G', H, W] <-> [G', G', H*W]
GridTensor reshape_for_deform(const GridTensor& reps);
GridTensor reshape_from_deform(const GridTensor& grid_major, int64_t height, int64_t width);

}  // namespace sodar
