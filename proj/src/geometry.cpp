#include "sodar/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace sodar {

void GridLevel::validate() const {
  if (grid < 1 || mask_grid < 1 || mask_grid > grid) {
    throw std::invalid_argument("grid level requires 1 <= G' <= G, got G=" + std::to_string(grid) +
                                " G'=" + std::to_string(mask_grid));
  }
}

void GridConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("grid config has no levels");
  for (const auto& l : levels) l.validate();
}

namespace {
GridConfig make_pyramid(std::initializer_list<int64_t> cls, std::initializer_list<int64_t> mask) {
  GridConfig cfg;
  cfg.levels.clear();
  auto m = mask.begin();
  for (int64_t g : cls) cfg.levels.push_back({g, *m++});
  return cfg;
}
}  // namespace

GridConfig default_pyramid() { return make_pyramid({40, 36, 24, 16, 12}, {40, 36, 24, 16, 12}); }
GridConfig plus_cls_pyramid() { return make_pyramid({50, 40, 24, 16, 12}, {40, 36, 24, 16, 12}); }
GridConfig minus_mask_pyramid() { return make_pyramid({40, 36, 24, 16, 12}, {20, 18, 12, 8, 6}); }

int64_t arity(NeighborScheme scheme) {
  switch (scheme) {
    case NeighborScheme::kNone: return 0;
    case NeighborScheme::kRow2:
    case NeighborScheme::kCol2: return 2;
    case NeighborScheme::kFour: return 4;
    case NeighborScheme::kEight: return 8;
  }
  return 0;
}

std::string_view to_string(NeighborScheme scheme) {
  switch (scheme) {
    case NeighborScheme::kNone: return "none";
    case NeighborScheme::kRow2: return "row2";
    case NeighborScheme::kCol2: return "col2";
    case NeighborScheme::kFour: return "four";
    case NeighborScheme::kEight: return "eight";
  }
  return "?";
}

NeighborScheme parse_neighbor_scheme(std::string_view text) {
  for (auto s : {NeighborScheme::kNone, NeighborScheme::kRow2, NeighborScheme::kCol2, NeighborScheme::kFour,
                 NeighborScheme::kEight}) {
    if (to_string(s) == text) return s;
  }
  if (text == "0") return NeighborScheme::kNone;
  if (text == "4") return NeighborScheme::kFour;
  if (text == "8") return NeighborScheme::kEight;
  throw std::invalid_argument("unknown neighbor scheme '" + std::string(text) + "'");
}

std::vector<Cell> neighbor_cells(int64_t i, int64_t j, NeighborScheme scheme) {
  switch (scheme) {
    case NeighborScheme::kNone: return {{i, j}};
    case NeighborScheme::kRow2: return {{i, j - 1}, {i, j}, {i, j + 1}};
    case NeighborScheme::kCol2: return {{i - 1, j}, {i, j}, {i + 1, j}};
    case NeighborScheme::kFour: return {{i - 1, j}, {i, j - 1}, {i, j}, {i + 1, j}, {i, j + 1}};
    case NeighborScheme::kEight: {
      std::vector<Cell> cells;
      for (int64_t p = -1; p <= 1; ++p)
        for (int64_t q = -1; q <= 1; ++q)
          if (p != 0 || q != 0) cells.push_back({i + p, j + q});
      cells.push_back({i, j});
      return cells;
    }
  }
  return {};
}

Cell interp_index(int64_t i, int64_t j, int64_t grid, int64_t mask_grid) {
  return {i * mask_grid / grid, j * mask_grid / grid};
}

int64_t mask_grid_of(const GridTensor& reps) {
  if (reps.rank() != 3) throw std::invalid_argument("mask representations must be [G'*G', H, W]");
  const auto g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(reps.dim(0)))));
  if (g * g != reps.dim(0)) {
    throw std::invalid_argument("mask representation channel count " + std::to_string(reps.dim(0)) +
                                " is not a perfect square");
  }
  return g;
}

namespace {

void check_level(const GridTensor& reps, const GridLevel& level) {
  level.validate();
  if (mask_grid_of(reps) != level.mask_grid) {
    throw std::invalid_argument("mask representations hold a " + std::to_string(mask_grid_of(reps)) +
                                "^2 grid but level expects G'=" + std::to_string(level.mask_grid));
  }
}

std::vector<Cell> gathered_cells(int64_t i, int64_t j, NeighborScheme scheme, const GridLevel& level) {
  if (!(i >= 0 && j >= 0 && i < level.grid && j < level.grid)) {
    throw std::invalid_argument("cell (" + std::to_string(i) + ", " + std::to_string(j) + ") outside a " +
                                std::to_string(level.grid) + "x" + std::to_string(level.grid) + " grid");
  }
  const Cell m = interp_index(i, j, level.grid, level.mask_grid);
  return neighbor_cells(m.row, m.col, scheme);
}

inline bool inside(int64_t r, int64_t c, int64_t g) { return r >= 0 && c >= 0 && r < g && c < g; }

struct Corner {
  int64_t r, c;
  double w;
};

// Bilinear corners of fractional position (py, px) and the partial
// derivatives of each corner weight with respect to py and px.
struct BilinearSample {
  Corner corners[4];
  double dwy[4];
  double dwx[4];
};

BilinearSample bilinear_sample(double py, double px) {
  const double fy0 = std::floor(py), fx0 = std::floor(px);
  const auto r0 = static_cast<int64_t>(fy0), c0 = static_cast<int64_t>(fx0);
  const double fy = py - fy0, fx = px - fx0;
  BilinearSample s{};
  s.corners[0] = {r0, c0, (1 - fy) * (1 - fx)};
  s.corners[1] = {r0, c0 + 1, (1 - fy) * fx};
  s.corners[2] = {r0 + 1, c0, fy * (1 - fx)};
  s.corners[3] = {r0 + 1, c0 + 1, fy * fx};
  const double dy[4] = {-(1 - fx), -fx, 1 - fx, fx};
  const double dx[4] = {-(1 - fy), 1 - fy, -fy, fy};
  for (int k = 0; k < 4; ++k) {
    s.dwy[k] = dy[k];
    s.dwx[k] = dx[k];
  }
  return s;
}

}  // namespace

GridTensor gather_fixed(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                        const GridLevel& level) {
  check_level(reps, level);
  const int64_t H = reps.dim(1), W = reps.dim(2), g = level.mask_grid;
  const auto cells = gathered_cells(i, j, scheme, level);
  GridTensor out({static_cast<int64_t>(cells.size()), H, W});
  for (size_t k = 0; k < cells.size(); ++k) {
    const auto [r, c] = cells[k];
    if (!inside(r, c, g)) continue;
    const auto src = reps.plane(r * g + c);
    std::copy(src.begin(), src.end(), out.plane(static_cast<int64_t>(k)).begin());
  }
  return out;
}

void gather_fixed_backward(int64_t i, int64_t j, NeighborScheme scheme, const GridLevel& level,
                           const GridTensor& grad_out, GridTensor& reps_grad) {
  const int64_t g = level.mask_grid;
  const auto cells = gathered_cells(i, j, scheme, level);
  for (size_t k = 0; k < cells.size(); ++k) {
    const auto [r, c] = cells[k];
    if (!inside(r, c, g)) continue;
    auto dst = reps_grad.plane(r * g + c);
    const auto src = grad_out.plane(static_cast<int64_t>(k));
    for (size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
  }
}

GridTensor gather_deformable(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                             std::span<const double> offsets, const GridLevel& level) {
  check_level(reps, level);
  const auto cells = gathered_cells(i, j, scheme, level);
  if (offsets.size() != 2 * cells.size()) {
    throw std::invalid_argument("deformable gather expects " + std::to_string(2 * cells.size()) +
                                " offsets, got " + std::to_string(offsets.size()));
  }
  const int64_t H = reps.dim(1), W = reps.dim(2), g = level.mask_grid;
  GridTensor out({static_cast<int64_t>(cells.size()), H, W});
  for (size_t k = 0; k < cells.size(); ++k) {
    const double py = static_cast<double>(cells[k].row) + offsets[2 * k];
    const double px = static_cast<double>(cells[k].col) + offsets[2 * k + 1];
    const BilinearSample s = bilinear_sample(py, px);
    auto dst = out.plane(static_cast<int64_t>(k));
    for (const Corner& cn : s.corners) {
      // Zero-weight corners are skipped so integer positions copy exactly.
      if (cn.w == 0.0 || !inside(cn.r, cn.c, g)) continue;
      const auto src = reps.plane(cn.r * g + cn.c);
      if (cn.w == 1.0) {
        std::copy(src.begin(), src.end(), dst.begin());
      } else {
        for (size_t n = 0; n < dst.size(); ++n) dst[n] += cn.w * src[n];
      }
    }
  }
  return out;
}

GatherGrads gather_deformable_backward(const GridTensor& reps, int64_t i, int64_t j, NeighborScheme scheme,
                                       std::span<const double> offsets, const GridLevel& level,
                                       const GridTensor& grad_out, GridTensor& reps_grad) {
  check_level(reps, level);
  const auto cells = gathered_cells(i, j, scheme, level);
  if (offsets.size() != 2 * cells.size()) {
    throw std::invalid_argument("deformable gather expects " + std::to_string(2 * cells.size()) +
                                " offsets, got " + std::to_string(offsets.size()));
  }
  if (reps_grad.shape() != reps.shape()) throw std::invalid_argument("reps_grad shape mismatch");
  const int64_t g = level.mask_grid;
  GatherGrads grads{std::vector<double>(offsets.size(), 0.0)};
  for (size_t k = 0; k < cells.size(); ++k) {
    const double py = static_cast<double>(cells[k].row) + offsets[2 * k];
    const double px = static_cast<double>(cells[k].col) + offsets[2 * k + 1];
    const BilinearSample s = bilinear_sample(py, px);
    const auto go = grad_out.plane(static_cast<int64_t>(k));
    for (int q = 0; q < 4; ++q) {
      const Corner& cn = s.corners[q];
      if (!inside(cn.r, cn.c, g)) continue;
      const auto src = reps.plane(cn.r * g + cn.c);
      auto dst = reps_grad.plane(cn.r * g + cn.c);
      double dot = 0.0;
      for (size_t n = 0; n < go.size(); ++n) {
        dot += go[n] * src[n];
        dst[n] += cn.w * go[n];
      }
      grads.offsets[2 * k] += s.dwy[q] * dot;
      grads.offsets[2 * k + 1] += s.dwx[q] * dot;
    }
  }
  return grads;
}

GridTensor reshape_for_deform(const GridTensor& reps) {
  const int64_t g = mask_grid_of(reps);
  return reps.reshaped({g, g, reps.dim(1) * reps.dim(2)});
}

GridTensor reshape_from_deform(const GridTensor& grid_major, int64_t height, int64_t width) {
  if (grid_major.rank() != 3 || grid_major.dim(2) != height * width) {
    throw std::invalid_argument("reshape_from_deform: shape " + shape_to_string(grid_major.shape()) +
                                " incompatible with H*W=" + std::to_string(height * width));
  }
  return grid_major.reshaped({grid_major.dim(0) * grid_major.dim(1), height, width});
}

}  // namespace sodar
