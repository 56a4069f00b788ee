#include <random>
#include <set>

#include "doctest.h"
#include "sodar/geometry.hpp"
#include "test_util.hpp"

using namespace sodar;
using sodar::testing::random_tensor;

namespace {

GridTensor random_reps(int64_t gm, int64_t h, int64_t w, std::mt19937_64& rng) {
  return random_tensor({gm * gm, h, w}, rng);
}

std::vector<Cell> cells(std::initializer_list<std::pair<int64_t, int64_t>> xs) {
  std::vector<Cell> out;
  for (auto [r, c] : xs) out.push_back({r, c});
  return out;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("four-neighbourhood order") {
    CHECK(neighbor_cells(5, 5, NeighborScheme::kFour) == cells({{4, 5}, {5, 4}, {5, 5}, {6, 5}, {5, 6}}));
    CHECK(neighbor_cells(0, 0, NeighborScheme::kFour) == cells({{-1, 0}, {0, -1}, {0, 0}, {1, 0}, {0, 1}}));
  }

  TEST_CASE("other neighbourhoods") {
    CHECK(neighbor_cells(2, 3, NeighborScheme::kNone) == cells({{2, 3}}));
    CHECK(neighbor_cells(2, 3, NeighborScheme::kRow2) == cells({{2, 2}, {2, 3}, {2, 4}}));
    CHECK(neighbor_cells(2, 3, NeighborScheme::kCol2) == cells({{1, 3}, {2, 3}, {3, 3}}));
    const auto eight = neighbor_cells(3, 3, NeighborScheme::kEight);
    REQUIRE(eight.size() == 9);
    CHECK(eight.back() == Cell{3, 3});
    std::set<std::pair<int64_t, int64_t>> offs;
    for (const auto& c : eight) offs.insert({c.row - 3, c.col - 3});
    CHECK(offs.size() == 9);
    for (auto [dr, dc] : offs) {
      CHECK(std::abs(dr) <= 1);
      CHECK(std::abs(dc) <= 1);
    }
    CHECK(eight[0] == Cell{2, 2});
    CHECK(eight[3] == Cell{3, 2});
  }

  TEST_CASE("gathered set size is arity plus one") {
    for (auto s : {NeighborScheme::kNone, NeighborScheme::kRow2, NeighborScheme::kCol2, NeighborScheme::kFour,
                   NeighborScheme::kEight}) {
      CHECK(static_cast<int64_t>(neighbor_cells(4, 4, s).size()) == arity(s) + 1);
      CHECK(parse_neighbor_scheme(to_string(s)) == s);
    }
    CHECK(arity(NeighborScheme::kRow2) == 2);
    CHECK(arity(NeighborScheme::kEight) == 8);
    CHECK_THROWS_AS(parse_neighbor_scheme("six"), std::invalid_argument);
  }

  TEST_CASE("interp_index shares one mask cell between (15,15) and (14,14)") {
    CHECK(interp_index(15, 15, 20, 10) == Cell{7, 7});
    CHECK(interp_index(14, 14, 20, 10) == Cell{7, 7});
  }

  TEST_CASE("interp_index is the identity when both grids agree") {
    for (int64_t g = 1; g <= 12; ++g)
      for (int64_t i = 0; i < g; ++i)
        for (int64_t j = 0; j < g; ++j) CHECK(interp_index(i, j, g, g) == Cell{i, j});
  }

  TEST_CASE("5x7 classification grid onto a 3x3 mask grid") {
    const int64_t rows[5] = {0, 0, 1, 1, 2};        // floor(i*3/5)
    const int64_t cols[7] = {0, 0, 0, 1, 1, 2, 2};  // floor(j*3/7)
    for (int64_t i = 0; i < 5; ++i) CHECK(interp_index(i, 0, 5, 3).row == rows[i]);
    for (int64_t j = 0; j < 7; ++j) CHECK(interp_index(0, j, 7, 3).col == cols[j]);
  }

  TEST_CASE("interp_index range, monotonicity, surjectivity and sharing counts") {
    for (int64_t g = 1; g <= 50; ++g)
      for (int64_t gm = 1; gm <= g; ++gm) {
        std::vector<int64_t> hits(static_cast<size_t>(gm), 0);
        int64_t prev = 0;
        bool ok = true;
        for (int64_t i = 0; i < g; ++i) {
          const int64_t r = interp_index(i, 0, g, gm).row;
          ok = ok && r >= 0 && r < gm && r >= prev && r == (i * gm) / g;
          prev = r;
          ++hits[static_cast<size_t>(r)];
        }
        const int64_t lo = g / gm, hi = (g + gm - 1) / gm;
        for (int64_t h : hits) ok = ok && h >= lo && h <= hi;
        REQUIRE_MESSAGE(ok, "G=" << g << " G'=" << gm);
      }
  }

  TEST_CASE("grid config validation") {
    CHECK_THROWS_AS((GridLevel{4, 5}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((GridLevel{4, 0}.validate()), std::invalid_argument);
    GridConfig empty;
    empty.levels.clear();
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
    default_pyramid().validate();
    CHECK(minus_mask_pyramid().levels[0] == GridLevel{40, 20});
    CHECK(plus_cls_pyramid().levels[0] == GridLevel{50, 40});
  }

  TEST_CASE("gather_fixed interior and corner cells") {
    std::mt19937_64 rng(1);
    const GridLevel lv{6, 6};
    const GridTensor reps = random_reps(6, 4, 5, rng);
    const GridTensor s = gather_fixed(reps, 2, 3, NeighborScheme::kFour, lv);
    REQUIRE(s.shape() == Shape{5, 4, 5});
    const auto nb = neighbor_cells(2, 3, NeighborScheme::kFour);
    for (int64_t c = 0; c < 5; ++c) {
      const auto src = reps.plane(nb[static_cast<size_t>(c)].row * 6 + nb[static_cast<size_t>(c)].col);
      const auto dst = s.plane(c);
      CHECK(std::equal(src.begin(), src.end(), dst.begin()));
    }
    const GridTensor corner = gather_fixed(reps, 0, 0, NeighborScheme::kFour, lv);
    CHECK(corner.plane(0)[0] == 0.0);
    CHECK(std::all_of(corner.plane(0).begin(), corner.plane(0).end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(corner.plane(1).begin(), corner.plane(1).end(), [](double v) { return v == 0.0; }));
    CHECK(corner.plane(2)[0] == reps.plane(0)[0]);
  }

  TEST_CASE("cells sharing a mask cell gather identical stacks") {
    std::mt19937_64 rng(2);
    const GridLevel lv{20, 10};
    const GridTensor reps = random_reps(10, 3, 3, rng);
    CHECK(gather_fixed(reps, 15, 15, NeighborScheme::kFour, lv) == gather_fixed(reps, 14, 14, NeighborScheme::kFour, lv));
  }

  TEST_CASE("gather rejects a mismatched representation grid") {
    const GridTensor reps({10, 2, 2});
    CHECK_THROWS_AS(gather_fixed(reps, 0, 0, NeighborScheme::kNone, GridLevel{4, 4}), std::invalid_argument);
    CHECK_THROWS_AS(gather_fixed(GridTensor({16, 2, 2}), 4, 0, NeighborScheme::kNone, GridLevel{4, 4}),
                    std::invalid_argument);
  }

  TEST_CASE("zero offsets reduce exactly to the fixed gather") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
      const int64_t gm = 1 + t % 6, g = gm + t % 4;
      const GridLevel lv{g, gm};
      const GridTensor reps = random_reps(gm, 3, 4, rng);
      for (auto s : {NeighborScheme::kNone, NeighborScheme::kFour, NeighborScheme::kEight}) {
        const std::vector<double> zeros(static_cast<size_t>(2 * (arity(s) + 1)), 0.0);
        const int64_t i = t % g, j = (t * 3) % g;
        CHECK(gather_deformable(reps, i, j, s, zeros, lv) == gather_fixed(reps, i, j, s, lv));
      }
    }
  }

  TEST_CASE("half-cell vertical offset blends two rows") {
    std::mt19937_64 rng(4);
    const GridLevel lv{5, 5};
    const GridTensor reps = random_reps(5, 2, 3, rng);
    std::vector<double> off(2, 0.0);
    off[0] = 0.5;
    const GridTensor s = gather_deformable(reps, 2, 2, NeighborScheme::kNone, off, lv);
    for (int64_t k = 0; k < 6; ++k) {
      const double expect = 0.5 * reps.plane(2 * 5 + 2)[k] + 0.5 * reps.plane(3 * 5 + 2)[k];
      CHECK(s.plane(0)[k] == doctest::Approx(expect).epsilon(1e-15));
    }
    off = {1.0, 0.0};
    const GridTensor down = gather_deformable(reps, 2, 2, NeighborScheme::kNone, off, lv);
    CHECK(std::equal(down.plane(0).begin(), down.plane(0).end(), reps.plane(3 * 5 + 2).begin()));
  }

  TEST_CASE("bilinear gather against a scalar oracle") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.7, 1.7);
    const GridLevel lv{4, 4};
    const GridTensor reps = random_reps(4, 2, 2, rng);
    auto cell_map = [&](int64_t r, int64_t c, int64_t k) {
      if (r < 0 || r >= 4 || c < 0 || c >= 4) return 0.0;
      return reps.plane(r * 4 + c)[k];
    };
    for (int t = 0; t < 50; ++t) {
      std::vector<double> off(10);
      for (double& o : off) o = u(rng);
      const int64_t i = t % 4, j = (t / 4) % 4;
      const GridTensor s = gather_deformable(reps, i, j, NeighborScheme::kFour, off, lv);
      const auto nb = neighbor_cells(i, j, NeighborScheme::kFour);
      for (size_t n = 0; n < nb.size(); ++n) {
        const double py = static_cast<double>(nb[n].row) + off[2 * n], px = static_cast<double>(nb[n].col) + off[2 * n + 1];
        const int64_t y0 = static_cast<int64_t>(std::floor(py)), x0 = static_cast<int64_t>(std::floor(px));
        const double fy = py - static_cast<double>(y0), fx = px - static_cast<double>(x0);
        for (int64_t k = 0; k < 4; ++k) {
          const double expect = (1 - fy) * (1 - fx) * cell_map(y0, x0, k) + (1 - fy) * fx * cell_map(y0, x0 + 1, k) +
                                fy * (1 - fx) * cell_map(y0 + 1, x0, k) + fy * fx * cell_map(y0 + 1, x0 + 1, k);
          CHECK(s.plane(static_cast<int64_t>(n))[k] == doctest::Approx(expect).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("deformable gather gradients pass finite differences") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.3, 1.3);
    const GridLevel lv{6, 3};
    GridTensor reps = random_reps(3, 3, 3, rng);
    std::vector<double> off(10);
    for (double& o : off) o = u(rng);
    const GridTensor g = random_tensor({5, 3, 3}, rng);
    auto loss = [&] { return testing::dot(gather_deformable(reps, 3, 2, NeighborScheme::kFour, off, lv), g); };
    GridTensor reps_grad = GridTensor::zeros_like(reps);
    const auto og = gather_deformable_backward(reps, 3, 2, NeighborScheme::kFour, off, lv, g, reps_grad);
    auto ro = testing::fd_check(off, loss, [&](size_t k) { return og.offsets[k]; }, 10, rng);
    auto rr = testing::fd_check(reps.values(), loss, [&](size_t k) { return reps_grad[k]; }, 81, rng);
    CHECK(ro.checked == 10);
    CHECK(rr.checked == 81);
    CHECK(ro.worst < testing::kGradTol);
    CHECK(rr.worst < testing::kGradTol);
  }

  TEST_CASE("fixed gather backward scatters into the gathered cells") {
    std::mt19937_64 rng(7);
    const GridLevel lv{4, 4};
    const GridTensor g = random_tensor({5, 2, 2}, rng);
    GridTensor rg({16, 2, 2});
    gather_fixed_backward(0, 1, NeighborScheme::kFour, lv, g, rg);
    // top neighbour (-1, 1) is outside; left (0,0), centre (0,1), bottom (1,1), right (0,2)
    CHECK(rg.plane(0)[0] == g.plane(1)[0]);
    CHECK(rg.plane(1)[3] == g.plane(2)[3]);
    CHECK(rg.plane(5)[2] == g.plane(3)[2]);
    CHECK(rg.plane(2)[1] == g.plane(4)[1]);
    double total = 0.0;
    for (double v : rg.values()) total += v;
    double expect = 0.0;
    for (int64_t c = 1; c < 5; ++c)
      for (double v : g.plane(c)) expect += v;
    CHECK(total == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("deformable layout round trip") {
    std::mt19937_64 rng(8);
    const GridTensor reps = random_reps(3, 4, 5, rng);
    const GridTensor gm = reshape_for_deform(reps);
    REQUIRE(gm.shape() == Shape{3, 3, 20});
    CHECK(gm[static_cast<size_t>((1 * 3 + 2) * 20 + 2 * 5 + 3)] == reps.at(1 * 3 + 2, 2, 3));
    CHECK(reshape_from_deform(gm, 4, 5) == reps);
    CHECK(mask_grid_of(reps) == 3);
    CHECK_THROWS_AS(mask_grid_of(GridTensor({5, 2, 2})), std::invalid_argument);
  }
}
