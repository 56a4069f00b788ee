#include <algorithm>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "sodar/train.hpp"
#include "test_util.hpp"

using namespace sodar;
using sodar::testing::kGradTol;

namespace {

Scene blank(int64_t h, int64_t w) {
  Scene s;
  s.image = GridTensor({3, h, w});
  return s;
}

BinaryMask square(int64_t h, int64_t w, int64_t y0, int64_t x0, int64_t side) {
  BinaryMask m(h, w);
  for (int64_t y = y0; y < y0 + side; ++y)
    for (int64_t x = x0; x < x0 + side; ++x) m.at(y, x) = 1;
  return m;
}

ModelConfig small_config(AggMode mode) {
  ModelConfig c;
  c.agg_mode = mode;
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("output shapes") {
    const ToyModel model(ModelConfig{});
    const auto out = model.forward(blank(64, 64).image);
    REQUIRE(out.levels.size() == 1);
    const auto& lo = out.levels[0];
    CHECK(lo.cls.shape() == Shape{3, 8, 8});
    CHECK(lo.reps.shape() == Shape{64, 32, 32});
    CHECK(lo.param_map.shape() == Shape{945, 8, 8});
    CHECK(lo.params.theta.shape() == Shape{8, 8, 945});
    CHECK(out.context.shape() == Shape{16, 32, 32});

    ModelConfig d;
    d.agg.deformable = true;
    CHECK(d.param_channels() == 955);
    const auto od = ToyModel(d).forward(blank(64, 64).image);
    CHECK(od.levels[0].param_map.shape() == Shape{955, 8, 8});
    CHECK(od.levels[0].params.offsets->shape() == Shape{8, 8, 10});
  }

  TEST_CASE("shapes follow the grid config") {
    ModelConfig c;
    c.grids.levels = {{10, 8}, {6, 3}};
    c.agg_mode = AggMode::kStatic;
    const auto out = ToyModel(c).forward(blank(32, 48).image);
    REQUIRE(out.levels.size() == 2);
    CHECK(out.levels[0].cls.shape() == Shape{3, 10, 10});
    CHECK(out.levels[0].reps.shape() == Shape{64, 16, 24});
    CHECK(out.levels[1].cls.shape() == Shape{3, 6, 6});
    CHECK(out.levels[1].reps.shape() == Shape{9, 16, 24});
    CHECK(out.levels[1].params.theta.shape() == Shape{6, 6, 945});
    CHECK(c.param_channels() == 0);
  }

  TEST_CASE("indivisible image size") {
    const ToyModel model(ModelConfig{});
    CHECK_THROWS_AS(model.forward(blank(30, 32).image), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(GridTensor({1, 32, 32})), std::invalid_argument);
  }

  TEST_CASE("zero weights") {
    ToyModel model(ModelConfig{});
    for (auto& [name, p] : model.params()) p.fill(0.0);
    GridTensor& bias = model.params().at("mask_out.0.b");
    for (size_t k = 0; k < bias.size(); ++k) bias[k] = 0.01 * static_cast<double>(k) - 0.3;
    std::mt19937_64 rng(2);
    const auto out = model.forward(testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0));
    for (double v : out.levels[0].cls.values()) CHECK(v == 0.5);
    const auto& reps = out.levels[0].reps;
    for (int64_t c = 0; c < reps.dim(0); ++c) {
      const auto plane = reps.plane(c);
      CHECK(std::ranges::all_of(plane, [&](double v) { return v == bias[static_cast<size_t>(c)]; }));
    }
  }

  TEST_CASE("forward is deterministic") {
    const ToyModel model(ModelConfig{});
    std::mt19937_64 rng(3);
    const auto img = testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    const auto a = model.forward(img);
    const auto b = model.forward(img);
    CHECK(std::ranges::equal(a.levels[0].reps.values(), b.levels[0].reps.values()));
    CHECK(std::ranges::equal(a.levels[0].param_map.values(), b.levels[0].param_map.values()));
    CHECK(std::ranges::equal(a.context.values(), b.context.values()));
    for (double v : a.levels[0].cls.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  TEST_CASE("initial aggregation output is zero") {
    for (auto mode : {AggMode::kDynamic, AggMode::kStatic}) {
      const ToyModel model(small_config(mode));
      std::mt19937_64 rng(4);
      const auto out = model.forward(testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0));
      const auto m = cell_mask_logits(model, out, 0, {3, 4});
      double peak = 0.0;
      for (double v : m.values()) peak = std::max(peak, std::abs(v));
      INFO(to_string(mode) << " peak " << peak);
      if (mode == AggMode::kStatic) CHECK(peak == 0.0);
      else CHECK(peak < std::log(3.0));  // probabilities inside (0.25, 0.75)
    }
  }

  TEST_CASE("centered object labels") {
    Scene s = blank(64, 64);
    s.instances.push_back({1, 0, square(64, 64, 24, 24, 16)});
    const auto la = assign_labels(s, GridConfig{}, 3);
    REQUIRE(la.levels[0].positives.size() == 1);
    CHECK(la.levels[0].positives[0].cell == Cell{4, 4});
    CHECK(la.levels[0].cls_target.at(1, 4, 4) == 1.0);
    CHECK(la.target_masks[0].shape() == Shape{32, 32});
    CHECK(la.target_masks[0][16 * 32 + 16] == 1.0);
    CHECK(la.target_masks[0][0] == 0.0);
  }

  TEST_CASE("empty scene has no positives") {
    const auto la = assign_labels(blank(64, 64), GridConfig{}, 3);
    CHECK(la.num_positive() == 0);
    CHECK(std::ranges::all_of(la.levels[0].cls_target.values(), [](double v) { return v == 0.0; }));
  }

  TEST_CASE("smaller instance wins a contended cell") {
    Scene s = blank(64, 64);
    BinaryMask big = square(64, 64, 16, 16, 32);
    const BinaryMask small = square(64, 64, 28, 28, 8);
    for (size_t k = 0; k < big.pixels.size(); ++k)
      if (small.pixels[k]) big.pixels[k] = 0;
    s.instances.push_back({0, 0, big});
    s.instances.push_back({2, 1, small});
    const auto la = assign_labels(s, GridConfig{}, 3);
    REQUIRE(la.levels[0].positives.size() == 1);
    CHECK(la.levels[0].positives[0].cell == Cell{4, 4});
    CHECK(la.levels[0].positives[0].instance == 1);
    CHECK(la.levels[0].cls_target.at(2, 4, 4) == 1.0);
    CHECK(la.levels[0].cls_target.at(0, 4, 4) == 0.0);
  }

  TEST_CASE("every positive maps to one instance") {
    for (const auto& s : generate_scenes(6, 20, 64, 64, 4)) {
      const auto la = assign_labels(s, GridConfig{}, 3);
      const auto& lt = la.levels[0];
      for (const auto& p : lt.positives) {
        double ones = 0;
        for (int64_t c = 0; c < 3; ++c) ones += lt.cls_target.at(c, p.cell.row, p.cell.col);
        CHECK(ones == 1.0);
        CHECK(p.instance >= 0);
        CHECK(p.instance < static_cast<int64_t>(s.instances.size()));
      }
      CHECK(la.num_positive() >= 1);
    }
  }

  TEST_CASE("checkpoint round trip") {
    ModelConfig c;
    c.agg.deformable = true;
    const ToyModel model(c);
    const auto dir = std::filesystem::temp_directory_path() / "sodar_ckpt_test";
    std::filesystem::remove_all(dir);
    save_parameters(dir, model.params());
    CHECK(std::filesystem::exists(dir / "manifest.txt"));
    const auto back = load_parameters(dir);
    REQUIRE(back.size() == model.params().size());
    for (const auto& [name, p] : model.params()) {
      const auto& q = back.at(name);
      REQUIRE(q.shape() == p.shape());
      for (size_t k = 0; k < p.size(); ++k) CHECK(q[k] == static_cast<double>(static_cast<float>(p[k])));
    }
    CHECK_NOTHROW(ToyModel(c, back));
    CHECK_THROWS_AS(ToyModel(ModelConfig{}, back), std::invalid_argument);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_parameters(dir), std::runtime_error);
  }

  TEST_CASE("encoder gradients are nonzero and match finite differences") {
    LossConfig lc;
    lc.cls_loss = ClsLoss::kBce;
    for (auto mode : {AggMode::kDynamic, AggMode::kStatic, AggMode::kDirect}) {
      ToyModel model(small_config(mode));
      const Scene s = generate_scene(5, 2, 32, 32, 3);
      const auto la = assign_labels(s, model.config().grids, 3);
      REQUIRE(la.num_positive() > 0);
      ParameterSet grads = zeros_like(model.params());
      scene_gradients(model, s, la, lc, grads);
      auto loss = [&] {
        return compute_loss(model, model.forward(s.image), la, lc, nullptr).total;
      };
      std::mt19937_64 rng(8);
      for (const char* name : {"enc1.w", "enc2.w", "enc3.w"}) {
        const auto& g = grads.at(name);
        CHECK(std::ranges::any_of(g.values(), [](double v) { return v != 0.0; }));
        auto& p = model.params().at(name);
        const auto r = testing::fd_check(p.values(), loss, [&](size_t k) { return g[k]; }, 8, rng);
        INFO(to_string(mode) << ' ' << name << " skipped " << r.skipped);
        CHECK(r.checked >= 7);
        CHECK(r.worst < kGradTol);
      }
    }
  }
}
