#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "sodar/train.hpp"

using namespace sodar;

namespace {

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  for (const auto& [name, p] : a)
    if (!std::ranges::equal(p.values(), b.at(name).values())) return false;
  return true;
}

TrainConfig short_run(int64_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.val_every = 0;
  return t;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("learning rate schedule") {
    TrainConfig t;
    t.epochs = 8;
    t.learning_rate = 1e-2;
    t.decay_at = 0.75;
    CHECK(t.lr_at_epoch(0) == 1e-2);
    CHECK(t.lr_at_epoch(5) == 1e-2);
    CHECK(t.lr_at_epoch(6) == doctest::Approx(1e-3));
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  }

  TEST_CASE("adam with zero gradient keeps parameters") {
    const ToyModel model(ModelConfig{});
    ParameterSet p = model.params();
    Adam adam(p);
    for (int k = 0; k < 3; ++k) adam.step(p, zeros_like(p), 1e-2);
    CHECK(same_params(p, model.params()));
    CHECK(adam.steps() == 3);
  }

  TEST_CASE("adam first step moves by the learning rate") {
    ParameterSet p{{"x", GridTensor({3}, {1.0, 2.0, 3.0})}};
    ParameterSet g{{"x", GridTensor({3}, {0.5, -4.0, 0.0})}};
    Adam adam(p, {0.9, 0.999, 0.0});
    adam.step(p, g, 0.1);
    CHECK(p.at("x")[0] == doctest::Approx(0.9));
    CHECK(p.at("x")[1] == doctest::Approx(2.1));
  }

  TEST_CASE("zero learning rate changes nothing") {
    const auto scenes = generate_scenes(2, 4, 32, 32, 2);
    ToyModel model(ModelConfig{});
    const ParameterSet before = model.params();
    auto cfg = short_run(3);
    cfg.learning_rate = 0.0;
    const auto r = train(model, scenes, {}, cfg, LossConfig{});
    CHECK(same_params(before, model.params()));
    REQUIRE(r.curve.size() == 3);
    for (const auto& e : r.curve) CHECK(e.loss == doctest::Approx(r.curve[0].loss).epsilon(1e-12));
  }

  TEST_CASE("same seed gives the same curve") {
    const auto scenes = generate_scenes(2, 6, 32, 32, 3);
    const auto val = generate_scenes(3, 2, 32, 32, 3);
    ToyModel a(ModelConfig{}), b(ModelConfig{});
    auto cfg = short_run(2);
    cfg.val_every = 1;
    const auto ra = train(a, scenes, val, cfg, LossConfig{});
    const auto rb = train(b, scenes, val, cfg, LossConfig{});
    CHECK(ra.curve_csv() == rb.curve_csv());
    CHECK(same_params(a.params(), b.params()));
    CHECK(ra.curve[1].val_ap.has_value());
    CHECK(ra.curve_csv().rfind("epoch,loss,cls_loss,mask_loss,learning_rate,val_ap\n", 0) == 0);
    ToyModel c(ModelConfig{});
    cfg.seed = 99;
    const auto rc = train(c, scenes, val, cfg, LossConfig{});
    CHECK_FALSE(same_params(a.params(), c.params()));
  }

  TEST_CASE("single scene overfit") {
    const std::vector<Scene> one{generate_scene(12, 0, 64, 64, 2)};
    ToyModel model(ModelConfig{});
    TrainConfig cfg;
    cfg.epochs = 500;
    cfg.batch_size = 1;
    cfg.decay_at = 1.0;
    cfg.val_every = 0;
    train(model, one, {}, cfg, LossConfig{});
    const auto la = assign_labels(one[0], model.config().grids, 3);
    const auto lb = compute_loss(model, model.forward(one[0].image), la, LossConfig{}, nullptr);
    INFO("dice " << lb.mask);
    CHECK(lb.mask < 0.1);
  }

  TEST_CASE("non-finite loss aborts") {
    const auto scenes = generate_scenes(2, 2, 32, 32, 2);
    ToyModel model(ModelConfig{});
    model.params().at("cls_out.b")[0] = std::nan("");
    CHECK_THROWS_AS(train(model, scenes, {}, short_run(1), LossConfig{}), std::runtime_error);
    CHECK_THROWS_AS(train(model, std::span<const Scene>{}, {}, short_run(1), LossConfig{}), std::invalid_argument);
  }

  TEST_CASE("horizontal flip") {
    const Scene s = generate_scene(4, 1, 32, 32, 3);
    const Scene f = flip_horizontal(s);
    CHECK(f.image.at(1, 3, 0) == s.image.at(1, 3, 31));
    CHECK(f.instances[0].mask.area() == s.instances[0].mask.area());
    const Scene back = flip_horizontal(f);
    CHECK(std::ranges::equal(back.image.values(), s.image.values()));
    CHECK(back.instances[0].mask == s.instances[0].mask);
  }
}
