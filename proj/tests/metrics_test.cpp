#include <algorithm>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sodar/metrics.hpp"

using namespace sodar;
using sodar::testing::make_detection;
using sodar::testing::noisy_predictions;
using sodar::testing::oracle_ap;

namespace {

Scene two_gt() {
  Scene s = generate_scene(1, 0, 16, 16, 1);
  s.instances.clear();
  BinaryMask a(16, 16), b(16, 16);
  for (int x = 0; x < 16; ++x) {
    a.at(0, x) = 1;
    b.at(8, x) = 1;
  }
  s.instances.push_back({0, 0, a});
  s.instances.push_back({0, 1, b});
  return s;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("perfect predictions") {
    const auto scenes = generate_scenes(4, 10, 32, 32, 4);
    std::vector<std::vector<Detection>> dets;
    for (const auto& s : scenes) {
      std::vector<Detection> ds;
      int64_t j = 0;
      for (const auto& g : s.instances) ds.push_back(make_detection(g.mask, 1.0, g.class_id, j++));
      dets.push_back(ds);
    }
    for (double t : coco_iou_thresholds()) CHECK(*average_precision(dets, scenes, t, 3) == 1.0);
    const auto rep = evaluate(dets, scenes, 3);
    CHECK(rep.ap == 1.0);
    CHECK(rep.ladder.size() == 5);
    CHECK(rep.to_csv().rfind("metric,value\nAP,1\n", 0) == 0);
  }

  TEST_CASE("no detections") {
    const auto scenes = generate_scenes(4, 3, 32, 32, 4);
    const std::vector<std::vector<Detection>> none(3);
    CHECK(*average_precision(none, scenes, 0.5, 3) == 0.0);
    const auto rep = evaluate(none, scenes, 3);
    CHECK(rep.ap == 0.0);
    CHECK(rep.has_ground_truth);
  }

  TEST_CASE("no ground truth is absent") {
    auto s = two_gt();
    s.instances.clear();
    const std::vector<Scene> scenes{s};
    const std::vector<std::vector<Detection>> none(1);
    CHECK_FALSE(average_precision(none, scenes, 0.5, 3).has_value());
    CHECK_FALSE(evaluate(none, scenes, 3).has_ground_truth);
    CHECK_THROWS_AS(evaluate({}, scenes, 3), std::invalid_argument);
  }

  TEST_CASE("two ground truths three detections") {
    const std::vector<Scene> scenes{two_gt()};
    BinaryMask fp(16, 16);
    fp.at(4, 4) = 1;
    const std::vector<std::vector<Detection>> dets{{make_detection(scenes[0].instances[0].mask, 0.9, 0, 0),
                                                    make_detection(fp, 0.8, 0, 1),
                                                    make_detection(scenes[0].instances[1].mask, 0.7, 0, 2)}};
    // ranks: P = 1, 1/2, 2/3 at R = .5, .5, 1 -> 51 points at 1, 50 at 2/3
    const double want = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    CHECK(*average_precision(dets, scenes, 0.5, 1) == doctest::Approx(want).epsilon(1e-12));
    CHECK(oracle_ap(dets, scenes, 0.5, 1) == doctest::Approx(want).epsilon(1e-12));
  }

  TEST_CASE("agrees with the brute force oracle") {
    std::mt19937_64 rng(77);
    const auto scenes = generate_scenes(13, 40, 32, 32, 4);
    for (int round = 0; round < 5; ++round) {
      const auto dets = noisy_predictions(scenes, rng);
      for (double t : coco_iou_thresholds()) {
        const double got = *average_precision(dets, scenes, t, 3);
        CHECK(std::abs(got - oracle_ap(dets, scenes, t, 3)) <= 1e-9);
      }
    }
  }

  TEST_CASE("monotone in threshold, bounded, order invariant") {
    std::mt19937_64 rng(78);
    const auto scenes = generate_scenes(14, 30, 32, 32, 4);
    for (int round = 0; round < 5; ++round) {
      auto dets = noisy_predictions(scenes, rng);
      double prev = 1.0;
      for (double t : coco_iou_thresholds()) {
        const double ap = *average_precision(dets, scenes, t, 3);
        CHECK(ap <= prev + 1e-12);
        CHECK(ap >= 0.0);
        prev = ap;
      }
      const auto rep = evaluate(dets, scenes, 3);
      CHECK(rep.ap <= rep.ap50);
      CHECK(rep.ap75 <= rep.ap50);
      for (auto& ds : dets) std::shuffle(ds.begin(), ds.end(), rng);
      const auto again = evaluate(dets, scenes, 3);
      CHECK(again.ap == rep.ap);
      CHECK(again.per_class == rep.per_class);
    }
  }
}
