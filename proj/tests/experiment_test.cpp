#include <algorithm>
#include <cmath>
#include "doctest.h"
#include "sodar/experiment.hpp"

using namespace sodar;

TEST_SUITE("experiment") {
  TEST_CASE("axes parse") {
    for (auto a : {AblationAxis::kAgg, AblationAxis::kNeighbors, AblationAxis::kContext, AblationAxis::kLayers,
                   AblationAxis::kKernel, AblationAxis::kTwoStage, AblationAxis::kDeform, AblationAxis::kGrid})
      CHECK(parse_ablation_axis(to_string(a)) == a);
    CHECK(parse_ablation_axis("two-stage") == AblationAxis::kTwoStage);
    CHECK_THROWS_AS(parse_ablation_axis("width"), std::invalid_argument);
  }

  TEST_CASE("variant sweeps") {
    const RunConfig base;
    auto names = [&](AblationAxis a) {
      std::vector<std::string> out;
      for (const auto& v : ablation_variants(a, base)) {
        CHECK_NOTHROW(v.config.validate());
        out.push_back(v.name);
      }
      return out;
    };
    CHECK(names(AblationAxis::kAgg) == std::vector<std::string>{"agg-D", "agg-S"});
    CHECK(names(AblationAxis::kNeighbors).size() == 5);
    CHECK(names(AblationAxis::kContext).size() == 3);
    CHECK(names(AblationAxis::kLayers).size() == 4);
    CHECK(names(AblationAxis::kKernel).size() == 2);
    CHECK(names(AblationAxis::kGrid).size() == 3);
    const auto layers = ablation_variants(AblationAxis::kLayers, base);
    for (size_t k = 0; k < layers.size(); ++k) CHECK(layers[k].config.model.agg.layer_count == static_cast<int64_t>(k + 1));
    const auto agg = ablation_variants(AblationAxis::kAgg, base);
    CHECK(agg[1].config.model.agg_mode == AggMode::kStatic);
    CHECK(baseline_variant(base).config.model.agg_mode == AggMode::kDirect);
    const auto deform = ablation_variants(AblationAxis::kDeform, base);
    CHECK(deform.back().config.model.agg.deformable);
  }

  TEST_CASE("benchmark split") {
    const auto b = make_benchmark({3, 4, 2, 32, 2});
    REQUIRE(b.train.size() == 4);
    REQUIRE(b.val.size() == 2);
    const auto direct = generate_scene(3, 5, 32, 32, 2);
    CHECK(std::ranges::equal(b.val[1].image.values(), direct.image.values()));
  }

  TEST_CASE("summaries") {
    std::vector<VariantRun> runs(4);
    const double aps[] = {0.2, 0.4, 0.1, 0.1};
    for (size_t k = 0; k < 4; ++k) {
      runs[k].variant = k < 2 ? "a" : "b";
      runs[k].seed = k;
      runs[k].report.ap = aps[k];
    }
    const auto s = summarize(runs);
    REQUIRE(s.size() == 2);
    CHECK(s[0].mean_ap == doctest::Approx(0.3));
    CHECK(s[0].std_ap == doctest::Approx(std::sqrt(0.02)));
    CHECK(s[1].std_ap == 0.0);
    const auto csv = summary_csv(s);
    CHECK(csv.rfind("variant,runs,mean_ap,std_ap,mean_ap50,delta_ap\n", 0) == 0);
    CHECK(csv.find("\nb,2,0.100000,0.000000,0.000000,-0.200000\n") != std::string::npos);
    CHECK(runs_csv(runs).rfind("variant,seed,ap,ap50,ap75,seconds\n", 0) == 0);
  }

  TEST_CASE("tiny run and voting study") {
    const auto b = make_benchmark({5, 6, 3, 32, 2});
    RunConfig base;
    base.train.epochs = 1;
    base.train.val_every = 0;
    const auto run = run_variant(ablation_variants(AblationAxis::kAgg, base)[0], b.train, b.val, 2);
    CHECK(run.seed == 2);
    CHECK(run.config.model.init_seed == 2);
    CHECK(run.training.curve.size() == 1);
    CHECK(run.report.ap >= 0.0);

    ToyModel model(run.config.model, run.params);
    DecodeConfig dec;
    dec.score_threshold = 0.0;
    const auto preds = collect_predictions(model, b.val, dec);
    REQUIRE(preds.size() == 3);
    for (const auto& p : preds) CHECK(p.kept.size() <= p.candidates.size());
    const VoteScheme schemes[] = {VoteScheme::kAverage, VoteScheme::kIouWeighted};
    const auto study = run_voting_study(preds, b.val, 3, schemes);
    REQUIRE(study.rows.size() == 2);
    for (const auto& row : study.rows) CHECK(study.best().search.best_ap >= row.search.best_ap);
    const auto csv = voting_csv(study);
    CHECK(csv.rfind("method,tau,ap,delta_ap,best\nnone,", 0) == 0);
  }
}
