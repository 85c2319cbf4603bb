#include "icregress/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "icregress/dataset.hpp"

using namespace icregress;

namespace {

Building box(std::string id, double min_x, double max_x, double min_z, double max_z) {
  Building b;
  b.id = std::move(id);
  b.center_x = (min_x + max_x) / 2;
  b.center_z = (min_z + max_z) / 2;
  b.width = max_x - min_x;
  b.depth = max_z - min_z;
  b.side = b.center_x < 0 ? RoadSide::kLeft : RoadSide::kRight;
  return b;
}

Scene random_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.cluster_size = seed % 2 == 0 ? 8 : 16;
  spec.target_index = static_cast<int>(seed % spec.cluster_size);
  spec.seed = seed;
  return generate_scene(spec);
}

std::vector<ReferencingSample> tiny_population(std::uint64_t seed) {
  PopulationSpec spec;
  spec.participants = 3;
  spec.segments_per_participant = 8;
  spec.seed = seed;
  return generate_population(spec).samples;
}

}  // namespace

TEST(Mae, Trivials) {
  const std::vector<double> same = {1.0, -3.0, 7.0};
  EXPECT_DOUBLE_EQ(mae(same, same), 0.0);
  EXPECT_DOUBLE_EQ(mae(std::vector<double>{10.0}, std::vector<double>{13.0}), 3.0);
  EXPECT_THROW(mae(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
               std::invalid_argument);
}

TEST(Mae, MatchesNaiveLoopOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> value(-90.0, 90.0);
  std::vector<double> preds(300), truths(300);
  for (int i = 0; i < 300; ++i) {
    preds[i] = value(rng);
    truths[i] = value(rng);
  }
  double expected = 0.0;
  for (int i = 0; i < 300; ++i) expected += std::abs(preds[i] - truths[i]);
  expected /= 300;
  EXPECT_NEAR(mae(preds, truths), expected, 1e-12);
}

TEST(Mae, TranslationConsistent) {
  std::vector<double> preds = {3.0, -8.0, 12.0};
  std::vector<double> truths = {1.0, -9.5, 15.0};
  const double before = mae(preds, truths);
  for (double& p : preds) p += 17.25;
  for (double& t : truths) t += 17.25;
  EXPECT_NEAR(mae(preds, truths), before, 1e-12);
}

TEST(Hit, PerfectPredictionHitsAllMetricsWhenUnoccluded) {
  Scene scene;
  scene.buildings = {box("a", 20, 32, 40, 52), box("b", -32, -20, 40, 52)};
  scene.target_id = "a";
  const double truth = ground_truth_angle(scene);
  EXPECT_TRUE(hit(scene, truth, HitMetric::kMrde));
  EXPECT_TRUE(hit(scene, truth, HitMetric::kSegObj));
  EXPECT_TRUE(hit(scene, truth, HitMetric::kMinDt));
}

TEST(Hit, OccludedPortionSplitsMrdeAndSegObj) {
  // The near building hides the lower part of the far building's extent.
  Scene scene;
  scene.buildings = {box("near", 10, 30, 10, 20), box("far", 14, 40, 40, 52)};
  scene.target_id = "far";
  const SceneVisibility visibility(scene);
  const AngularInterval geo = geometric_interval(scene, "far");
  const auto visible = visibility.intervals_of(1);
  ASSERT_FALSE(visible.empty());
  double total_visible = 0.0;
  for (const auto& iv : visible) total_visible += iv.width();
  ASSERT_LT(total_visible, geo.width() - 0.5) << "construction should occlude part of the target";

  // Probe an angle inside the geometric extent but not inside any visible part.
  double probe = geo.lo;
  bool found = false;
  for (double a = geo.lo + 0.01; a < geo.hi; a += 0.01) {
    bool in_visible = false;
    for (const auto& iv : visible) in_visible |= iv.contains(a);
    if (!in_visible) {
      probe = a;
      found = true;
      break;
    }
  }
  ASSERT_TRUE(found);
  EXPECT_TRUE(hit(scene, probe, HitMetric::kMrde));
  EXPECT_FALSE(hit(scene, probe, HitMetric::kSegObj));
}

TEST(Hit, SegObjImpliesMrdeAndMinDt) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int segobj_hits = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene scene = random_scene(seed);
    const SceneVisibility visibility(scene);
    const AngularInterval hull = visibility.covered_hull();
    for (int i = 0; i < 25; ++i) {
      const double angle = hull.lo - 2.0 + unit(rng) * (hull.width() + 4.0);
      const bool segobj = hit(scene, angle, HitMetric::kSegObj, visibility);
      segobj_hits += segobj;
      if (segobj) {
        EXPECT_TRUE(hit(scene, angle, HitMetric::kMrde, visibility));
        EXPECT_TRUE(hit(scene, angle, HitMetric::kMinDt, visibility));
      }
    }
  }
  EXPECT_GT(segobj_hits, 0);
}

TEST(Evaluate, PerfectPredictorScoresEverything) {
  const auto samples = tiny_population(3);
  std::vector<double> truths;
  for (const auto& s : samples) truths.push_back(s.truth_angle_deg);
  const EvalResult result = evaluate_predictions(samples, truths);
  EXPECT_DOUBLE_EQ(result.mae_deg, 0.0);
  EXPECT_DOUBLE_EQ(result.mrde_accuracy_pct, 100.0);
  EXPECT_DOUBLE_EQ(result.segobj_accuracy_pct, 100.0);
  EXPECT_DOUBLE_EQ(result.mindt_accuracy_pct, 100.0);
  EXPECT_GT(result.segobj_chance_pct, 0.0);
  EXPECT_LE(result.segobj_chance_pct, result.mrde_chance_pct + 1e-9);
  EXPECT_LE(result.segobj_chance_pct, result.mindt_chance_pct + 1e-9);
}

TEST(Evaluate, PermutationInvariant) {
  const auto samples = tiny_population(4);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> jitter(-20.0, 20.0);
  std::vector<double> preds;
  for (const auto& s : samples) preds.push_back(s.truth_angle_deg + jitter(rng));
  const EvalResult base = evaluate_predictions(samples, preds);

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ReferencingSample> shuffled;
  std::vector<double> shuffled_preds;
  for (std::size_t i : order) {
    shuffled.push_back(samples[i]);
    shuffled_preds.push_back(preds[i]);
  }
  const EvalResult shuffled_result = evaluate_predictions(shuffled, shuffled_preds);
  EXPECT_NEAR(shuffled_result.mae_deg, base.mae_deg, 1e-12);
  EXPECT_DOUBLE_EQ(shuffled_result.mrde_accuracy_pct, base.mrde_accuracy_pct);
  EXPECT_DOUBLE_EQ(shuffled_result.segobj_accuracy_pct, base.segobj_accuracy_pct);
  EXPECT_DOUBLE_EQ(shuffled_result.mindt_accuracy_pct, base.mindt_accuracy_pct);
}

TEST(Evaluate, SegObjAccuracyBoundedByOtherMetrics) {
  const auto samples = tiny_population(5);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> angle(-80.0, 80.0);
  std::vector<double> preds;
  for (std::size_t i = 0; i < samples.size(); ++i) preds.push_back(angle(rng));
  const EvalResult result = evaluate_predictions(samples, preds);
  EXPECT_LE(result.segobj_accuracy_pct, result.mrde_accuracy_pct + 1e-9);
  EXPECT_LE(result.segobj_accuracy_pct, result.mindt_accuracy_pct + 1e-9);
}

TEST(Evaluate, KeepsPerSampleRecordsOnRequest) {
  const auto samples = tiny_population(6);
  std::vector<double> truths;
  for (const auto& s : samples) truths.push_back(s.truth_angle_deg);
  EvalOptions options;
  options.keep_per_sample = true;
  const EvalResult result = evaluate_predictions(samples, truths, options);
  ASSERT_EQ(result.per_sample.size(), samples.size());
  EXPECT_TRUE(result.per_sample.front().segobj_hit);
  EXPECT_EQ(result.per_sample.front().participant_id, samples.front().participant_id);

  EXPECT_THROW(evaluate_predictions({}, {}), std::invalid_argument);
}
