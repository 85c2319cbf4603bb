// MAE and the three hit metrics (MRDE, SegObj, MinDT) with dataset-level
// evaluation and chance-level aggregation.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icregress/dataset.hpp"
#include "icregress/geometry.hpp"
#include "icregress/regressor.hpp"

namespace icregress {

/// Mean absolute error in degrees.
inline double mae(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("length mismatch");
  if (predictions.empty()) throw std::invalid_argument("empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    total += std::abs(predictions[i] - truths[i]);
  }
  return total / static_cast<double>(predictions.size());
}

/// Hit test for one predicted angle against the scene's target. Interval
/// boundaries count as hits (closed intervals).
inline bool hit(const Scene& scene, double predicted_angle_deg, HitMetric metric,
                const SceneVisibility& visibility) {
  const std::size_t target = scene.index_of(scene.target_id);
  switch (metric) {
    case HitMetric::kMrde:
      return geometric_interval(scene, scene.buildings[target]).contains(predicted_angle_deg);
    case HitMetric::kSegObj:
      for (const AngularInterval& iv : visibility.intervals_of(target)) {
        if (iv.contains(predicted_angle_deg)) return true;
      }
      return false;
    case HitMetric::kMinDt:
      return visibility.nearest_owner(predicted_angle_deg) == target;
  }
  return false;
}

inline bool hit(const Scene& scene, double predicted_angle_deg, HitMetric metric) {
  return hit(scene, predicted_angle_deg, metric, SceneVisibility(scene));
}

struct SampleRecord {
  std::string participant_id;
  int segment_id = 0;
  double predicted_deg = 0.0;
  double truth_deg = 0.0;
  bool mrde_hit = false;
  bool segobj_hit = false;
  bool mindt_hit = false;
  double mrde_chance_pct = 0.0;
  double segobj_chance_pct = 0.0;
  double mindt_chance_pct = 0.0;
};

struct EvalResult {
  std::size_t n_samples = 0;
  double mae_deg = 0.0;
  double mrde_accuracy_pct = 0.0;
  double segobj_accuracy_pct = 0.0;
  double mindt_accuracy_pct = 0.0;
  double mrde_chance_pct = 0.0;
  double segobj_chance_pct = 0.0;
  double mindt_chance_pct = 0.0;
  std::vector<SampleRecord> per_sample;  // populated on request
};

struct EvalOptions {
  bool keep_per_sample = false;
};

/// Aggregates MAE, per-metric hit rates, and mean chance levels for given
/// predictions (one per sample).
inline EvalResult evaluate_predictions(std::span<const ReferencingSample> samples,
                                       std::span<const double> predictions,
                                       const EvalOptions& options = {}) {
  if (samples.empty()) throw std::invalid_argument("empty input");
  if (samples.size() != predictions.size()) throw std::invalid_argument("length mismatch");

  EvalResult result;
  result.n_samples = samples.size();
  double hits_mrde = 0, hits_segobj = 0, hits_mindt = 0;
  double abs_err = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ReferencingSample& s = samples[i];
    if (!s.scene) throw std::invalid_argument("sample without scene");
    const SceneVisibility visibility(*s.scene);
    SampleRecord record;
    record.participant_id = s.participant_id;
    record.segment_id = s.segment_id;
    record.predicted_deg = predictions[i];
    record.truth_deg = s.truth_angle_deg;
    record.mrde_hit = hit(*s.scene, predictions[i], HitMetric::kMrde, visibility);
    record.segobj_hit = hit(*s.scene, predictions[i], HitMetric::kSegObj, visibility);
    record.mindt_hit = hit(*s.scene, predictions[i], HitMetric::kMinDt, visibility);
    record.mrde_chance_pct =
        target_metric_width(*s.scene, HitMetric::kMrde, visibility) / 180.0 * 100.0;
    record.segobj_chance_pct =
        target_metric_width(*s.scene, HitMetric::kSegObj, visibility) / 180.0 * 100.0;
    record.mindt_chance_pct =
        target_metric_width(*s.scene, HitMetric::kMinDt, visibility) / 180.0 * 100.0;

    hits_mrde += record.mrde_hit;
    hits_segobj += record.segobj_hit;
    hits_mindt += record.mindt_hit;
    abs_err += std::abs(predictions[i] - s.truth_angle_deg);
    result.mrde_chance_pct += record.mrde_chance_pct;
    result.segobj_chance_pct += record.segobj_chance_pct;
    result.mindt_chance_pct += record.mindt_chance_pct;
    if (options.keep_per_sample) result.per_sample.push_back(std::move(record));
  }
  const double n = static_cast<double>(samples.size());
  result.mae_deg = abs_err / n;
  result.mrde_accuracy_pct = hits_mrde / n * 100.0;
  result.segobj_accuracy_pct = hits_segobj / n * 100.0;
  result.mindt_accuracy_pct = hits_mindt / n * 100.0;
  result.mrde_chance_pct /= n;
  result.segobj_chance_pct /= n;
  result.mindt_chance_pct /= n;
  return result;
}

/// Runs the regressor over the samples and aggregates the report.
inline EvalResult evaluate(std::span<const ReferencingSample> samples,
                           const RegressorParams& params, const EvalOptions& options = {}) {
  if (samples.empty()) throw std::invalid_argument("empty input");
  std::vector<FeatureWindow> features;
  features.reserve(samples.size());
  for (const ReferencingSample& s : samples) features.push_back(s.features);
  const std::vector<double> predictions = predict(features, params);
  return evaluate_predictions(samples, predictions, options);
}

}  // namespace icregress
