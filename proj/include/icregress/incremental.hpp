// Exemplar-ranked rehearsal: base training keeps the K best-fit points as
// memory; adaptation concatenates that memory with a drained stream of new
// data and fine-tunes the base parameters (or retrains from scratch when no
// base model is supplied).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icregress/regressor.hpp"

namespace icregress {

struct ExemplarEntry {
  FeatureWindow features;
  double target_deg = 0.0;
  std::string provenance_id;
};

/// Rehearsal memory: the K base points with the smallest absolute residual
/// under the base model, in ascending residual order.
struct ExemplarSet {
  std::vector<ExemplarEntry> entries;
  std::size_t capacity = 0;  // requested K

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

/// Resolves a memory-size request against the base training-set length:
/// values below 1 are fractions of BL, values >= 1 are absolute counts.
inline std::size_t resolve_memory_size(double k, std::size_t base_length) {
  if (k < 0.0) throw std::invalid_argument("memory size K must be >= 0");
  if (k >= 1.0) return static_cast<std::size_t>(std::llround(k));
  return static_cast<std::size_t>(std::llround(k * static_cast<double>(base_length)));
}

/// Ranks all points by |prediction - target| ascending (ties keep the
/// original order) and retains the first min(K, N). Keeping the BEST-fit
/// points follows the base-training ranking rule literally; descending mode
/// retains the worst-fit points instead and is off by default.
inline ExemplarSet select_exemplars(std::span<const FeatureWindow> features,
                                    std::span<const double> targets,
                                    const RegressorParams& params, std::size_t k,
                                    std::span<const std::string> provenance_ids = {},
                                    bool descending = false) {
  detail::check_dataset(features, targets);
  if (!provenance_ids.empty() && provenance_ids.size() != features.size()) {
    throw std::invalid_argument("provenance id count mismatch");
  }
  const std::vector<double> predicted = predict(features, params);
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> residual(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    residual[i] = std::abs(predicted[i] - targets[i]);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? residual[a] > residual[b] : residual[a] < residual[b];
  });

  ExemplarSet set;
  set.capacity = k;
  const std::size_t keep = std::min(k, features.size());
  set.entries.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t idx = order[i];
    ExemplarEntry entry;
    entry.features = features[idx];
    entry.target_deg = targets[idx];
    entry.provenance_id =
        provenance_ids.empty() ? std::to_string(idx) : provenance_ids[idx];
    set.entries.push_back(std::move(entry));
  }
  return set;
}

struct BaseTrainingResult {
  RegressorParams params;
  ExemplarSet exemplars;
};

/// Base-model training: fit the regressor, then rank the training points
/// under it and keep the K best as rehearsal memory.
inline BaseTrainingResult train_base(std::span<const FeatureWindow> features,
                                     std::span<const double> targets, std::size_t k,
                                     const TrainConfig& config,
                                     std::span<const std::string> provenance_ids = {}) {
  BaseTrainingResult result;
  result.params = train(features, targets, config);
  result.exemplars = select_exemplars(features, targets, result.params, k, provenance_ids);
  return result;
}

/// One batch of the new-data stream.
struct RegressionBatch {
  std::vector<FeatureWindow> features;
  std::vector<double> targets;
  std::vector<std::string> provenance_ids;  // optional, parallel to features
};

/// Adapted-model training: drains the stream, concatenates it after the
/// exemplar entries, and fine-tunes from the base parameters. Without base
/// parameters the combined set is trained from scratch instead.
inline RegressorParams adapt(const ExemplarSet& exemplars,
                             std::span<const RegressionBatch> new_stream,
                             const RegressorParams* base_params, const TrainConfig& config) {
  std::vector<FeatureWindow> features;
  std::vector<double> targets;
  for (const ExemplarEntry& e : exemplars.entries) {
    features.push_back(e.features);
    targets.push_back(e.target_deg);
  }
  std::size_t streamed = 0;
  for (const RegressionBatch& batch : new_stream) {
    if (batch.features.size() != batch.targets.size()) {
      throw std::invalid_argument("stream batch feature/target count mismatch");
    }
    features.insert(features.end(), batch.features.begin(), batch.features.end());
    targets.insert(targets.end(), batch.targets.begin(), batch.targets.end());
    streamed += batch.features.size();
  }
  if (streamed == 0) throw std::invalid_argument("empty new data");

  if (base_params != nullptr) {
    return finetune(features, targets, *base_params, config);
  }
  return train(features, targets, config);
}

/// Naive fine-tuning on the new data alone; identical to adaptation with an
/// empty exemplar set (memory size zero).
inline RegressorParams transfer_baseline(std::span<const RegressionBatch> new_stream,
                                         const RegressorParams& base_params,
                                         const TrainConfig& config) {
  return adapt(ExemplarSet{}, new_stream, &base_params, config);
}

enum class AdaptationVariant { kFinetuneFromBase, kScratch };

/// Declarative adaptation settings used by the experiment harness.
struct AdaptationConfig {
  double k = 0.125;  // fraction of BL when < 1, absolute count otherwise
  TrainConfig train;
  AdaptationVariant variant = AdaptationVariant::kFinetuneFromBase;
  // Re-rank the exemplar+stream pool under the adapted parameters and keep K,
  // for multi-round studies. Off by default: memory is not refreshed.
  bool refresh_exemplars = false;
};

struct AdaptationOutcome {
  RegressorParams params;
  ExemplarSet exemplars;  // refreshed memory when requested, input memory otherwise
};

inline AdaptationOutcome adapt_with_config(const ExemplarSet& exemplars,
                                           std::span<const RegressionBatch> new_stream,
                                           const RegressorParams* base_params,
                                           const AdaptationConfig& config) {
  const RegressorParams* init =
      config.variant == AdaptationVariant::kScratch ? nullptr : base_params;
  AdaptationOutcome outcome;
  outcome.params = adapt(exemplars, new_stream, init, config.train);
  if (!config.refresh_exemplars) {
    outcome.exemplars = exemplars;
    return outcome;
  }
  std::vector<FeatureWindow> pool_features;
  std::vector<double> pool_targets;
  std::vector<std::string> pool_ids;
  for (const ExemplarEntry& e : exemplars.entries) {
    pool_features.push_back(e.features);
    pool_targets.push_back(e.target_deg);
    pool_ids.push_back(e.provenance_id);
  }
  for (const RegressionBatch& batch : new_stream) {
    for (std::size_t i = 0; i < batch.features.size(); ++i) {
      pool_features.push_back(batch.features[i]);
      pool_targets.push_back(batch.targets[i]);
      pool_ids.push_back(batch.provenance_ids.size() == batch.features.size()
                             ? batch.provenance_ids[i]
                             : "stream:" + std::to_string(pool_ids.size()));
    }
  }
  outcome.exemplars = select_exemplars(pool_features, pool_targets, outcome.params,
                                       exemplars.capacity, pool_ids);
  return outcome;
}

}  // namespace icregress
