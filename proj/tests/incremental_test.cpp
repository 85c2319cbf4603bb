#include "icregress/incremental.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace icregress;

namespace {

ArchitectureDescriptor small_arch() {
  ArchitectureDescriptor d;
  d.conv_maps = {8, 4};
  d.fc_widths = {8, 1};
  return d;
}

std::vector<FeatureWindow> random_windows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FeatureWindow> windows(n);
  for (FeatureWindow& w : windows) {
    for (double& v : w.values) v = gauss(rng);
  }
  return windows;
}

std::vector<double> random_targets(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-60.0, 60.0);
  std::vector<double> targets(n);
  for (double& t : targets) t = angle(rng);
  return targets;
}

RegressorParams random_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return initialize_params(small_arch(), rng);
}

}  // namespace

TEST(ResolveMemorySize, FractionsAndCounts) {
  EXPECT_EQ(resolve_memory_size(0.0, 4000), 0u);
  EXPECT_EQ(resolve_memory_size(1.0 / 8.0, 4000), 500u);
  EXPECT_EQ(resolve_memory_size(1.0 / 16.0, 4000), 250u);
  EXPECT_EQ(resolve_memory_size(500, 4000), 500u);
  EXPECT_EQ(resolve_memory_size(7, 3), 7u);  // counts are not clamped here
  EXPECT_THROW(resolve_memory_size(-0.1, 10), std::invalid_argument);
}

TEST(SelectExemplars, KZeroIsEmpty) {
  const auto windows = random_windows(10, 1);
  const auto targets = random_targets(10, 2);
  const ExemplarSet set = select_exemplars(windows, targets, random_params(3), 0);
  EXPECT_TRUE(set.empty());
  EXPECT_EQ(set.capacity, 0u);
}

TEST(SelectExemplars, KBeyondNKeepsAllSortedByResidual) {
  const auto windows = random_windows(12, 4);
  const auto targets = random_targets(12, 5);
  const RegressorParams params = random_params(6);
  const ExemplarSet set = select_exemplars(windows, targets, params, 50);
  ASSERT_EQ(set.size(), 12u);
  const std::vector<double> preds = predict(windows, params);
  double prev = -1.0;
  for (const ExemplarEntry& e : set.entries) {
    const std::size_t idx = std::stoul(e.provenance_id);
    const double residual = std::abs(preds[idx] - targets[idx]);
    EXPECT_GE(residual, prev);
    prev = residual;
  }
}

TEST(SelectExemplars, MatchesExhaustiveSortOracle) {
  const auto windows = random_windows(50, 7);
  const auto targets = random_targets(50, 8);
  const RegressorParams params = random_params(9);
  const ExemplarSet set = select_exemplars(windows, targets, params, 7);

  const std::vector<double> preds = predict(windows, params);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    order.emplace_back(std::abs(preds[i] - targets[i]), i);
  }
  std::sort(order.begin(), order.end());
  ASSERT_EQ(set.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(set.entries[i].provenance_id, std::to_string(order[i].second));
  }
}

TEST(SelectExemplars, TiesKeepOriginalOrder) {
  const auto windows = random_windows(9, 10);
  std::vector<double> targets(9, 5.0);
  RegressorParams params = random_params(11);
  // Zeroed head: every prediction is the target mean (0), so all residuals tie.
  std::fill(params.fc.back().weight.begin(), params.fc.back().weight.end(), 0.0);
  std::fill(params.fc.back().bias.begin(), params.fc.back().bias.end(), 0.0);
  const ExemplarSet set = select_exemplars(windows, targets, params, 4);
  ASSERT_EQ(set.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(set.entries[i].provenance_id, std::to_string(i));
}

TEST(SelectExemplars, MemoryIsPrefixMonotoneInK) {
  const auto windows = random_windows(40, 12);
  const auto targets = random_targets(40, 13);
  const RegressorParams params = random_params(14);
  const ExemplarSet small = select_exemplars(windows, targets, params, 5);
  const ExemplarSet large = select_exemplars(windows, targets, params, 21);
  ASSERT_EQ(small.size(), 5u);
  for (std::size_t i = 0; i < small.size(); ++i) {
    EXPECT_EQ(small.entries[i].provenance_id, large.entries[i].provenance_id);
  }
}

TEST(SelectExemplars, DescendingKeepsWorstFit) {
  const auto windows = random_windows(20, 15);
  const auto targets = random_targets(20, 16);
  const RegressorParams params = random_params(17);
  const std::vector<double> preds = predict(windows, params);
  const ExemplarSet worst = select_exemplars(windows, targets, params, 1, {}, true);
  double max_residual = -1.0;
  std::size_t max_idx = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = std::abs(preds[i] - targets[i]);
    if (r > max_residual) {
      max_residual = r;
      max_idx = i;
    }
  }
  ASSERT_EQ(worst.size(), 1u);
  EXPECT_EQ(worst.entries[0].provenance_id, std::to_string(max_idx));
}

TEST(TrainBase, ReturnsParamsAndMemory) {
  const auto windows = random_windows(48, 18);
  const auto targets = random_targets(48, 19);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 20;
  // Exercise through the small architecture by training directly.
  const RegressorParams params = train(windows, targets, cfg, small_arch());
  const ExemplarSet memory = select_exemplars(windows, targets, params, 12);
  EXPECT_EQ(memory.size(), 12u);

  const BaseTrainingResult result = train_base(windows, targets, 12, cfg);
  EXPECT_EQ(result.exemplars.size(), 12u);
  EXPECT_EQ(result.exemplars.capacity, 12u);
}

TEST(Adapt, EmptyStreamThrows) {
  const auto windows = random_windows(10, 21);
  const auto targets = random_targets(10, 22);
  const RegressorParams params = random_params(23);
  const ExemplarSet memory = select_exemplars(windows, targets, params, 5);
  TrainConfig cfg;
  std::vector<RegressionBatch> empty_stream;
  try {
    adapt(memory, empty_stream, &params, cfg);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("empty new data"), std::string::npos);
  }
  // Batches that drain to zero samples count as empty too.
  std::vector<RegressionBatch> hollow(1);
  EXPECT_THROW(adapt(memory, hollow, &params, cfg), std::invalid_argument);
}

TEST(Adapt, EmptyMemoryEqualsTransferBaseline) {
  const auto base_windows = random_windows(64, 24);
  const auto base_targets = random_targets(64, 25);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 26;
  const RegressorParams base = train(base_windows, base_targets, cfg, small_arch());

  RegressionBatch batch;
  batch.features = random_windows(24, 27);
  batch.targets = random_targets(24, 28);
  const std::vector<RegressionBatch> stream = {batch};

  TrainConfig adapt_cfg = cfg;
  adapt_cfg.seed = 29;
  const RegressorParams a = adapt(ExemplarSet{}, stream, &base, adapt_cfg);
  const RegressorParams b = transfer_baseline(stream, base, adapt_cfg);
  EXPECT_TRUE(a == b);
}

TEST(Adapt, InvariantToStreamBatching) {
  const auto base_windows = random_windows(64, 30);
  const auto base_targets = random_targets(64, 31);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 32;
  const RegressorParams base = train(base_windows, base_targets, cfg, small_arch());
  const ExemplarSet memory = select_exemplars(base_windows, base_targets, base, 8);

  const auto stream_windows = random_windows(30, 33);
  const auto stream_targets = random_targets(30, 34);
  const auto make_stream = [&](std::size_t batch_size) {
    std::vector<RegressionBatch> stream;
    for (std::size_t begin = 0; begin < stream_windows.size(); begin += batch_size) {
      const std::size_t end = std::min(stream_windows.size(), begin + batch_size);
      RegressionBatch b;
      b.features.assign(stream_windows.begin() + begin, stream_windows.begin() + end);
      b.targets.assign(stream_targets.begin() + begin, stream_targets.begin() + end);
      stream.push_back(std::move(b));
    }
    return stream;
  };

  TrainConfig adapt_cfg = cfg;
  adapt_cfg.seed = 35;
  const RegressorParams one = adapt(memory, make_stream(30), &base, adapt_cfg);
  const RegressorParams many = adapt(memory, make_stream(7), &base, adapt_cfg);
  EXPECT_TRUE(one == many);
}

TEST(Adapt, ZeroEpochTransferReturnsBase) {
  const auto base_windows = random_windows(32, 36);
  const auto base_targets = random_targets(32, 37);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const RegressorParams base = train(base_windows, base_targets, cfg, small_arch());
  RegressionBatch batch;
  batch.features = random_windows(10, 38);
  batch.targets = random_targets(10, 39);
  TrainConfig zero = cfg;
  zero.epochs = 0;
  EXPECT_TRUE(transfer_baseline(std::vector<RegressionBatch>{batch}, base, zero) == base);
}

TEST(Adapt, ScratchVariantIgnoresBase) {
  const auto base_windows = random_windows(48, 40);
  const auto base_targets = random_targets(48, 41);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 42;
  const RegressorParams base = train(base_windows, base_targets, cfg, small_arch());
  const ExemplarSet memory = select_exemplars(base_windows, base_targets, base, 8);
  RegressionBatch batch;
  batch.features = random_windows(24, 43);
  batch.targets = random_targets(24, 44);
  const std::vector<RegressionBatch> stream = {batch};

  AdaptationConfig config;
  config.train = cfg;
  config.train.batch_size = 8;
  config.variant = AdaptationVariant::kScratch;
  const AdaptationOutcome scratch = adapt_with_config(memory, stream, &base, config);
  config.variant = AdaptationVariant::kFinetuneFromBase;
  const AdaptationOutcome finetuned = adapt_with_config(memory, stream, &base, config);
  EXPECT_FALSE(scratch.params == finetuned.params);
  EXPECT_EQ(scratch.exemplars.size(), memory.size());  // memory not refreshed by default
}

TEST(Adapt, RefreshReranksMemoryUnderAdaptedModel) {
  const auto base_windows = random_windows(48, 45);
  const auto base_targets = random_targets(48, 46);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 47;
  const RegressorParams base = train(base_windows, base_targets, cfg, small_arch());
  const ExemplarSet memory = select_exemplars(base_windows, base_targets, base, 6);

  RegressionBatch batch;
  batch.features = random_windows(20, 48);
  batch.targets = random_targets(20, 49);
  batch.provenance_ids.resize(20);
  for (int i = 0; i < 20; ++i) batch.provenance_ids[i] = "new:" + std::to_string(i);

  AdaptationConfig config;
  config.train = cfg;
  config.refresh_exemplars = true;
  const AdaptationOutcome outcome =
      adapt_with_config(memory, std::vector<RegressionBatch>{batch}, &base, config);
  EXPECT_EQ(outcome.exemplars.size(), 6u);
  // Refreshed memory ranks under the adapted model over memory + stream.
  const ExemplarSet expected = [&] {
    std::vector<FeatureWindow> pool;
    std::vector<double> pool_targets;
    std::vector<std::string> ids;
    for (const auto& e : memory.entries) {
      pool.push_back(e.features);
      pool_targets.push_back(e.target_deg);
      ids.push_back(e.provenance_id);
    }
    for (std::size_t i = 0; i < batch.features.size(); ++i) {
      pool.push_back(batch.features[i]);
      pool_targets.push_back(batch.targets[i]);
      ids.push_back(batch.provenance_ids[i]);
    }
    return select_exemplars(pool, pool_targets, outcome.params, 6, ids);
  }();
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(outcome.exemplars.entries[i].provenance_id, expected.entries[i].provenance_id);
  }
}
