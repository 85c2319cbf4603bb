#include "icregress/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace icregress;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

PopulationSpec tiny_population() {
  PopulationSpec spec;
  spec.participants = 12;
  spec.segments_per_participant = 6;
  spec.cluster_sizes = {8};
  spec.seed = 5;
  return spec;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.learning_rate = 3e-3;
  return cfg;
}

ExperimentConfig tiny_config(ExperimentKind kind, const fs::path& out) {
  ExperimentConfig config;
  config.kind = kind;
  config.population = tiny_population();
  config.base_train = tiny_train();
  config.seeds = {1, 2};
  config.test_fraction = 0.2;
  config.val_fraction = 0.0;
  config.dropout_p = 0.0;
  config.output_dir = out.string();
  switch (kind) {
    case ExperimentKind::kAblation:
      config.masks = {mask_from_names({"Pnt"}), mask_from_names({"Head"})};
      break;
    case ExperimentKind::kKSweep:
      config.k_values = {0.0, 0.25};
      config.traits = {TraitSubset::kAmateur};
      config.population.amateur_fraction = 0.5;
      config.population.expert_fraction = 0.5;
      config.balance_traits = true;
      break;
    case ExperimentKind::kTraitAdapt:
      config.traits = {TraitSubset::kAmateur};
      config.population.amateur_fraction = 0.5;
      config.population.expert_fraction = 0.5;
      config.balance_traits = true;
      break;
    case ExperimentKind::kPersonalization:
      config.test_fraction = 0.25;
      break;
    case ExperimentKind::kForgetting: {
      PopulationSpec shifted = tiny_population();
      shifted.population_bias_shift_deg = 8.0;
      shifted.id_prefix = "q";
      config.new_population = shifted;
      config.test_fraction = 0.25;
      break;
    }
  }
  return config;
}

}  // namespace

TEST(ExperimentConfig, JsonRoundTrip) {
  const ExperimentConfig config = tiny_config(ExperimentKind::kForgetting, "out");
  const nlohmann::json j = experiment_config_to_json(config);
  const ExperimentConfig back = experiment_config_from_json(j);
  EXPECT_EQ(experiment_config_to_json(back).dump(), j.dump());
}

TEST(ExperimentConfig, ValidationCatchesBadSetups) {
  ExperimentConfig config = tiny_config(ExperimentKind::kForgetting, "out");
  config.new_population.reset();
  EXPECT_THROW(config.validate(), std::invalid_argument);

  config = tiny_config(ExperimentKind::kAblation, "out");
  config.seeds.clear();
  EXPECT_THROW(config.validate(), std::invalid_argument);

  config = tiny_config(ExperimentKind::kKSweep, "out");
  config.k_values = {-0.5};
  EXPECT_THROW(config.validate(), std::invalid_argument);
}

TEST(Ablation, EveryConditionAppearsOncePerSeed) {
  const fs::path out = temp_dir("exp_ablation");
  const ExperimentConfig config = tiny_config(ExperimentKind::kAblation, out);
  const ExperimentReport report = run_experiment(config);
  EXPECT_EQ(report.cells.size(), config.masks.size() * config.seeds.size());
  std::set<std::pair<std::string, std::uint64_t>> seen;
  for (const ConditionCell& cell : report.cells) {
    EXPECT_TRUE(seen.emplace(cell.condition, cell.seed).second)
        << "duplicate " << cell.condition << " seed " << cell.seed;
  }
  EXPECT_FALSE(report.summary.empty());
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "plots" / "ablation.csv"));
}

TEST(Ablation, ReportsAreByteIdenticalAcrossReruns) {
  const fs::path out_a = temp_dir("exp_repro_a");
  const fs::path out_b = temp_dir("exp_repro_b");
  ExperimentConfig config = tiny_config(ExperimentKind::kAblation, out_a);
  run_experiment(config);
  config.output_dir = out_b.string();
  run_experiment(config);
  // The config echo embeds the output directory; compare cells and plots.
  auto strip = [](const fs::path& p) {
    nlohmann::json j = nlohmann::json::parse(slurp(p / "report.json"));
    j["config"].erase("output_dir");
    return j.dump();
  };
  EXPECT_EQ(strip(out_a), strip(out_b));
  EXPECT_EQ(slurp(out_a / "plots" / "ablation.csv"), slurp(out_b / "plots" / "ablation.csv"));
}

TEST(KSweep, KZeroRowEqualsTransferRow) {
  const fs::path out = temp_dir("exp_sweep");
  const ExperimentConfig config = tiny_config(ExperimentKind::kKSweep, out);
  const ExperimentReport report = run_experiment(config);
  for (std::uint64_t seed : config.seeds) {
    const ConditionCell* transfer = nullptr;
    const ConditionCell* k_zero = nullptr;
    for (const ConditionCell& cell : report.cells) {
      if (cell.seed != seed) continue;
      if (cell.attrs.at("K") == "transfer") transfer = &cell;
      if (cell.attrs.at("K") == "0") k_zero = &cell;
    }
    ASSERT_NE(transfer, nullptr);
    ASSERT_NE(k_zero, nullptr);
    EXPECT_EQ(eval_result_to_json(transfer->eval).dump(),
              eval_result_to_json(k_zero->eval).dump());
  }
}

TEST(KSweep, PlotCsvRowCountMatchesConfig) {
  const fs::path out = temp_dir("exp_sweep_rows");
  const ExperimentConfig config = tiny_config(ExperimentKind::kKSweep, out);
  run_experiment(config);
  const std::string csv = slurp(out / "plots" / "k_sweep.csv");
  const std::size_t rows = std::count(csv.begin(), csv.end(), '\n') - 1;  // minus header
  EXPECT_EQ(rows, config.traits.size() * (config.k_values.size() + 2) * config.seeds.size());
}

TEST(TraitAdapt, RunsAsSingleKSweep) {
  const fs::path out = temp_dir("exp_trait");
  const ExperimentConfig config = tiny_config(ExperimentKind::kTraitAdapt, out);
  const ExperimentReport report = run_experiment(config);
  // base_only + transfer + one adapted row per seed.
  EXPECT_EQ(report.cells.size(), 3 * config.seeds.size());
}

TEST(Personalization, AllApproachesPerParticipant) {
  const fs::path out = temp_dir("exp_person");
  const ExperimentConfig config = tiny_config(ExperimentKind::kPersonalization, out);
  const ExperimentReport report = run_experiment(config);
  std::map<std::string, int> approach_counts;
  std::set<std::string> participants;
  for (const ConditionCell& cell : report.cells) {
    ++approach_counts[cell.attrs.at("approach")];
    participants.insert(cell.attrs.at("participant"));
    EXPECT_TRUE(cell.extra.count("other_participants"));
  }
  EXPECT_EQ(approach_counts.size(), 4u);
  for (const auto& [name, count] : approach_counts) {
    EXPECT_EQ(count, static_cast<int>(participants.size() * config.seeds.size())) << name;
  }
  EXPECT_TRUE(fs::exists(out / "plots" / "personalization.csv"));
}

TEST(Forgetting, ReportsBothPopulations) {
  const fs::path out = temp_dir("exp_forget");
  const ExperimentConfig config = tiny_config(ExperimentKind::kForgetting, out);
  const ExperimentReport report = run_experiment(config);
  EXPECT_EQ(report.cells.size(), 4 * config.seeds.size());
  for (const ConditionCell& cell : report.cells) {
    EXPECT_TRUE(cell.extra.count("old_population"));
    EXPECT_TRUE(cell.extra.count("new_population"));
  }
  EXPECT_TRUE(fs::exists(out / "plots" / "forgetting.csv"));
}

TEST(Resume, SecondRunReusesCheckpointsAndMatches) {
  const fs::path out = temp_dir("exp_resume");
  ExperimentConfig config = tiny_config(ExperimentKind::kAblation, out);
  run_experiment(config);
  const std::string first = slurp(out / "report.json");
  std::size_t checkpoints = 0;
  for (const auto& entry : fs::directory_iterator(out / "checkpoints")) {
    (void)entry;
    ++checkpoints;
  }
  EXPECT_EQ(checkpoints, config.masks.size() * config.seeds.size());

  config.resume = true;
  run_experiment(config);
  std::string second = slurp(out / "report.json");
  // The echo differs only in the resume flag.
  nlohmann::json a = nlohmann::json::parse(first);
  nlohmann::json b = nlohmann::json::parse(second);
  a["config"].erase("resume");
  b["config"].erase("resume");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(EmitPlotdata, ReEmissionIsByteIdentical) {
  const fs::path out = temp_dir("exp_emit");
  const ExperimentConfig config = tiny_config(ExperimentKind::kForgetting, out);
  const ExperimentReport report = run_experiment(config);
  const std::string original = slurp(out / "plots" / "forgetting.csv");

  const fs::path again = temp_dir("exp_emit_again");
  emit_plotdata(report, again);
  EXPECT_EQ(slurp(again / "plots" / "forgetting.csv"), original);

  // Round-trip through the saved report file as the CLI does.
  const ExperimentReport loaded =
      report_from_json(nlohmann::json::parse(slurp(out / "report.json")));
  const fs::path from_file = temp_dir("exp_emit_file");
  emit_plotdata(loaded, from_file);
  EXPECT_EQ(slurp(from_file / "plots" / "forgetting.csv"), original);
}

TEST(Summary, MedianAndIntervalBehaveSanely) {
  std::vector<ConditionCell> cells(5);
  for (int i = 0; i < 5; ++i) {
    cells[i].condition = "c";
    cells[i].seed = i;
    cells[i].eval.n_samples = 1;
    cells[i].eval.mae_deg = i + 1.0;  // 1..5
  }
  const auto rows = detail::summarize_cells(cells);
  const auto it = std::find_if(rows.begin(), rows.end(), [](const SummaryRow& r) {
    return r.metric == "mae_deg";
  });
  ASSERT_NE(it, rows.end());
  EXPECT_DOUBLE_EQ(it->median, 3.0);
  EXPECT_DOUBLE_EQ(it->mean, 3.0);
  EXPECT_LT(it->ci_lo, 3.0);
  EXPECT_GT(it->ci_hi, 3.0);
  EXPECT_EQ(it->n, 5);
}
