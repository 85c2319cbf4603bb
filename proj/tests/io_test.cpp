#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "icregress/checkpoint.hpp"
#include "icregress/dataset_io.hpp"
#include "icregress/incremental.hpp"

using namespace icregress;
namespace fs = std::filesystem;

namespace {

ArchitectureDescriptor small_arch() {
  ArchitectureDescriptor d;
  d.conv_maps = {8, 4};
  d.fc_widths = {8, 1};
  return d;
}

RegressorParams trained_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FeatureWindow> windows(40);
  std::vector<double> targets(40);
  for (auto& w : windows) {
    for (double& v : w.values) v = gauss(rng);
  }
  for (double& t : targets) t = gauss(rng) * 30.0;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 20;
  cfg.seed = seed;
  return train(windows, targets, cfg, small_arch());
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Dataset small_dataset(std::uint64_t seed) {
  PopulationSpec spec;
  spec.participants = 3;
  spec.segments_per_participant = 4;
  spec.seed = seed;
  return generate_population(spec);
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const RegressorParams params = trained_params(100);
  const std::string bytes = serialize_params(params);
  const RegressorParams back = deserialize_params(bytes);
  EXPECT_TRUE(params == back);
  EXPECT_EQ(serialize_params(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const fs::path dir = temp_dir("ckpt_file");
  const RegressorParams params = trained_params(101);
  save_checkpoint(params, dir / "model.icrg");
  EXPECT_TRUE(load_checkpoint(dir / "model.icrg") == params);
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  const RegressorParams params = trained_params(102);
  const std::string bytes = serialize_params(params);
  try {
    deserialize_params(std::string_view(bytes).substr(0, bytes.size() / 2));
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
  }
}

TEST(Checkpoint, BadMagicAndVersionAreRejected) {
  const RegressorParams params = trained_params(103);
  std::string bytes = serialize_params(params);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_params(bad_magic), std::runtime_error);

  std::string bad_version = bytes;
  bad_version[8] = 9;  // unknown format version
  try {
    deserialize_params(bad_version);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, GoldenV1StillPredictsTheSame) {
  const fs::path data_dir = fs::path(ICREGRESS_TEST_DATA_DIR);
  const RegressorParams params = load_checkpoint(data_dir / "golden_v1.icrg");

  std::ifstream in(data_dir / "golden_v1_expected.json");
  ASSERT_TRUE(in.good());
  const nlohmann::json expected = nlohmann::json::parse(in);
  std::vector<FeatureWindow> windows;
  for (const auto& row : expected.at("inputs")) {
    FeatureWindow w;
    ASSERT_EQ(row.size(), static_cast<std::size_t>(FeatureWindow::kValues));
    for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] = row[i].get<double>();
    windows.push_back(w);
  }
  const std::vector<double> predictions = predict(windows, params);
  const auto& golden = expected.at("predictions");
  ASSERT_EQ(predictions.size(), golden.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    EXPECT_NEAR(predictions[i], golden[i].get<double>(), 1e-9);
  }
}

TEST(DatasetIo, RoundTripPreservesEverything) {
  const fs::path dir = temp_dir("dataset_roundtrip");
  const Dataset dataset = small_dataset(200);
  save_dataset(dataset, DatasetPaths::in_dir(dir));
  const Dataset back = load_dataset(DatasetPaths::in_dir(dir));

  ASSERT_EQ(back.samples.size(), dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const ReferencingSample& a = dataset.samples[i];
    const ReferencingSample& b = back.samples[i];
    EXPECT_EQ(a.participant_id, b.participant_id);
    EXPECT_EQ(a.segment_id, b.segment_id);
    EXPECT_EQ(a.truth_angle_deg, b.truth_angle_deg);
    EXPECT_EQ(a.features.values, b.features.values);
    EXPECT_EQ(scene_to_json(*a.scene).dump(), scene_to_json(*b.scene).dump());
    EXPECT_EQ(a.handedness, b.handedness);
    EXPECT_EQ(a.speech_available, b.speech_available);
  }
  ASSERT_EQ(back.manifest.size(), dataset.manifest.size());
  for (const auto& [id, profile] : dataset.manifest) {
    EXPECT_EQ(profile_to_json(back.manifest.at(id)).dump(), profile_to_json(profile).dump());
  }
}

TEST(DatasetIo, SceneJsonCarriesSpecFields) {
  const Dataset dataset = small_dataset(201);
  const nlohmann::json j = scene_to_json(*dataset.samples.front().scene);
  EXPECT_TRUE(j.contains("onset_pose"));
  EXPECT_TRUE(j.at("onset_pose").contains("x"));
  EXPECT_TRUE(j.at("onset_pose").contains("z"));
  EXPECT_TRUE(j.at("onset_pose").contains("heading"));
  EXPECT_TRUE(j.contains("buildings"));
  EXPECT_TRUE(j.contains("target_id"));
  const auto& b = j.at("buildings").front();
  for (const char* key :
       {"id", "center_x", "center_z", "width", "depth", "side", "lateral_offset"}) {
    EXPECT_TRUE(b.contains(key)) << key;
  }
}

TEST(DatasetIo, LoadRejectsTruthInvariantViolation) {
  const fs::path dir = temp_dir("dataset_tampered");
  const Dataset dataset = small_dataset(202);
  save_dataset(dataset, DatasetPaths::in_dir(dir));

  // Corrupt the truth angle of the first sample line.
  std::ifstream in(dir / "samples.jsonl");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  in.close();
  nlohmann::json first = nlohmann::json::parse(lines[0]);
  first["truth_angle_deg"] = first["truth_angle_deg"].get<double>() + 1.0;
  lines[0] = first.dump();
  std::ofstream out(dir / "samples.jsonl", std::ios::trunc);
  for (const std::string& l : lines) out << l << "\n";
  out.close();

  EXPECT_THROW(load_dataset(DatasetPaths::in_dir(dir)), std::runtime_error);
}

TEST(DatasetIo, FeatureCsvShape) {
  const fs::path dir = temp_dir("dataset_csv");
  const Dataset dataset = small_dataset(203);
  export_features_csv(dataset, dir / "features.csv");
  std::ifstream in(dir / "features.csv");
  std::string header;
  ASSERT_TRUE(std::getline(in, header));
  EXPECT_EQ(header.rfind("participant_id,segment_id,f000,", 0), 0u);
  EXPECT_NE(header.find(",f159,truth_angle_deg"), std::string::npos);
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, dataset.samples.size());
}

TEST(ExemplarIo, RoundTrip) {
  const fs::path dir = temp_dir("exemplars");
  const RegressorParams params = trained_params(104);
  std::mt19937_64 rng(300);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FeatureWindow> windows(12);
  std::vector<double> targets(12);
  for (auto& w : windows) {
    for (double& v : w.values) v = gauss(rng);
  }
  for (double& t : targets) t = gauss(rng) * 25;
  const ExemplarSet set = select_exemplars(windows, targets, params, 5);
  save_exemplars(set, dir / "exemplars.jsonl");
  const ExemplarSet back = load_exemplars(dir / "exemplars.jsonl");
  ASSERT_EQ(back.size(), set.size());
  EXPECT_EQ(back.capacity, set.capacity);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.entries[i].provenance_id, set.entries[i].provenance_id);
    EXPECT_EQ(back.entries[i].target_deg, set.entries[i].target_deg);
    EXPECT_EQ(back.entries[i].features.values, set.entries[i].features.values);
  }
}

TEST(EvalIo, PerSampleCsvColumns) {
  const fs::path dir = temp_dir("eval_csv");
  const Dataset dataset = small_dataset(204);
  std::vector<double> truths;
  for (const auto& s : dataset.samples) truths.push_back(s.truth_angle_deg);
  EvalOptions options;
  options.keep_per_sample = true;
  const EvalResult result = evaluate_predictions(dataset.samples, truths, options);
  write_per_sample_csv(result, dir / "per_sample.csv");
  std::ifstream in(dir / "per_sample.csv");
  std::string header;
  ASSERT_TRUE(std::getline(in, header));
  EXPECT_EQ(header,
            "participant_id,segment_id,predicted_deg,truth_deg,mrde_hit,segobj_hit,mindt_hit,"
            "mrde_chance_pct,segobj_chance_pct,mindt_chance_pct");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, dataset.samples.size());

  const nlohmann::json j = eval_result_to_json(result);
  const EvalResult back = eval_result_from_json(j);
  EXPECT_EQ(back.n_samples, result.n_samples);
  EXPECT_EQ(back.mae_deg, result.mae_deg);
}
