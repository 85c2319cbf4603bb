// File formats: scene JSON, JSON-lines sample corpora with a scene sidecar
// and participant manifest, flat-feature CSV export, exemplar JSON-lines, and
// evaluation reports.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "icregress/dataset.hpp"
#include "icregress/incremental.hpp"
#include "icregress/metrics.hpp"

namespace icregress {

/// Shortest round-trip decimal rendering; keeps CSV output byte-stable.
inline std::string format_double(double value) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf, end);
}

inline nlohmann::json pose_to_json(const Pose2D& pose) {
  return {{"x", pose.x}, {"z", pose.z}, {"heading", pose.heading_deg}};
}

inline Pose2D pose_from_json(const nlohmann::json& j) {
  Pose2D pose;
  pose.x = j.at("x").get<double>();
  pose.z = j.at("z").get<double>();
  pose.heading_deg = normalize_signed_deg(j.at("heading").get<double>());
  return pose;
}

inline nlohmann::json building_to_json(const Building& b) {
  return {{"id", b.id},
          {"center_x", b.center_x},
          {"center_z", b.center_z},
          {"width", b.width},
          {"depth", b.depth},
          {"side", to_string(b.side)},
          {"lateral_offset", b.lateral_offset}};
}

inline Building building_from_json(const nlohmann::json& j) {
  Building b;
  b.id = j.at("id").get<std::string>();
  b.center_x = j.at("center_x").get<double>();
  b.center_z = j.at("center_z").get<double>();
  b.width = j.at("width").get<double>();
  b.depth = j.at("depth").get<double>();
  const std::string side = j.at("side").get<std::string>();
  if (side == "left") {
    b.side = RoadSide::kLeft;
  } else if (side == "right") {
    b.side = RoadSide::kRight;
  } else {
    throw std::runtime_error("unknown road side '" + side + "'");
  }
  b.lateral_offset = j.at("lateral_offset").get<double>();
  return b;
}

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json buildings = nlohmann::json::array();
  for (const Building& b : scene.buildings) buildings.push_back(building_to_json(b));
  return {{"onset_pose", pose_to_json(scene.onset_pose)},
          {"buildings", buildings},
          {"target_id", scene.target_id}};
}

inline Scene scene_from_json(const nlohmann::json& j, bool require_cluster_size = true) {
  Scene scene;
  scene.onset_pose = pose_from_json(j.at("onset_pose"));
  for (const auto& bj : j.at("buildings")) scene.buildings.push_back(building_from_json(bj));
  scene.target_id = j.at("target_id").get<std::string>();
  scene.validate(require_cluster_size);
  return scene;
}

inline nlohmann::json profile_to_json(const DriverProfile& p) {
  return {{"participant_id", p.participant_id},
          {"handedness", to_string(p.handedness)},
          {"experience_years", p.experience_years},
          {"pointing_bias_deg", p.pointing_bias_deg},
          {"pointing_noise_std_deg", p.pointing_noise_std_deg},
          {"gaze_noise_std_deg", p.gaze_noise_std_deg},
          {"head_attenuation", p.head_attenuation},
          {"glance_rate", p.glance_rate},
          {"speech_available", p.speech_available},
          {"onset_jitter_std_s", p.onset_jitter_std_s}};
}

inline DriverProfile profile_from_json(const nlohmann::json& j) {
  DriverProfile p;
  p.participant_id = j.at("participant_id").get<std::string>();
  p.handedness =
      j.at("handedness").get<std::string>() == "left" ? Handedness::kLeft : Handedness::kRight;
  p.experience_years = j.at("experience_years").get<double>();
  p.pointing_bias_deg = j.at("pointing_bias_deg").get<double>();
  p.pointing_noise_std_deg = j.at("pointing_noise_std_deg").get<double>();
  p.gaze_noise_std_deg = j.at("gaze_noise_std_deg").get<double>();
  p.head_attenuation = j.at("head_attenuation").get<double>();
  p.glance_rate = j.at("glance_rate").get<double>();
  p.speech_available = j.at("speech_available").get<bool>();
  p.onset_jitter_std_s = j.at("onset_jitter_std_s").get<double>();
  p.validate();
  return p;
}

struct DatasetPaths {
  std::filesystem::path samples;   // JSON-lines, one sample per line
  std::filesystem::path scenes;    // sidecar JSON: scene id -> scene
  std::filesystem::path manifest;  // participant -> profile

  static DatasetPaths in_dir(const std::filesystem::path& dir) {
    return {dir / "samples.jsonl", dir / "scenes.json", dir / "manifest.json"};
  }
};

inline void save_dataset(const Dataset& dataset, const DatasetPaths& paths) {
  std::map<const Scene*, std::string> scene_ids;
  nlohmann::json scenes = nlohmann::json::object();
  std::ofstream samples_out(paths.samples, std::ios::trunc);
  if (!samples_out) throw std::runtime_error("cannot write " + paths.samples.string());
  for (const ReferencingSample& s : dataset.samples) {
    auto [it, inserted] = scene_ids.try_emplace(
        s.scene.get(), "scene_" + s.participant_id + "_" + std::to_string(s.segment_id));
    if (inserted) scenes[it->second] = scene_to_json(*s.scene);
    nlohmann::json line = {{"participant_id", s.participant_id},
                           {"segment_id", s.segment_id},
                           {"scene_id", it->second},
                           {"truth_angle_deg", s.truth_angle_deg},
                           {"onset_t", s.features.onset_t},
                           {"features", s.features.values},
                           {"handedness", to_string(s.handedness)},
                           {"experience_years", s.experience_years},
                           {"speech_available", s.speech_available}};
    samples_out << line.dump() << "\n";
  }
  if (!samples_out) throw std::runtime_error("short write: " + paths.samples.string());

  std::ofstream scenes_out(paths.scenes, std::ios::trunc);
  if (!scenes_out) throw std::runtime_error("cannot write " + paths.scenes.string());
  scenes_out << scenes.dump(2) << "\n";

  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& [id, profile] : dataset.manifest) manifest[id] = profile_to_json(profile);
  std::ofstream manifest_out(paths.manifest, std::ios::trunc);
  if (!manifest_out) throw std::runtime_error("cannot write " + paths.manifest.string());
  manifest_out << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const DatasetPaths& paths) {
  Dataset dataset;

  std::ifstream scenes_in(paths.scenes);
  if (!scenes_in) throw std::runtime_error("cannot open " + paths.scenes.string());
  nlohmann::json scenes_json = nlohmann::json::parse(scenes_in);
  std::map<std::string, std::shared_ptr<const Scene>> scenes;
  for (const auto& [id, sj] : scenes_json.items()) {
    scenes[id] = std::make_shared<Scene>(scene_from_json(sj));
  }

  std::ifstream manifest_in(paths.manifest);
  if (!manifest_in) throw std::runtime_error("cannot open " + paths.manifest.string());
  nlohmann::json manifest_json = nlohmann::json::parse(manifest_in);
  for (const auto& [id, pj] : manifest_json.items()) {
    dataset.manifest[id] = profile_from_json(pj);
  }

  std::ifstream samples_in(paths.samples);
  if (!samples_in) throw std::runtime_error("cannot open " + paths.samples.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(samples_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ReferencingSample s;
    s.participant_id = j.at("participant_id").get<std::string>();
    s.segment_id = j.at("segment_id").get<int>();
    const std::string scene_id = j.at("scene_id").get<std::string>();
    const auto scene_it = scenes.find(scene_id);
    if (scene_it == scenes.end()) {
      throw std::runtime_error("sample line " + std::to_string(line_no) +
                               " references unknown scene '" + scene_id + "'");
    }
    s.scene = scene_it->second;
    s.truth_angle_deg = j.at("truth_angle_deg").get<double>();
    s.features.onset_t = j.at("onset_t").get<double>();
    const auto& values = j.at("features");
    if (values.size() != FeatureWindow::kValues) {
      throw std::runtime_error("sample line " + std::to_string(line_no) +
                               " has a malformed feature window");
    }
    for (std::size_t i = 0; i < FeatureWindow::kValues; ++i) {
      s.features.values[i] = values[i].get<double>();
    }
    s.handedness =
        j.at("handedness").get<std::string>() == "left" ? Handedness::kLeft : Handedness::kRight;
    s.experience_years = j.at("experience_years").get<double>();
    s.speech_available = j.at("speech_available").get<bool>();
    if (std::abs(s.truth_angle_deg - ground_truth_angle(*s.scene)) > 1e-9) {
      throw std::runtime_error("sample line " + std::to_string(line_no) +
                               " violates the truth-angle invariant");
    }
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

/// Flat interop export: one row per sample with the 160 feature values and
/// the truth angle.
inline void export_features_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "participant_id,segment_id";
  for (int i = 0; i < FeatureWindow::kValues; ++i) {
    out << ",f" << (i < 100 ? "0" : "") << (i < 10 ? "0" : "") << i;
  }
  out << ",truth_angle_deg\n";
  for (const ReferencingSample& s : dataset.samples) {
    out << s.participant_id << "," << s.segment_id;
    for (double v : s.features.values) out << "," << format_double(v);
    out << "," << format_double(s.truth_angle_deg) << "\n";
  }
}

inline void save_exemplars(const ExemplarSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header = {{"capacity", set.capacity}, {"count", set.entries.size()}};
  out << header.dump() << "\n";
  for (const ExemplarEntry& e : set.entries) {
    nlohmann::json line = {{"provenance_id", e.provenance_id},
                           {"target_deg", e.target_deg},
                           {"onset_t", e.features.onset_t},
                           {"features", e.features.values}};
    out << line.dump() << "\n";
  }
}

inline ExemplarSet load_exemplars(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty exemplar file " + path.string());
  const nlohmann::json header = nlohmann::json::parse(line);
  ExemplarSet set;
  set.capacity = header.at("capacity").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ExemplarEntry e;
    e.provenance_id = j.at("provenance_id").get<std::string>();
    e.target_deg = j.at("target_deg").get<double>();
    e.features.onset_t = j.at("onset_t").get<double>();
    const auto& values = j.at("features");
    if (values.size() != FeatureWindow::kValues) {
      throw std::runtime_error("malformed exemplar feature window in " + path.string());
    }
    for (std::size_t i = 0; i < FeatureWindow::kValues; ++i) {
      e.features.values[i] = values[i].get<double>();
    }
    set.entries.push_back(std::move(e));
  }
  if (header.at("count").get<std::size_t>() != set.entries.size()) {
    throw std::runtime_error("exemplar count mismatch in " + path.string());
  }
  return set;
}

inline nlohmann::json eval_result_to_json(const EvalResult& r) {
  return {{"n_samples", r.n_samples},
          {"mae_deg", r.mae_deg},
          {"mrde_accuracy_pct", r.mrde_accuracy_pct},
          {"segobj_accuracy_pct", r.segobj_accuracy_pct},
          {"mindt_accuracy_pct", r.mindt_accuracy_pct},
          {"mrde_chance_pct", r.mrde_chance_pct},
          {"segobj_chance_pct", r.segobj_chance_pct},
          {"mindt_chance_pct", r.mindt_chance_pct}};
}

inline EvalResult eval_result_from_json(const nlohmann::json& j) {
  EvalResult r;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.mae_deg = j.at("mae_deg").get<double>();
  r.mrde_accuracy_pct = j.at("mrde_accuracy_pct").get<double>();
  r.segobj_accuracy_pct = j.at("segobj_accuracy_pct").get<double>();
  r.mindt_accuracy_pct = j.at("mindt_accuracy_pct").get<double>();
  r.mrde_chance_pct = j.at("mrde_chance_pct").get<double>();
  r.segobj_chance_pct = j.at("segobj_chance_pct").get<double>();
  r.mindt_chance_pct = j.at("mindt_chance_pct").get<double>();
  return r;
}

/// Per-sample CSV: sample id, predicted and truth angles, the three hit
/// booleans, and the metric chance widths.
inline void write_per_sample_csv(const EvalResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "participant_id,segment_id,predicted_deg,truth_deg,mrde_hit,segobj_hit,mindt_hit,"
         "mrde_chance_pct,segobj_chance_pct,mindt_chance_pct\n";
  for (const SampleRecord& r : result.per_sample) {
    out << r.participant_id << "," << r.segment_id << "," << format_double(r.predicted_deg) << ","
        << format_double(r.truth_deg) << "," << (r.mrde_hit ? 1 : 0) << ","
        << (r.segobj_hit ? 1 : 0) << "," << (r.mindt_hit ? 1 : 0) << ","
        << format_double(r.mrde_chance_pct) << "," << format_double(r.segobj_chance_pct) << ","
        << format_double(r.mindt_chance_pct) << "\n";
  }
}

}  // namespace icregress
