// Config-driven experiment harness: modality ablation, memory-size sweeps,
// trait adaptation, per-driver personalization, and two-population forgetting
// diagnostics, with content-addressed checkpoint reuse and plot-ready CSVs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "icregress/checkpoint.hpp"
#include "icregress/dataset.hpp"
#include "icregress/dataset_io.hpp"
#include "icregress/hashing.hpp"
#include "icregress/incremental.hpp"
#include "icregress/metrics.hpp"
#include "icregress/regressor.hpp"

namespace icregress {

enum class ExperimentKind { kAblation, kKSweep, kTraitAdapt, kPersonalization, kForgetting };

inline const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kAblation: return "ablation";
    case ExperimentKind::kKSweep: return "k_sweep";
    case ExperimentKind::kTraitAdapt: return "trait_adapt";
    case ExperimentKind::kPersonalization: return "personalization";
    case ExperimentKind::kForgetting: return "forgetting";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "ablation") return ExperimentKind::kAblation;
  if (s == "k_sweep") return ExperimentKind::kKSweep;
  if (s == "trait_adapt") return ExperimentKind::kTraitAdapt;
  if (s == "personalization") return ExperimentKind::kPersonalization;
  if (s == "forgetting") return ExperimentKind::kForgetting;
  throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

enum class TraitSubset { kLeftHanded, kRightHanded, kAmateur, kExpert, kNoSpeech, kWithSpeech };

inline const char* to_string(TraitSubset t) {
  switch (t) {
    case TraitSubset::kLeftHanded: return "left_handed";
    case TraitSubset::kRightHanded: return "right_handed";
    case TraitSubset::kAmateur: return "amateur";
    case TraitSubset::kExpert: return "expert";
    case TraitSubset::kNoSpeech: return "no_speech";
    case TraitSubset::kWithSpeech: return "with_speech";
  }
  return "?";
}

inline TraitSubset trait_from_string(const std::string& s) {
  if (s == "left_handed") return TraitSubset::kLeftHanded;
  if (s == "right_handed") return TraitSubset::kRightHanded;
  if (s == "amateur") return TraitSubset::kAmateur;
  if (s == "expert") return TraitSubset::kExpert;
  if (s == "no_speech") return TraitSubset::kNoSpeech;
  if (s == "with_speech") return TraitSubset::kWithSpeech;
  throw std::invalid_argument("unknown trait subset '" + s + "'");
}

inline TraitPredicate predicate_for(TraitSubset t) {
  TraitPredicate p;
  switch (t) {
    case TraitSubset::kLeftHanded: p.handedness = Handedness::kLeft; break;
    case TraitSubset::kRightHanded: p.handedness = Handedness::kRight; break;
    case TraitSubset::kAmateur: p.experience = ExperienceClass::kAmateur; break;
    case TraitSubset::kExpert: p.experience = ExperienceClass::kExpert; break;
    case TraitSubset::kNoSpeech: p.speech_available = false; break;
    case TraitSubset::kWithSpeech: p.speech_available = true; break;
  }
  return p;
}

inline ModalityMask mask_from_names(const std::vector<std::string>& names) {
  ModalityMask mask = ModalityMask::none();
  for (const std::string& name : names) {
    if (name == "Pnt") {
      mask.pointing = true;
    } else if (name == "GazeHead") {
      mask.gaze_head = true;
    } else if (name == "Gaze") {
      mask.gaze = true;
    } else if (name == "Head") {
      mask.head = true;
    } else {
      throw std::invalid_argument("unknown modality '" + name + "'");
    }
  }
  return mask;
}

inline std::vector<std::string> mask_to_names(const ModalityMask& mask) {
  std::vector<std::string> names;
  if (mask.pointing) names.push_back("Pnt");
  if (mask.gaze_head) names.push_back("GazeHead");
  if (mask.gaze) names.push_back("Gaze");
  if (mask.head) names.push_back("Head");
  return names;
}

/// The nine ablation conditions: each single modality, pointing paired with
/// each other modality, gaze+head, and the full set.
inline std::vector<ModalityMask> default_ablation_masks() {
  return {
      mask_from_names({"Pnt"}),
      mask_from_names({"Gaze"}),
      mask_from_names({"GazeHead"}),
      mask_from_names({"Head"}),
      mask_from_names({"Pnt", "Gaze"}),
      mask_from_names({"Pnt", "Head"}),
      mask_from_names({"Gaze", "Head"}),
      mask_from_names({"Pnt", "GazeHead"}),
      ModalityMask::all(),
  };
}

struct DatasetFileSource {
  std::string samples;
  std::string scenes;
  std::string manifest;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kAblation;
  PopulationSpec population;                       // used unless files are given
  std::optional<DatasetFileSource> dataset_files;  // pre-recorded corpus
  std::optional<PopulationSpec> new_population;    // forgetting drift source
  std::vector<ModalityMask> masks = default_ablation_masks();
  std::vector<double> k_values = {1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0};
  double k_default = 1.0 / 8.0;  // BL/8
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  TrainConfig base_train;
  std::optional<TrainConfig> adapt_train;  // defaults to base_train
  double dropout_p = 0.3;
  std::vector<TraitSubset> traits = {TraitSubset::kAmateur};
  double val_fraction = 0.10;
  double test_fraction = 0.10;
  bool balance_traits = false;
  int stream_batch_size = 64;  // batching of the adaptation stream
  std::string output_dir = "out";
  bool resume = false;

  TrainConfig adapt_train_or_default() const { return adapt_train ? *adapt_train : base_train; }

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("config needs at least one seed");
    for (double k : k_values) {
      if (k < 0.0) throw std::invalid_argument("K values must be >= 0");
    }
    if (k_default < 0.0) throw std::invalid_argument("k_default must be >= 0");
    if (kind == ExperimentKind::kForgetting && !new_population) {
      throw std::invalid_argument("forgetting experiments need a new_population block");
    }
    if ((kind == ExperimentKind::kKSweep || kind == ExperimentKind::kTraitAdapt) &&
        traits.empty()) {
      throw std::invalid_argument("sweep experiments need at least one trait subset");
    }
    if (kind == ExperimentKind::kAblation && masks.empty()) {
      throw std::invalid_argument("ablation needs at least one modality mask");
    }
    if (stream_batch_size < 1) throw std::invalid_argument("stream_batch_size must be >= 1");
  }
};

inline nlohmann::json population_to_json(const PopulationSpec& p) {
  return {{"participants", p.participants},
          {"segments_per_participant", p.segments_per_participant},
          {"cluster_sizes", p.cluster_sizes},
          {"offsets", p.offsets},
          {"left_handed_fraction", p.left_handed_fraction},
          {"speech_available_fraction", p.speech_available_fraction},
          {"amateur_fraction", p.amateur_fraction},
          {"expert_fraction", p.expert_fraction},
          {"expert_pointing_noise_deg", p.expert_pointing_noise_deg},
          {"amateur_noise_multiplier", p.amateur_noise_multiplier},
          {"handedness_bias_deg", p.handedness_bias_deg},
          {"handedness_bias_std_deg", p.handedness_bias_std_deg},
          {"personal_bias_std_deg", p.personal_bias_std_deg},
          {"population_bias_shift_deg", p.population_bias_shift_deg},
          {"gaze_noise_std_deg", p.gaze_noise_std_deg},
          {"head_attenuation_min", p.head_attenuation_min},
          {"head_attenuation_max", p.head_attenuation_max},
          {"glance_rate", p.glance_rate},
          {"onset_jitter_std_s", p.onset_jitter_std_s},
          {"zero_noise", p.zero_noise},
          {"mask", mask_to_names(p.mask)},
          {"seed", p.seed},
          {"id_prefix", p.id_prefix}};
}

inline PopulationSpec population_from_json(const nlohmann::json& j) {
  PopulationSpec p;
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("participants", p.participants);
  get("segments_per_participant", p.segments_per_participant);
  get("cluster_sizes", p.cluster_sizes);
  get("offsets", p.offsets);
  get("left_handed_fraction", p.left_handed_fraction);
  get("speech_available_fraction", p.speech_available_fraction);
  get("amateur_fraction", p.amateur_fraction);
  get("expert_fraction", p.expert_fraction);
  get("expert_pointing_noise_deg", p.expert_pointing_noise_deg);
  get("amateur_noise_multiplier", p.amateur_noise_multiplier);
  get("handedness_bias_deg", p.handedness_bias_deg);
  get("handedness_bias_std_deg", p.handedness_bias_std_deg);
  get("personal_bias_std_deg", p.personal_bias_std_deg);
  get("population_bias_shift_deg", p.population_bias_shift_deg);
  get("gaze_noise_std_deg", p.gaze_noise_std_deg);
  get("head_attenuation_min", p.head_attenuation_min);
  get("head_attenuation_max", p.head_attenuation_max);
  get("glance_rate", p.glance_rate);
  get("onset_jitter_std_s", p.onset_jitter_std_s);
  get("zero_noise", p.zero_noise);
  if (j.contains("mask")) p.mask = mask_from_names(j.at("mask").get<std::vector<std::string>>());
  get("seed", p.seed);
  get("id_prefix", p.id_prefix);
  return p;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("momentum", c.momentum);
  get("seed", c.seed);
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  if (c.dataset_files) {
    j["dataset"] = {{"files",
                     {{"samples", c.dataset_files->samples},
                      {"scenes", c.dataset_files->scenes},
                      {"manifest", c.dataset_files->manifest}}}};
  } else {
    j["dataset"] = {{"generate", population_to_json(c.population)}};
  }
  if (c.new_population) j["new_population"] = population_to_json(*c.new_population);
  nlohmann::json masks = nlohmann::json::array();
  for (const ModalityMask& m : c.masks) masks.push_back(mask_to_names(m));
  j["masks"] = masks;
  j["k_values"] = c.k_values;
  j["k_default"] = c.k_default;
  j["seeds"] = c.seeds;
  j["base_train"] = train_config_to_json(c.base_train);
  if (c.adapt_train) j["adapt_train"] = train_config_to_json(*c.adapt_train);
  j["dropout_p"] = c.dropout_p;
  nlohmann::json traits = nlohmann::json::array();
  for (TraitSubset t : c.traits) traits.push_back(to_string(t));
  j["traits"] = traits;
  j["val_fraction"] = c.val_fraction;
  j["test_fraction"] = c.test_fraction;
  j["balance_traits"] = c.balance_traits;
  j["stream_batch_size"] = c.stream_batch_size;
  j["output_dir"] = c.output_dir;
  j["resume"] = c.resume;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("files")) {
      DatasetFileSource files;
      files.samples = d.at("files").at("samples").get<std::string>();
      files.scenes = d.at("files").at("scenes").get<std::string>();
      files.manifest = d.at("files").at("manifest").get<std::string>();
      c.dataset_files = files;
    } else if (d.contains("generate")) {
      c.population = population_from_json(d.at("generate"));
    } else {
      throw std::invalid_argument("dataset block needs 'generate' or 'files'");
    }
  }
  if (j.contains("new_population")) {
    c.new_population = population_from_json(j.at("new_population"));
  }
  if (j.contains("masks")) {
    c.masks.clear();
    for (const auto& names : j.at("masks")) {
      c.masks.push_back(mask_from_names(names.get<std::vector<std::string>>()));
    }
  }
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("k_values", c.k_values);
  get("k_default", c.k_default);
  get("seeds", c.seeds);
  if (j.contains("base_train")) c.base_train = train_config_from_json(j.at("base_train"));
  if (j.contains("adapt_train")) c.adapt_train = train_config_from_json(j.at("adapt_train"));
  get("dropout_p", c.dropout_p);
  if (j.contains("traits")) {
    c.traits.clear();
    for (const auto& t : j.at("traits")) c.traits.push_back(trait_from_string(t.get<std::string>()));
  }
  get("val_fraction", c.val_fraction);
  get("test_fraction", c.test_fraction);
  get("balance_traits", c.balance_traits);
  get("stream_batch_size", c.stream_batch_size);
  get("output_dir", c.output_dir);
  get("resume", c.resume);
  c.validate();
  return c;
}

struct TrainingArrays {
  std::vector<FeatureWindow> features;
  std::vector<double> targets;
  std::vector<std::string> ids;
};

inline TrainingArrays to_arrays(std::span<const ReferencingSample> samples,
                                const ModalityMask* mask = nullptr) {
  TrainingArrays arrays;
  arrays.features.reserve(samples.size());
  arrays.targets.reserve(samples.size());
  arrays.ids.reserve(samples.size());
  for (const ReferencingSample& s : samples) {
    arrays.features.push_back(mask ? apply_mask(s.features, *mask) : s.features);
    arrays.targets.push_back(s.truth_angle_deg);
    arrays.ids.push_back(s.participant_id + ":" + std::to_string(s.segment_id));
  }
  return arrays;
}

inline std::vector<ReferencingSample> masked_samples(std::span<const ReferencingSample> samples,
                                                     const ModalityMask& mask) {
  std::vector<ReferencingSample> out(samples.begin(), samples.end());
  for (ReferencingSample& s : out) s.features = apply_mask(s.features, mask);
  return out;
}

inline std::vector<RegressionBatch> to_stream(const TrainingArrays& arrays, int batch_size) {
  std::vector<RegressionBatch> stream;
  for (std::size_t begin = 0; begin < arrays.features.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(arrays.features.size(), begin + static_cast<std::size_t>(batch_size));
    RegressionBatch batch;
    batch.features.assign(arrays.features.begin() + begin, arrays.features.begin() + end);
    batch.targets.assign(arrays.targets.begin() + begin, arrays.targets.begin() + end);
    batch.provenance_ids.assign(arrays.ids.begin() + begin, arrays.ids.begin() + end);
    stream.push_back(std::move(batch));
  }
  return stream;
}

/// One evaluated experiment cell (condition x seed).
struct ConditionCell {
  std::string condition;                     // display label
  std::map<std::string, std::string> attrs;  // structured condition fields
  std::uint64_t seed = 0;
  EvalResult eval;
  std::map<std::string, EvalResult> extra;  // auxiliary evaluation sets
};

struct SummaryRow {
  std::string condition;
  std::string metric;
  int n = 0;
  double median = 0.0;
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct ExperimentReport {
  nlohmann::json config_echo;
  std::vector<ConditionCell> cells;
  std::vector<SummaryRow> summary;
  std::vector<std::string> plot_csv_paths;  // relative to the output directory
};

namespace detail {

inline double t_critical_975(int df) {
  static constexpr double kTable[] = {0,     12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                                      2.306, 2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
                                      2.120, 2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069,
                                      2.064, 2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) return 0.0;
  if (df <= 30) return kTable[df];
  return 1.96;
}

inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline SummaryRow summarize(const std::string& condition, const std::string& metric,
                            const std::vector<double>& values) {
  SummaryRow row;
  row.condition = condition;
  row.metric = metric;
  row.n = static_cast<int>(values.size());
  row.median = median_of(values);
  double sum = 0.0;
  for (double v : values) sum += v;
  row.mean = values.empty() ? 0.0 : sum / values.size();
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    const double sd = std::sqrt(ss / (values.size() - 1));
    const double half = t_critical_975(static_cast<int>(values.size()) - 1) * sd /
                        std::sqrt(static_cast<double>(values.size()));
    row.ci_lo = row.mean - half;
    row.ci_hi = row.mean + half;
  } else {
    row.ci_lo = row.ci_hi = row.mean;
  }
  return row;
}

inline double metric_value(const EvalResult& eval, const std::string& metric) {
  if (metric == "mae_deg") return eval.mae_deg;
  if (metric == "mrde_accuracy_pct") return eval.mrde_accuracy_pct;
  if (metric == "segobj_accuracy_pct") return eval.segobj_accuracy_pct;
  if (metric == "mindt_accuracy_pct") return eval.mindt_accuracy_pct;
  if (metric == "mrde_chance_pct") return eval.mrde_chance_pct;
  if (metric == "segobj_chance_pct") return eval.segobj_chance_pct;
  if (metric == "mindt_chance_pct") return eval.mindt_chance_pct;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

inline const std::vector<std::string>& core_metrics() {
  static const std::vector<std::string> kMetrics = {
      "mae_deg", "mrde_accuracy_pct", "segobj_accuracy_pct", "mindt_accuracy_pct"};
  return kMetrics;
}

/// Median/mean/CI per condition and metric, grouped over cells in order of
/// first appearance; extra evaluation sets get "<set>:<metric>" rows.
inline std::vector<SummaryRow> summarize_cells(const std::vector<ConditionCell>& cells) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ConditionCell*>> grouped;
  for (const ConditionCell& cell : cells) {
    auto [it, inserted] = grouped.try_emplace(cell.condition);
    if (inserted) order.push_back(cell.condition);
    it->second.push_back(&cell);
  }
  std::vector<SummaryRow> rows;
  for (const std::string& condition : order) {
    const auto& group = grouped[condition];
    for (const std::string& metric : core_metrics()) {
      std::vector<double> values;
      for (const ConditionCell* cell : group) values.push_back(metric_value(cell->eval, metric));
      rows.push_back(summarize(condition, metric, values));
    }
    std::set<std::string> extra_keys;
    for (const ConditionCell* cell : group) {
      for (const auto& [key, _] : cell->extra) extra_keys.insert(key);
    }
    for (const std::string& key : extra_keys) {
      for (const std::string& metric : core_metrics()) {
        std::vector<double> values;
        for (const ConditionCell* cell : group) {
          const auto it = cell->extra.find(key);
          if (it != cell->extra.end()) values.push_back(metric_value(it->second, metric));
        }
        rows.push_back(summarize(condition, key + ":" + metric, values));
      }
    }
  }
  return rows;
}

/// Content-addressed checkpoint store under <output_dir>/checkpoints.
class CheckpointStore {
 public:
  CheckpointStore(std::filesystem::path dir, bool resume)
      : dir_(std::move(dir)), resume_(resume) {
    std::filesystem::create_directories(dir_);
  }

  template <typename TrainFn>
  RegressorParams get_or_train(const nlohmann::json& key, TrainFn&& train_fn) {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(key.dump())));
    const std::filesystem::path path = dir_ / (std::string(hex) + ".icrg");
    if (resume_ && std::filesystem::exists(path)) {
      return load_checkpoint(path);
    }
    RegressorParams params = train_fn();
    save_checkpoint(params, path);
    return params;
  }

 private:
  std::filesystem::path dir_;
  bool resume_;
};

inline TrainConfig with_seed(TrainConfig config, std::uint64_t seed) {
  config.seed = seed;
  // A scratch run on a stream smaller than one batch still has to train.
  return config;
}

inline TrainConfig clamp_batch(TrainConfig config, std::size_t n) {
  config.batch_size = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), std::max<std::size_t>(n, 1)));
  return config;
}

inline std::string format_k_label(double k) {
  if (k == 0.0) return "0";
  if (k < 1.0) {
    const double denom = 1.0 / k;
    if (std::abs(denom - std::round(denom)) < 1e-9) {
      return "BL/" + std::to_string(static_cast<long long>(std::round(denom)));
    }
    return format_double(k) + "*BL";
  }
  return format_double(k);
}

}  // namespace detail

/// Builds the dataset for one run seed: generated populations are re-seeded
/// per run, file-backed corpora are shared across runs.
inline Dataset dataset_for_seed(const ExperimentConfig& config, std::uint64_t run_seed) {
  if (config.dataset_files) {
    DatasetPaths paths{config.dataset_files->samples, config.dataset_files->scenes,
                       config.dataset_files->manifest};
    return load_dataset(paths);
  }
  PopulationSpec spec = config.population;
  spec.seed = mix_seed(spec.seed, "dataset", run_seed);
  return generate_population(spec);
}

namespace detail {

inline ArchitectureDescriptor descriptor_for(const ExperimentConfig& config) {
  ArchitectureDescriptor d;
  d.dropout_p = config.dropout_p;
  return d;
}

inline nlohmann::json cell_key(const ExperimentConfig& config, std::uint64_t seed,
                               const std::string& purpose, const nlohmann::json& detail_fields) {
  nlohmann::json key;
  key["kind"] = to_string(config.kind);
  if (config.dataset_files) {
    key["dataset"] = {{"samples", config.dataset_files->samples}};
  } else {
    key["dataset"] = population_to_json(config.population);
  }
  key["dropout_p"] = config.dropout_p;
  key["seed"] = seed;
  key["purpose"] = purpose;
  key["detail"] = detail_fields;
  return key;
}

inline void run_ablation(const ExperimentConfig& config, CheckpointStore& store,
                         ExperimentReport& report) {
  for (std::uint64_t seed : config.seeds) {
    const Dataset dataset = dataset_for_seed(config, seed);
    const DatasetSplit split = split_dataset(dataset.samples, config.val_fraction,
                                             config.test_fraction, config.balance_traits,
                                             mix_seed(seed, "split"));
    for (std::size_t mi = 0; mi < config.masks.size(); ++mi) {
      const ModalityMask& mask = config.masks[mi];
      const TrainingArrays arrays = to_arrays(split.train, &mask);
      const TrainConfig train_cfg =
          with_seed(config.base_train, mix_seed(seed, "train", static_cast<std::uint64_t>(mi)));
      const nlohmann::json key = cell_key(config, seed, "ablation",
                                          {{"mask", mask.label()},
                                           {"train", train_config_to_json(train_cfg)}});
      const RegressorParams params = store.get_or_train(key, [&] {
        return train(arrays.features, arrays.targets, train_cfg, descriptor_for(config));
      });
      ConditionCell cell;
      cell.condition = "mask=" + mask.label();
      cell.attrs = {{"mask", mask.label()}};
      cell.seed = seed;
      cell.eval = evaluate(masked_samples(split.test, mask), params);
      report.cells.push_back(std::move(cell));
    }
  }
}

inline void run_k_sweep(const ExperimentConfig& config, CheckpointStore& store,
                        ExperimentReport& report) {
  const std::vector<double> k_values =
      config.kind == ExperimentKind::kTraitAdapt ? std::vector<double>{config.k_default}
                                                 : config.k_values;
  for (std::uint64_t seed : config.seeds) {
    const Dataset dataset = dataset_for_seed(config, seed);
    const DatasetSplit split = split_dataset(dataset.samples, config.val_fraction,
                                             config.test_fraction, config.balance_traits,
                                             mix_seed(seed, "split"));
    for (std::size_t ti = 0; ti < config.traits.size(); ++ti) {
      const TraitSubset trait = config.traits[ti];
      const TraitPredicate predicate = predicate_for(trait);
      std::vector<ReferencingSample> trait_train;
      std::vector<ReferencingSample> complement_train;
      for (const ReferencingSample& s : split.train) {
        (predicate.matches(s) ? trait_train : complement_train).push_back(s);
      }
      const std::vector<ReferencingSample> trait_test = filter_by_trait(split.test, predicate);
      if (trait_train.empty() || complement_train.empty() || trait_test.empty()) {
        throw std::runtime_error(std::string("trait subset '") + to_string(trait) +
                                 "' is empty in train or test split (seed " +
                                 std::to_string(seed) + ")");
      }
      std::vector<ReferencingSample> complement_test;
      for (const ReferencingSample& s : split.test) {
        if (!predicate.matches(s)) complement_test.push_back(s);
      }

      const TrainingArrays base_arrays = to_arrays(complement_train);
      const std::size_t base_length = base_arrays.features.size();
      const TrainConfig base_cfg = with_seed(
          config.base_train, mix_seed(seed, "base", static_cast<std::uint64_t>(ti)));
      const nlohmann::json base_key =
          cell_key(config, seed, "sweep_base",
                   {{"trait", to_string(trait)}, {"train", train_config_to_json(base_cfg)}});
      const RegressorParams base_params = store.get_or_train(base_key, [&] {
        return train(base_arrays.features, base_arrays.targets, base_cfg, descriptor_for(config));
      });

      const TrainingArrays stream_arrays = to_arrays(trait_train);
      const std::vector<RegressionBatch> stream =
          to_stream(stream_arrays, config.stream_batch_size);
      const TrainConfig adapt_cfg = with_seed(
          config.adapt_train_or_default(), mix_seed(seed, "adapt", static_cast<std::uint64_t>(ti)));

      const auto make_cell = [&](const std::string& approach, const std::string& k_label,
                                 const RegressorParams& params) {
        ConditionCell cell;
        cell.condition = std::string("trait=") + to_string(trait) + "|K=" + k_label;
        cell.attrs = {{"trait", to_string(trait)}, {"K", k_label}, {"approach", approach}};
        cell.seed = seed;
        cell.eval = evaluate(trait_test, params);
        if (!complement_test.empty()) {
          cell.extra["complement_test"] = evaluate(complement_test, params);
        }
        report.cells.push_back(std::move(cell));
      };

      make_cell("base_only", "base_only", base_params);

      const nlohmann::json transfer_key =
          cell_key(config, seed, "sweep_transfer",
                   {{"trait", to_string(trait)}, {"train", train_config_to_json(adapt_cfg)}});
      const RegressorParams transfer_params = store.get_or_train(
          transfer_key, [&] { return transfer_baseline(stream, base_params, adapt_cfg); });
      make_cell("transfer", "transfer", transfer_params);

      for (double k : k_values) {
        const std::size_t memory = resolve_memory_size(k, base_length);
        const ExemplarSet exemplars =
            select_exemplars(base_arrays.features, base_arrays.targets, base_params, memory,
                             base_arrays.ids);
        const nlohmann::json adapt_key =
            cell_key(config, seed, "sweep_adapt",
                     {{"trait", to_string(trait)},
                      {"k", k},
                      {"train", train_config_to_json(adapt_cfg)}});
        const RegressorParams adapted = store.get_or_train(
            adapt_key, [&] { return adapt(exemplars, stream, &base_params, adapt_cfg); });
        make_cell("icregress", format_k_label(k), adapted);
      }
    }
  }
}

inline void run_personalization(const ExperimentConfig& config, CheckpointStore& store,
                                ExperimentReport& report) {
  for (std::uint64_t seed : config.seeds) {
    const Dataset dataset = dataset_for_seed(config, seed);
    const DatasetSplit split = split_dataset(dataset.samples, config.val_fraction,
                                             config.test_fraction, config.balance_traits,
                                             mix_seed(seed, "split"));
    const TrainingArrays base_arrays = to_arrays(split.train);
    const std::size_t base_length = base_arrays.features.size();
    const TrainConfig base_cfg = with_seed(config.base_train, mix_seed(seed, "base"));
    const nlohmann::json base_key =
        cell_key(config, seed, "personalization_base",
                 {{"train", train_config_to_json(base_cfg)}});
    const RegressorParams base_params = store.get_or_train(base_key, [&] {
      return train(base_arrays.features, base_arrays.targets, base_cfg, descriptor_for(config));
    });
    const std::size_t memory = resolve_memory_size(config.k_default, base_length);
    const ExemplarSet exemplars = select_exemplars(base_arrays.features, base_arrays.targets,
                                                   base_params, memory, base_arrays.ids);

    // Each test participant's samples split into an adaptation half (earlier
    // segments) and an evaluation half.
    std::map<std::string, std::vector<ReferencingSample>> by_participant;
    for (const ReferencingSample& s : split.test) by_participant[s.participant_id].push_back(s);
    std::map<std::string, std::vector<ReferencingSample>> adapt_half;
    std::map<std::string, std::vector<ReferencingSample>> eval_half;
    for (auto& [pid, samples] : by_participant) {
      std::sort(samples.begin(), samples.end(),
                [](const ReferencingSample& a, const ReferencingSample& b) {
                  return a.segment_id < b.segment_id;
                });
      const std::size_t half = samples.size() / 2;
      adapt_half[pid].assign(samples.begin(), samples.begin() + half);
      eval_half[pid].assign(samples.begin() + half, samples.end());
    }

    std::size_t pi = 0;
    for (const auto& [pid, _] : by_participant) {
      const std::vector<ReferencingSample>& stream_samples = adapt_half[pid];
      const std::vector<ReferencingSample>& own_eval = eval_half[pid];
      if (stream_samples.empty() || own_eval.empty()) {
        throw std::runtime_error("participant " + pid + " has too few segments to halve");
      }
      std::vector<ReferencingSample> other_eval;
      for (const auto& [other_pid, half] : eval_half) {
        if (other_pid != pid) other_eval.insert(other_eval.end(), half.begin(), half.end());
      }
      const TrainingArrays stream_arrays = to_arrays(stream_samples);
      const std::vector<RegressionBatch> stream =
          to_stream(stream_arrays, config.stream_batch_size);
      const TrainConfig adapt_cfg = with_seed(
          config.adapt_train_or_default(), mix_seed(seed, "adapt", static_cast<std::uint64_t>(pi)));

      const auto make_cell = [&](const std::string& approach, const RegressorParams& params) {
        ConditionCell cell;
        cell.condition = "approach=" + approach;
        cell.attrs = {{"approach", approach}, {"participant", pid}};
        cell.seed = seed;
        cell.eval = evaluate(own_eval, params);
        if (!other_eval.empty()) cell.extra["other_participants"] = evaluate(other_eval, params);
        report.cells.push_back(std::move(cell));
      };

      make_cell("base_only", base_params);

      const nlohmann::json transfer_key =
          cell_key(config, seed, "personalization_transfer",
                   {{"participant", pid}, {"train", train_config_to_json(adapt_cfg)}});
      make_cell("transfer", store.get_or_train(transfer_key, [&] {
                  return transfer_baseline(stream, base_params, adapt_cfg);
                }));

      const TrainConfig scratch_cfg = clamp_batch(adapt_cfg, stream_arrays.features.size());
      const nlohmann::json scratch_key =
          cell_key(config, seed, "personalization_scratch",
                   {{"participant", pid}, {"train", train_config_to_json(scratch_cfg)}});
      make_cell("scratch", store.get_or_train(scratch_key, [&] {
                  return train(stream_arrays.features, stream_arrays.targets, scratch_cfg,
                               descriptor_for(config));
                }));

      const nlohmann::json adapt_key =
          cell_key(config, seed, "personalization_icregress",
                   {{"participant", pid},
                    {"k", config.k_default},
                    {"train", train_config_to_json(adapt_cfg)}});
      make_cell("icregress", store.get_or_train(adapt_key, [&] {
                  return adapt(exemplars, stream, &base_params, adapt_cfg);
                }));
      ++pi;
    }
  }
}

inline void run_forgetting(const ExperimentConfig& config, CheckpointStore& store,
                           ExperimentReport& report) {
  for (std::uint64_t seed : config.seeds) {
    const Dataset old_dataset = dataset_for_seed(config, seed);
    const DatasetSplit old_split = split_dataset(old_dataset.samples, config.val_fraction,
                                                 config.test_fraction, config.balance_traits,
                                                 mix_seed(seed, "split_old"));
    PopulationSpec new_spec = *config.new_population;
    new_spec.seed = mix_seed(new_spec.seed, "dataset_new", seed);
    const Dataset new_dataset = generate_population(new_spec);
    const DatasetSplit new_split = split_dataset(new_dataset.samples, config.val_fraction,
                                                 config.test_fraction, config.balance_traits,
                                                 mix_seed(seed, "split_new"));

    const TrainingArrays base_arrays = to_arrays(old_split.train);
    const TrainConfig base_cfg = with_seed(config.base_train, mix_seed(seed, "base"));
    const nlohmann::json base_key = cell_key(config, seed, "forgetting_base",
                                             {{"train", train_config_to_json(base_cfg)}});
    const RegressorParams base_params = store.get_or_train(base_key, [&] {
      return train(base_arrays.features, base_arrays.targets, base_cfg, descriptor_for(config));
    });
    const std::size_t memory = resolve_memory_size(config.k_default, base_arrays.features.size());
    const ExemplarSet exemplars = select_exemplars(base_arrays.features, base_arrays.targets,
                                                   base_params, memory, base_arrays.ids);

    const TrainingArrays stream_arrays = to_arrays(new_split.train);
    const std::vector<RegressionBatch> stream = to_stream(stream_arrays, config.stream_batch_size);
    const TrainConfig adapt_cfg =
        with_seed(config.adapt_train_or_default(), mix_seed(seed, "adapt"));

    const auto make_cell = [&](const std::string& approach, const RegressorParams& params) {
      ConditionCell cell;
      cell.condition = "approach=" + approach;
      cell.attrs = {{"approach", approach}};
      cell.seed = seed;
      cell.eval = evaluate(new_split.test, params);  // new population held-out
      cell.extra["old_population"] = evaluate(old_split.test, params);
      cell.extra["new_population"] = cell.eval;
      report.cells.push_back(std::move(cell));
    };

    make_cell("base_only", base_params);

    const nlohmann::json transfer_key = cell_key(config, seed, "forgetting_transfer",
                                                 {{"train", train_config_to_json(adapt_cfg)}});
    make_cell("transfer", store.get_or_train(transfer_key, [&] {
                return transfer_baseline(stream, base_params, adapt_cfg);
              }));

    const TrainConfig scratch_cfg = clamp_batch(adapt_cfg, stream_arrays.features.size());
    const nlohmann::json scratch_key = cell_key(config, seed, "forgetting_scratch",
                                                {{"train", train_config_to_json(scratch_cfg)}});
    make_cell("scratch", store.get_or_train(scratch_key, [&] {
                return train(stream_arrays.features, stream_arrays.targets, scratch_cfg,
                             descriptor_for(config));
              }));

    const nlohmann::json adapt_key =
        cell_key(config, seed, "forgetting_icregress",
                 {{"k", config.k_default}, {"train", train_config_to_json(adapt_cfg)}});
    make_cell("icregress", store.get_or_train(adapt_key, [&] {
                return adapt(exemplars, stream, &base_params, adapt_cfg);
              }));
  }
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["config"] = report.config_echo;
  nlohmann::json cells = nlohmann::json::array();
  for (const ConditionCell& cell : report.cells) {
    nlohmann::json cj;
    cj["condition"] = cell.condition;
    cj["attrs"] = cell.attrs;
    cj["seed"] = cell.seed;
    cj["eval"] = eval_result_to_json(cell.eval);
    nlohmann::json extra = nlohmann::json::object();
    for (const auto& [key, eval] : cell.extra) extra[key] = eval_result_to_json(eval);
    cj["extra"] = extra;
    cells.push_back(std::move(cj));
  }
  j["cells"] = cells;
  nlohmann::json summary = nlohmann::json::array();
  for (const SummaryRow& row : report.summary) {
    summary.push_back({{"condition", row.condition},
                       {"metric", row.metric},
                       {"n", row.n},
                       {"median", row.median},
                       {"mean", row.mean},
                       {"ci_lo", row.ci_lo},
                       {"ci_hi", row.ci_hi}});
  }
  j["summary"] = summary;
  j["plots"] = report.plot_csv_paths;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport report;
  report.config_echo = j.at("config");
  for (const auto& cj : j.at("cells")) {
    ConditionCell cell;
    cell.condition = cj.at("condition").get<std::string>();
    cell.attrs = cj.at("attrs").get<std::map<std::string, std::string>>();
    cell.seed = cj.at("seed").get<std::uint64_t>();
    cell.eval = eval_result_from_json(cj.at("eval"));
    for (const auto& [key, ej] : cj.at("extra").items()) {
      cell.extra[key] = eval_result_from_json(ej);
    }
    report.cells.push_back(std::move(cell));
  }
  for (const auto& sj : j.at("summary")) {
    SummaryRow row;
    row.condition = sj.at("condition").get<std::string>();
    row.metric = sj.at("metric").get<std::string>();
    row.n = sj.at("n").get<int>();
    row.median = sj.at("median").get<double>();
    row.mean = sj.at("mean").get<double>();
    row.ci_lo = sj.at("ci_lo").get<double>();
    row.ci_hi = sj.at("ci_hi").get<double>();
    report.summary.push_back(std::move(row));
  }
  for (const auto& p : j.at("plots")) report.plot_csv_paths.push_back(p.get<std::string>());
  return report;
}

/// Writes the figure-shaped tidy CSVs for a report into <dir>/plots and
/// returns their paths relative to <dir>. Re-emitting the same report yields
/// byte-identical files.
inline std::vector<std::string> emit_plotdata(const ExperimentReport& report,
                                              const std::filesystem::path& dir) {
  if (report.cells.empty()) throw std::invalid_argument("incomplete report: no cells");
  const ExperimentKind kind =
      experiment_kind_from_string(report.config_echo.at("kind").get<std::string>());
  std::filesystem::create_directories(dir / "plots");
  std::vector<std::string> paths;

  const auto open_csv = [&](const std::string& name, const std::string& header,
                            std::ofstream& out) {
    const std::filesystem::path path = dir / "plots" / name;
    out.open(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header << "\n";
    paths.push_back("plots/" + name);
  };

  switch (kind) {
    case ExperimentKind::kAblation: {
      std::ofstream out;
      open_csv("ablation.csv", "condition,metric,seed,value", out);
      for (const ConditionCell& cell : report.cells) {
        for (const std::string& metric : detail::core_metrics()) {
          out << cell.attrs.at("mask") << "," << metric << "," << cell.seed << ","
              << format_double(detail::metric_value(cell.eval, metric)) << "\n";
        }
      }
      break;
    }
    case ExperimentKind::kKSweep:
    case ExperimentKind::kTraitAdapt: {
      std::ofstream out;
      open_csv("k_sweep.csv", "trait,K,seed,segobj_acc,mae", out);
      for (const ConditionCell& cell : report.cells) {
        out << cell.attrs.at("trait") << "," << cell.attrs.at("K") << "," << cell.seed << ","
            << format_double(cell.eval.segobj_accuracy_pct) << ","
            << format_double(cell.eval.mae_deg) << "\n";
      }
      break;
    }
    case ExperimentKind::kPersonalization: {
      std::ofstream out;
      open_csv("personalization.csv", "approach,eval_set,seed,participant,segobj_acc,mae", out);
      for (const ConditionCell& cell : report.cells) {
        out << cell.attrs.at("approach") << ",adapted," << cell.seed << ","
            << cell.attrs.at("participant") << "," << format_double(cell.eval.segobj_accuracy_pct)
            << "," << format_double(cell.eval.mae_deg) << "\n";
        const auto other = cell.extra.find("other_participants");
        if (other != cell.extra.end()) {
          out << cell.attrs.at("approach") << ",other," << cell.seed << ","
              << cell.attrs.at("participant") << ","
              << format_double(other->second.segobj_accuracy_pct) << ","
              << format_double(other->second.mae_deg) << "\n";
        }
      }
      break;
    }
    case ExperimentKind::kForgetting: {
      std::ofstream out;
      open_csv("forgetting.csv", "approach,population,seed,mae,segobj_acc", out);
      for (const ConditionCell& cell : report.cells) {
        const EvalResult& old_eval = cell.extra.at("old_population");
        const EvalResult& new_eval = cell.extra.at("new_population");
        out << cell.attrs.at("approach") << ",old," << cell.seed << ","
            << format_double(old_eval.mae_deg) << ","
            << format_double(old_eval.segobj_accuracy_pct) << "\n";
        out << cell.attrs.at("approach") << ",new," << cell.seed << ","
            << format_double(new_eval.mae_deg) << ","
            << format_double(new_eval.segobj_accuracy_pct) << "\n";
      }
      break;
    }
  }
  return paths;
}

/// Runs the configured experiment, persists report.json, plot CSVs, and the
/// per-cell checkpoints under the output directory, and returns the report.
inline ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::filesystem::path out_dir = config.output_dir;
  std::filesystem::create_directories(out_dir);
  detail::CheckpointStore store(out_dir / "checkpoints", config.resume);

  ExperimentReport report;
  report.config_echo = experiment_config_to_json(config);
  switch (config.kind) {
    case ExperimentKind::kAblation: detail::run_ablation(config, store, report); break;
    case ExperimentKind::kKSweep:
    case ExperimentKind::kTraitAdapt: detail::run_k_sweep(config, store, report); break;
    case ExperimentKind::kPersonalization:
      detail::run_personalization(config, store, report);
      break;
    case ExperimentKind::kForgetting: detail::run_forgetting(config, store, report); break;
  }
  report.summary = detail::summarize_cells(report.cells);
  report.plot_csv_paths = emit_plotdata(report, out_dir);

  const std::filesystem::path report_path = out_dir / "report.json";
  const std::filesystem::path tmp = report_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << report_to_json(report).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, report_path);
  return report;
}

}  // namespace icregress
