// Synthetic multimodal data generation, onset detection, feature extraction,
// and participant-level dataset splitting.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "icregress/geometry.hpp"
#include "icregress/hashing.hpp"

namespace icregress {

enum class Handedness { kLeft, kRight };

inline const char* to_string(Handedness h) {
  return h == Handedness::kLeft ? "left" : "right";
}

enum class ExperienceClass { kAmateur, kMid, kExpert };

/// Amateur: below four years of driving; expert: above six. The mid range
/// belongs to neither class.
inline ExperienceClass experience_class(double years) {
  if (years < 4.0) return ExperienceClass::kAmateur;
  if (years > 6.0) return ExperienceClass::kExpert;
  return ExperienceClass::kMid;
}

inline const char* to_string(ExperienceClass c) {
  switch (c) {
    case ExperienceClass::kAmateur: return "amateur";
    case ExperienceClass::kMid: return "mid";
    case ExperienceClass::kExpert: return "expert";
  }
  return "?";
}

/// Behavioral parameters of one synthetic driver. The numeric noise model is
/// a declared generator construct, not a claim about humans.
struct DriverProfile {
  std::string participant_id;
  Handedness handedness = Handedness::kRight;
  double experience_years = 5.0;
  double pointing_bias_deg = 0.0;  // magnitude; applied toward the dominant-hand side
  double pointing_noise_std_deg = 0.0;
  double gaze_noise_std_deg = 0.0;
  double head_attenuation = 0.35;  // head rotation as a fraction of gaze rotation
  double glance_rate = 2.0;        // glances per 4-second window
  bool speech_available = true;
  double onset_jitter_std_s = 0.0;

  void validate() const {
    if (pointing_noise_std_deg < 0 || gaze_noise_std_deg < 0 || onset_jitter_std_s < 0) {
      throw std::invalid_argument("profile '" + participant_id + "': negative noise std");
    }
    if (head_attenuation < 0.0 || head_attenuation > 1.0) {
      throw std::invalid_argument("profile '" + participant_id + "': head_attenuation outside [0,1]");
    }
    if (experience_years < 0.0) {
      throw std::invalid_argument("profile '" + participant_id + "': negative experience");
    }
  }
};

/// Unit direction in the driver frame; angle 0 points along the heading.
struct Vec2 {
  double x = 0.0;
  double z = 1.0;

  static Vec2 from_angle_deg(double deg) {
    const double r = deg_to_rad(deg);
    return {std::sin(r), std::cos(r)};
  }
  double angle_deg() const { return rad_to_deg(std::atan2(x, z)); }
  double norm() const { return std::hypot(x, z); }
};

/// One 20 Hz sensor frame.
struct ModalityFrame {
  double t = 0.0;
  Vec2 pointing;
  Vec2 gaze;
  Vec2 head;
  bool speech_flag = false;
};

enum class Modality { kPointing, kGazeHead, kGaze, kHead };

struct ModalityMask {
  bool pointing = true;
  bool gaze_head = true;
  bool gaze = true;
  bool head = true;

  static ModalityMask all() { return {}; }
  static ModalityMask none() { return {false, false, false, false}; }

  bool contains(Modality m) const {
    switch (m) {
      case Modality::kPointing: return pointing;
      case Modality::kGazeHead: return gaze_head;
      case Modality::kGaze: return gaze;
      case Modality::kHead: return head;
    }
    return false;
  }

  /// True when every channel enabled here is also enabled in `other`.
  bool subset_of(const ModalityMask& other) const {
    return (!pointing || other.pointing) && (!gaze_head || other.gaze_head) &&
           (!gaze || other.gaze) && (!head || other.head);
  }

  std::string label() const {
    std::string s;
    const auto append = [&s](const char* part) {
      if (!s.empty()) s += "+";
      s += part;
    };
    if (pointing) append("P");
    if (gaze_head) append("GH");
    if (gaze) append("G");
    if (head) append("H");
    return s.empty() ? "none" : s;
  }
};

/// 8 channels x 20 timesteps, channel order
/// [Pnt.x, Pnt.z, GazeHead.x, GazeHead.z, Gaze.x, Gaze.z, Head.x, Head.z].
struct FeatureWindow {
  static constexpr int kChannels = 8;
  static constexpr int kTimesteps = 20;
  static constexpr int kValues = kChannels * kTimesteps;

  std::array<double, kValues> values{};
  double onset_t = 0.0;

  double& at(int channel, int timestep) { return values[channel * kTimesteps + timestep]; }
  double at(int channel, int timestep) const { return values[channel * kTimesteps + timestep]; }
};

/// One referencing event ready for training/evaluation.
struct ReferencingSample {
  std::string participant_id;
  int segment_id = 0;
  FeatureWindow features;
  double truth_angle_deg = 0.0;
  std::shared_ptr<const Scene> scene;
  Handedness handedness = Handedness::kRight;
  double experience_years = 5.0;
  bool speech_available = true;
};

struct SceneSpec {
  int cluster_size = 8;  // 8 or 16
  std::vector<double> offsets = {20.0, 30.0, 40.0};
  int target_index = 0;
  std::uint64_t seed = 0;
};

/// Builds a valid scene: half the buildings per road side, sequential along
/// the road, lateral offsets drawn from the spec set. Deterministic per seed;
/// the layout does not depend on target_index.
inline Scene generate_scene(const SceneSpec& spec) {
  if (spec.cluster_size != 8 && spec.cluster_size != 16) {
    throw std::invalid_argument("cluster_size must be 8 or 16");
  }
  if (spec.target_index < 0 || spec.target_index >= spec.cluster_size) {
    throw std::invalid_argument("target_index out of range");
  }
  if (spec.offsets.empty()) throw std::invalid_argument("no lateral offsets given");

  std::mt19937_64 rng(splitmix64(spec.seed));
  std::uniform_real_distribution<double> width_dist(8.0, 16.0);
  std::uniform_real_distribution<double> depth_dist(8.0, 18.0);
  std::uniform_real_distribution<double> start_dist(3.0, 10.0);
  const bool dense = spec.cluster_size == 16;
  std::uniform_real_distribution<double> gap_dist(dense ? 0.5 : 4.0, dense ? 3.0 : 14.0);
  std::uniform_int_distribution<std::size_t> offset_pick(0, spec.offsets.size() - 1);

  constexpr int kMaxAttempts = 32;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Scene scene;
    scene.onset_pose = {0.0, 0.0, 0.0};
    const int per_side = spec.cluster_size / 2;
    int next_id = 0;
    for (RoadSide side : {RoadSide::kLeft, RoadSide::kRight}) {
      double cursor = start_dist(rng);
      for (int i = 0; i < per_side; ++i) {
        Building b;
        b.id = "b" + std::string(next_id < 10 ? "0" : "") + std::to_string(next_id);
        ++next_id;
        b.side = side;
        b.lateral_offset = spec.offsets[offset_pick(rng)];
        b.width = width_dist(rng);
        b.depth = depth_dist(rng);
        const double sign = side == RoadSide::kLeft ? -1.0 : 1.0;
        b.center_x = sign * (b.lateral_offset + b.width / 2.0);
        b.center_z = cursor + b.depth / 2.0;
        cursor += b.depth + gap_dist(rng);
        scene.buildings.push_back(b);
      }
    }
    scene.target_id = scene.buildings[static_cast<std::size_t>(spec.target_index)].id;
    try {
      scene.validate();
      return scene;
    } catch (const std::exception&) {
      continue;  // resample the layout
    }
  }
  throw std::runtime_error("infeasible scene spec: no valid layout after retries");
}

struct SegmentSynthesis {
  std::vector<ModalityFrame> frames;  // 20 Hz
  double true_onset = 0.0;
};

namespace detail {

/// AR(1) angular noise stream; stationary std equals `std_dev`. Temporal
/// correlation keeps frame-to-frame angular velocity realistic.
class Ar1Noise {
 public:
  Ar1Noise(double std_dev, double rho, std::mt19937_64& rng) : std_(std_dev), rho_(rho), rng_(&rng) {
    state_ = std_ * gauss_(*rng_);
  }
  double next() {
    state_ = rho_ * state_ + std_ * std::sqrt(1.0 - rho_ * rho_) * gauss_(*rng_);
    return state_;
  }

 private:
  double std_;
  double rho_;
  std::mt19937_64* rng_;
  double state_ = 0.0;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace detail

/// Synthesizes one 8-second referencing segment at 20 Hz. The pointing
/// direction ramps to the target angle around the onset and holds it exactly
/// on a plateau covering the onset frame; gaze alternates between the road
/// and target glances; the head tracks the glance target, attenuated.
inline SegmentSynthesis synthesize_segment(const DriverProfile& profile, const Scene& scene,
                                           std::uint64_t seed) {
  profile.validate();
  constexpr double kDt = 0.05;  // 20 Hz
  constexpr int kFrames = 160;  // 8 s
  constexpr double kOnset = 4.0;
  constexpr double kNoiseRho = 0.95;

  const double target_angle = ground_truth_angle(scene);
  const double bias =
      (profile.handedness == Handedness::kRight ? 1.0 : -1.0) * profile.pointing_bias_deg;

  std::mt19937_64 rng(splitmix64(seed));
  detail::Ar1Noise pointing_noise(profile.pointing_noise_std_deg, kNoiseRho, rng);
  detail::Ar1Noise gaze_noise(profile.gaze_noise_std_deg, kNoiseRho, rng);
  detail::Ar1Noise head_noise(profile.gaze_noise_std_deg, kNoiseRho, rng);

  // Glance schedule: one glance pinned over the onset, extras at random times.
  struct Span {
    double begin, end;
  };
  std::vector<Span> glances = {{kOnset - 0.3, kOnset + 0.5}};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double extra_rate = std::max(0.0, profile.glance_rate - 1.0);
  int extra = static_cast<int>(std::floor(extra_rate));
  if (unit(rng) < extra_rate - std::floor(extra_rate)) ++extra;
  for (int g = 0; g < extra; ++g) {
    const double begin = 0.5 + unit(rng) * 6.3;
    const double duration = 0.3 + unit(rng) * 0.4;
    glances.push_back({begin, begin + duration});
  }

  double speech_time = -1.0;
  if (profile.speech_available) {
    std::normal_distribution<double> jitter(0.0, 1.0);
    const double j =
        std::clamp(jitter(rng) * profile.onset_jitter_std_s, -0.5, 0.5);
    speech_time = kOnset + j;
  }
  const int speech_frame =
      profile.speech_available ? static_cast<int>(std::lround(speech_time / kDt)) : -1;

  SegmentSynthesis out;
  out.true_onset = kOnset;
  out.frames.resize(kFrames);
  for (int i = 0; i < kFrames; ++i) {
    const double t = i * kDt;
    ModalityFrame& f = out.frames[i];
    f.t = t;

    double envelope = 0.0;
    if (t < kOnset - 1.2) {
      envelope = 0.0;
    } else if (t < kOnset - 0.4) {
      envelope = detail::smoothstep((t - (kOnset - 1.2)) / 0.8);
    } else if (t <= kOnset + 1.2) {
      envelope = 1.0;
    } else if (t <= kOnset + 2.0) {
      envelope = 1.0 - detail::smoothstep((t - (kOnset + 1.2)) / 0.8);
    }
    const double jitter_scale = 0.2 + 0.8 * envelope;
    const double pointing_angle =
        envelope * (target_angle + bias) + jitter_scale * pointing_noise.next();

    bool glancing = false;
    for (const Span& s : glances) {
      if (t >= s.begin && t <= s.end) {
        glancing = true;
        break;
      }
    }
    const double gaze_base = glancing ? target_angle : 0.0;
    const double gaze_angle = gaze_base + gaze_noise.next();
    const double head_angle = profile.head_attenuation * gaze_base + head_noise.next();

    f.pointing = Vec2::from_angle_deg(pointing_angle);
    f.gaze = Vec2::from_angle_deg(gaze_angle);
    f.head = Vec2::from_angle_deg(head_angle);
    f.speech_flag = (i == speech_frame);
  }
  return out;
}

enum class OnsetMode { kSpeech, kGesture };

namespace detail {

/// Least-squares slope of the pointing angle over a +/-2 frame window, deg/s.
inline double smoothed_angular_velocity(const std::vector<double>& angles, int i, double dt) {
  double num = 0.0;
  double den = 0.0;
  for (int k = -2; k <= 2; ++k) {
    const int j = i + k;
    if (j < 0 || j >= static_cast<int>(angles.size())) continue;
    num += k * angles[j];
    den += static_cast<double>(k) * k;
  }
  return num / (den * dt);
}

}  // namespace detail

/// Speech mode: time of the first frame whose speech flag is set.
/// Gesture mode: once the pointing angle has deviated more than 10 degrees
/// from the heading, the first frame whose smoothed angular velocity falls
/// below 5 deg/s.
inline double detect_onset(const std::vector<ModalityFrame>& frames, OnsetMode mode) {
  if (frames.empty()) throw std::invalid_argument("no frames");
  if (mode == OnsetMode::kSpeech) {
    for (const ModalityFrame& f : frames) {
      if (f.speech_flag) return f.t;
    }
    throw std::runtime_error("no speech command");
  }
  std::vector<double> angles(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) angles[i] = frames[i].pointing.angle_deg();
  const double dt = frames.size() > 1 ? frames[1].t - frames[0].t : 0.05;
  bool armed = false;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!armed && std::abs(angles[i]) > 10.0) armed = true;
    if (armed &&
        std::abs(detail::smoothed_angular_velocity(angles, static_cast<int>(i), dt)) < 5.0) {
      return frames[i].t;
    }
  }
  throw std::runtime_error("no gesture onset");
}

/// Extracts the 4-second window around the onset at 5 Hz (every 4th frame),
/// first sample exactly at onset - 2 s. Channels outside the mask are
/// zero-filled; the window shape is always 8 x 20.
inline FeatureWindow extract_features(const std::vector<ModalityFrame>& frames, double onset,
                                      const ModalityMask& mask) {
  if (frames.size() < 2) throw std::invalid_argument("window out of range");
  const double dt = frames[1].t - frames[0].t;
  const double t0 = frames.front().t;
  const double start = onset - 2.0;
  const int i0 = static_cast<int>(std::lround((start - t0) / dt));
  const int last_needed = static_cast<int>(std::lround((onset + 2.0 - t0) / dt));
  constexpr int kStride = 4;  // 20 Hz -> 5 Hz
  if (i0 < 0 || last_needed >= static_cast<int>(frames.size()) ||
      std::abs(t0 + i0 * dt - start) > dt / 2.0) {
    throw std::invalid_argument("window out of range");
  }

  FeatureWindow window;
  window.onset_t = onset;
  for (int k = 0; k < FeatureWindow::kTimesteps; ++k) {
    const ModalityFrame& f = frames[static_cast<std::size_t>(i0 + k * kStride)];
    Vec2 gaze_head{0.0, 0.0};
    const double sx = f.gaze.x + f.head.x;
    const double sz = f.gaze.z + f.head.z;
    const double norm = std::hypot(sx, sz);
    if (norm > 1e-9) gaze_head = {sx / norm, sz / norm};
    if (mask.pointing) {
      window.at(0, k) = f.pointing.x;
      window.at(1, k) = f.pointing.z;
    }
    if (mask.gaze_head) {
      window.at(2, k) = gaze_head.x;
      window.at(3, k) = gaze_head.z;
    }
    if (mask.gaze) {
      window.at(4, k) = f.gaze.x;
      window.at(5, k) = f.gaze.z;
    }
    if (mask.head) {
      window.at(6, k) = f.head.x;
      window.at(7, k) = f.head.z;
    }
  }
  return window;
}

/// Zero-fills the channels outside `mask`; equivalent to re-extracting the
/// window under the sub-mask.
inline FeatureWindow apply_mask(const FeatureWindow& window, const ModalityMask& mask) {
  FeatureWindow out = window;
  const auto clear_pair = [&out](int first_channel) {
    for (int t = 0; t < FeatureWindow::kTimesteps; ++t) {
      out.at(first_channel, t) = 0.0;
      out.at(first_channel + 1, t) = 0.0;
    }
  };
  if (!mask.pointing) clear_pair(0);
  if (!mask.gaze_head) clear_pair(2);
  if (!mask.gaze) clear_pair(4);
  if (!mask.head) clear_pair(6);
  return out;
}

enum class SplitRole { kTrain, kValidation, kTest };

inline const char* to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain: return "train";
    case SplitRole::kValidation: return "validation";
    case SplitRole::kTest: return "test";
  }
  return "?";
}

struct DatasetSplit {
  std::vector<ReferencingSample> train;
  std::vector<ReferencingSample> validation;
  std::vector<ReferencingSample> test;
  std::map<std::string, SplitRole> manifest;  // participant -> role
};

/// Participant-level split; no participant contributes to more than one part.
/// With balance_traits, test participants are balanced across amateur/expert
/// classes as far as counts allow.
inline DatasetSplit split_dataset(const std::vector<ReferencingSample>& samples,
                                  double val_fraction, double test_fraction, bool balance_traits,
                                  std::uint64_t seed) {
  std::map<std::string, double> experience;
  for (const ReferencingSample& s : samples) experience[s.participant_id] = s.experience_years;
  std::vector<std::string> participants;
  participants.reserve(experience.size());
  for (const auto& [id, _] : experience) participants.push_back(id);

  const std::size_t n = participants.size();
  if (n < 10) throw std::invalid_argument("need at least 10 participants to split");
  const auto count_for = [n](double fraction) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  };
  const std::size_t n_test = count_for(test_fraction);
  const std::size_t n_val = count_for(val_fraction);
  if (test_fraction > 0.0 && n_test == 0) {
    throw std::invalid_argument("too few participants for requested test fraction");
  }
  if (val_fraction > 0.0 && n_val == 0) {
    throw std::invalid_argument("too few participants for requested validation fraction");
  }
  if (n_test + n_val >= n) {
    throw std::invalid_argument("too few participants for requested fractions");
  }

  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::string> shuffled = participants;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  std::vector<std::string> test_ids;
  if (balance_traits && n_test >= 2) {
    std::vector<std::string> amateurs;
    std::vector<std::string> experts;
    for (const std::string& id : shuffled) {
      switch (experience_class(experience[id])) {
        case ExperienceClass::kAmateur: amateurs.push_back(id); break;
        case ExperienceClass::kExpert: experts.push_back(id); break;
        case ExperienceClass::kMid: break;
      }
    }
    const std::size_t half = n_test / 2;
    for (std::size_t i = 0; i < std::min(half, amateurs.size()); ++i) test_ids.push_back(amateurs[i]);
    for (std::size_t i = 0; i < std::min(n_test - test_ids.size(), experts.size()); ++i) {
      test_ids.push_back(experts[i]);
    }
  }
  for (const std::string& id : shuffled) {
    if (test_ids.size() >= n_test) break;
    if (std::find(test_ids.begin(), test_ids.end(), id) == test_ids.end()) test_ids.push_back(id);
  }

  std::vector<std::string> val_ids;
  for (const std::string& id : shuffled) {
    if (val_ids.size() >= n_val) break;
    if (std::find(test_ids.begin(), test_ids.end(), id) == test_ids.end()) val_ids.push_back(id);
  }

  DatasetSplit split;
  for (const std::string& id : participants) {
    SplitRole role = SplitRole::kTrain;
    if (std::find(test_ids.begin(), test_ids.end(), id) != test_ids.end()) {
      role = SplitRole::kTest;
    } else if (std::find(val_ids.begin(), val_ids.end(), id) != val_ids.end()) {
      role = SplitRole::kValidation;
    }
    split.manifest[id] = role;
  }
  for (const ReferencingSample& s : samples) {
    switch (split.manifest.at(s.participant_id)) {
      case SplitRole::kTrain: split.train.push_back(s); break;
      case SplitRole::kValidation: split.validation.push_back(s); break;
      case SplitRole::kTest: split.test.push_back(s); break;
    }
  }
  return split;
}

struct TraitPredicate {
  std::optional<Handedness> handedness;
  std::optional<ExperienceClass> experience;
  std::optional<bool> speech_available;

  bool matches(const ReferencingSample& s) const {
    if (handedness && s.handedness != *handedness) return false;
    if (experience && experience_class(s.experience_years) != *experience) return false;
    if (speech_available && s.speech_available != *speech_available) return false;
    return true;
  }
};

inline std::vector<ReferencingSample> filter_by_trait(const std::vector<ReferencingSample>& samples,
                                                      const TraitPredicate& predicate) {
  std::vector<ReferencingSample> out;
  for (const ReferencingSample& s : samples) {
    if (predicate.matches(s)) out.push_back(s);
  }
  return out;
}

/// Knobs for sampling a synthetic participant population. Trait effects
/// (bias toward the dominant hand, noise multiplier for amateurs, attenuated
/// head motion) are declared generator parameters.
struct PopulationSpec {
  int participants = 56;
  int segments_per_participant = 96;
  std::vector<int> cluster_sizes = {8, 16};
  std::vector<double> offsets = {20.0, 30.0, 40.0};

  double left_handed_fraction = 0.3;
  double speech_available_fraction = 0.8;
  double amateur_fraction = 1.0 / 3.0;
  double expert_fraction = 1.0 / 3.0;

  double expert_pointing_noise_deg = 1.5;
  double amateur_noise_multiplier = 2.0;
  double handedness_bias_deg = 2.0;     // mean magnitude toward the dominant hand
  double handedness_bias_std_deg = 0.5;
  double personal_bias_std_deg = 0.0;   // per-driver idiosyncratic bias
  double population_bias_shift_deg = 0.0;  // population-wide drift
  double gaze_noise_std_deg = 2.5;
  double head_attenuation_min = 0.2;
  double head_attenuation_max = 0.5;
  double glance_rate = 2.0;
  double onset_jitter_std_s = 0.1;

  bool zero_noise = false;  // noiseless corpus: exact signals, speech always on
  ModalityMask mask = ModalityMask::all();
  std::uint64_t seed = 0;
  std::string id_prefix = "p";
};

struct Dataset {
  std::vector<ReferencingSample> samples;
  std::map<std::string, DriverProfile> manifest;  // participant -> profile
};

/// Draws the profile of participant `index`; independent of the other
/// participants, so generation parallelizes per participant.
inline DriverProfile sample_profile(const PopulationSpec& spec, int index) {
  std::mt19937_64 rng(mix_seed(spec.seed, "profile", static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  DriverProfile p;
  {
    std::string num = std::to_string(index);
    while (num.size() < 3) num.insert(num.begin(), '0');
    p.participant_id = spec.id_prefix + num;
  }
  p.handedness = unit(rng) < spec.left_handed_fraction ? Handedness::kLeft : Handedness::kRight;
  const double u = unit(rng);
  if (u < spec.amateur_fraction) {
    p.experience_years = 0.5 + unit(rng) * 3.0;  // < 4
  } else if (u < spec.amateur_fraction + spec.expert_fraction) {
    p.experience_years = 6.5 + unit(rng) * 5.5;  // > 6
  } else {
    p.experience_years = 4.0 + unit(rng) * 2.0;  // mid range
  }
  p.speech_available = unit(rng) < spec.speech_available_fraction;

  if (spec.zero_noise) {
    p.pointing_bias_deg = 0.0;
    p.pointing_noise_std_deg = 0.0;
    p.gaze_noise_std_deg = 0.0;
    p.head_attenuation = 0.35;
    p.glance_rate = spec.glance_rate;
    p.speech_available = true;
    p.onset_jitter_std_s = 0.0;
    return p;
  }

  const bool amateur = experience_class(p.experience_years) == ExperienceClass::kAmateur;
  const double noise_mult = amateur ? spec.amateur_noise_multiplier : 1.0;
  p.pointing_noise_std_deg = spec.expert_pointing_noise_deg * noise_mult;
  p.pointing_bias_deg = std::abs(spec.handedness_bias_deg + gauss(rng) * spec.handedness_bias_std_deg);
  // Idiosyncratic and drift components are folded into the signed magnitude;
  // the sign convention stays "toward the dominant hand".
  const double hand_sign = p.handedness == Handedness::kRight ? 1.0 : -1.0;
  const double extra = gauss(rng) * spec.personal_bias_std_deg + spec.population_bias_shift_deg;
  p.pointing_bias_deg += hand_sign * extra;
  p.gaze_noise_std_deg = spec.gaze_noise_std_deg * noise_mult;
  p.head_attenuation = spec.head_attenuation_min +
                       unit(rng) * (spec.head_attenuation_max - spec.head_attenuation_min);
  p.glance_rate = spec.glance_rate;
  p.onset_jitter_std_s = spec.onset_jitter_std_s;
  return p;
}

namespace detail {

/// Picks a target whose centroid angle sits comfortably inside one of its
/// visible intervals (the driver must be able to see what they reference).
inline std::string pick_visible_target(const Scene& scene, std::mt19937_64& rng,
                                       double margin_deg = 1.2) {
  const SceneVisibility visibility(scene);
  std::vector<std::size_t> candidates;
  double best_depth = -1.0;
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < scene.buildings.size(); ++i) {
    const Building& b = scene.buildings[i];
    const double centroid = signed_angle(scene.onset_pose, b.center_x, b.center_z);
    for (const AngularInterval& iv : visibility.intervals_of(i)) {
      if (!iv.contains(centroid)) continue;
      const double depth = std::min(centroid - iv.lo, iv.hi - centroid);
      if (depth >= margin_deg) candidates.push_back(i);
      if (depth > best_depth) {
        best_depth = depth;
        deepest = i;
      }
      break;
    }
  }
  if (candidates.empty()) return scene.buildings[deepest].id;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return scene.buildings[candidates[pick(rng)]].id;
}

}  // namespace detail

/// Generates the full synthetic corpus: every participant contributes
/// `segments_per_participant` referencing samples with their own scenes.
/// Onsets come from the speech trigger when the profile has one, otherwise
/// from gesture detection; segments whose gesture onset cannot be detected
/// are regenerated with a derived seed.
inline Dataset generate_population(const PopulationSpec& spec) {
  if (spec.participants < 1 || spec.segments_per_participant < 1) {
    throw std::invalid_argument("population spec needs at least one participant and segment");
  }
  Dataset dataset;
  for (int pi = 0; pi < spec.participants; ++pi) {
    const DriverProfile profile = sample_profile(spec, pi);
    dataset.manifest[profile.participant_id] = profile;
    for (int si = 0; si < spec.segments_per_participant; ++si) {
      constexpr int kMaxAttempts = 20;
      bool done = false;
      for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
        const std::uint64_t base = mix_seed(spec.seed, "segment", static_cast<std::uint64_t>(pi),
                                            static_cast<std::uint64_t>(si),
                                            static_cast<std::uint64_t>(attempt));
        std::mt19937_64 rng(base);
        SceneSpec scene_spec;
        scene_spec.cluster_size =
            spec.cluster_sizes[rng() % spec.cluster_sizes.size()];
        scene_spec.offsets = spec.offsets;
        scene_spec.target_index = 0;
        scene_spec.seed = mix_seed(base, "scene");
        Scene scene = generate_scene(scene_spec);
        scene.target_id = detail::pick_visible_target(scene, rng);

        const SegmentSynthesis segment =
            synthesize_segment(profile, scene, mix_seed(base, "frames"));
        double onset = 0.0;
        try {
          onset = detect_onset(segment.frames,
                               profile.speech_available ? OnsetMode::kSpeech : OnsetMode::kGesture);
        } catch (const std::runtime_error&) {
          continue;  // e.g. a near-center target never deviates 10 degrees
        }

        ReferencingSample sample;
        sample.participant_id = profile.participant_id;
        sample.segment_id = si;
        sample.scene = std::make_shared<Scene>(std::move(scene));
        sample.features = extract_features(segment.frames, onset, spec.mask);
        sample.truth_angle_deg = ground_truth_angle(*sample.scene);
        sample.handedness = profile.handedness;
        sample.experience_years = profile.experience_years;
        sample.speech_available = profile.speech_available;
        dataset.samples.push_back(std::move(sample));
        done = true;
      }
      if (!done) {
        throw std::runtime_error("failed to synthesize segment for participant " +
                                 profile.participant_id);
      }
    }
  }
  return dataset;
}

}  // namespace icregress
