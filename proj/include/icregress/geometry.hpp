// 2D horizontal scene model: driver-relative signed angles, building
// silhouettes, occlusion-aware visible intervals, and per-metric chance
// levels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace icregress {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Normalizes an angle in degrees to (-180, 180].
inline double normalize_signed_deg(double deg) {
  double a = std::fmod(deg, 360.0);
  if (a <= -180.0) {
    a += 360.0;
  } else if (a > 180.0) {
    a -= 360.0;
  }
  return a;
}

/// Driver reference frame. Heading 0 points along +z; positive headings turn
/// toward +x (the driver's right).
struct Pose2D {
  double x = 0.0;
  double z = 0.0;
  double heading_deg = 0.0;
};

enum class RoadSide { kLeft, kRight };

inline const char* to_string(RoadSide side) {
  return side == RoadSide::kLeft ? "left" : "right";
}

/// Axis-aligned rectangular footprint beside the road.
struct Building {
  std::string id;
  double center_x = 0.0;
  double center_z = 0.0;
  double width = 0.0;  // extent along x
  double depth = 0.0;  // extent along z
  RoadSide side = RoadSide::kRight;
  double lateral_offset = 20.0;  // distance from road centerline to near edge

  double min_x() const { return center_x - width / 2.0; }
  double max_x() const { return center_x + width / 2.0; }
  double min_z() const { return center_z - depth / 2.0; }
  double max_z() const { return center_z + depth / 2.0; }

  void validate() const {
    if (!(width > 0.0) || !(depth > 0.0)) {
      throw std::invalid_argument("building '" + id + "': non-positive footprint");
    }
    const bool known_offset = std::abs(lateral_offset - 20.0) < 1e-9 ||
                              std::abs(lateral_offset - 30.0) < 1e-9 ||
                              std::abs(lateral_offset - 40.0) < 1e-9;
    if (!known_offset) {
      throw std::invalid_argument("building '" + id + "': lateral offset not in {20, 30, 40}");
    }
  }
};

/// Closed driver-relative angular interval, wrap-free: -180 < lo <= hi <= 180.
struct AngularInterval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(double angle_deg) const { return angle_deg >= lo && angle_deg <= hi; }

  /// 0 inside the interval, angular distance to the nearest endpoint outside.
  double distance_to(double angle_deg) const {
    if (contains(angle_deg)) return 0.0;
    return angle_deg < lo ? lo - angle_deg : angle_deg - hi;
  }
};

struct Scene {
  std::vector<Building> buildings;
  std::string target_id;
  Pose2D onset_pose;

  std::size_t index_of(const std::string& building_id) const {
    for (std::size_t i = 0; i < buildings.size(); ++i) {
      if (buildings[i].id == building_id) return i;
    }
    throw std::invalid_argument("unknown building id '" + building_id + "'");
  }

  const Building& target() const { return buildings[index_of(target_id)]; }

  void validate(bool require_cluster_size = true) const;
};

/// Signed horizontal angle from the pose heading to the ray pose -> (px, pz).
/// 0 = straight ahead, positive = driver's right, range (-180, 180].
inline double signed_angle(const Pose2D& pose, double px, double pz) {
  const double dx = px - pose.x;
  const double dz = pz - pose.z;
  if (dx == 0.0 && dz == 0.0) {
    throw std::invalid_argument("coincident point");
  }
  const double global_deg = rad_to_deg(std::atan2(dx, dz));
  return normalize_signed_deg(global_deg - pose.heading_deg);
}

/// Angle of the footprint centroid of the scene's target building.
inline double ground_truth_angle(const Scene& scene) {
  const Building& target = scene.target();
  return signed_angle(scene.onset_pose, target.center_x, target.center_z);
}

/// Tightest interval covering all four footprint corners; occlusion ignored.
inline AngularInterval geometric_interval(const Scene& scene, const Building& building) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const double xs[2] = {building.min_x(), building.max_x()};
  const double zs[2] = {building.min_z(), building.max_z()};
  for (double cx : xs) {
    for (double cz : zs) {
      const double a = signed_angle(scene.onset_pose, cx, cz);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
  if (hi - lo >= 180.0) {
    throw std::domain_error("building '" + building.id + "' spans the +/-180 degree cut");
  }
  return {lo, hi};
}

inline AngularInterval geometric_interval(const Scene& scene, const std::string& building_id) {
  return geometric_interval(scene, scene.buildings[scene.index_of(building_id)]);
}

namespace detail {

/// Distance along the driver-relative ray at `rel_angle_deg` to the footprint
/// of `b`, or nullopt when the ray misses (or starts inside/behind it).
inline std::optional<double> ray_rect_distance(const Pose2D& pose, double rel_angle_deg,
                                               const Building& b) {
  const double g = deg_to_rad(pose.heading_deg + rel_angle_deg);
  const double dx = std::sin(g);
  const double dz = std::cos(g);
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  const auto clip_slab = [&](double origin, double dir, double lo, double hi) {
    if (std::abs(dir) < 1e-15) {
      return origin >= lo && origin <= hi;
    }
    double t1 = (lo - origin) / dir;
    double t2 = (hi - origin) / dir;
    if (t1 > t2) std::swap(t1, t2);
    t_lo = std::max(t_lo, t1);
    t_hi = std::min(t_hi, t2);
    return true;
  };
  if (!clip_slab(pose.x, dx, b.min_x(), b.max_x())) return std::nullopt;
  if (!clip_slab(pose.z, dz, b.min_z(), b.max_z())) return std::nullopt;
  if (t_hi < t_lo || t_hi <= 0.0 || t_lo <= 0.0) return std::nullopt;
  return t_lo;
}

}  // namespace detail

/// Exact angular sweep over corner-event angles. Elementary intervals between
/// consecutive corner angles have a constant nearest-hit building (footprints
/// are disjoint, so per-building hit distances cannot cross inside one), which
/// the midpoint classification recovers.
class SceneVisibility {
 public:
  struct LabeledInterval {
    AngularInterval interval;
    std::size_t owner;  // index into scene.buildings
  };

  explicit SceneVisibility(const Scene& scene) : scene_(&scene) {
    const std::size_t n = scene.buildings.size();
    per_building_.resize(n);
    std::vector<AngularInterval> silhouettes;
    silhouettes.reserve(n);
    std::vector<double> events;
    events.reserve(4 * n);
    for (const Building& b : scene.buildings) {
      silhouettes.push_back(geometric_interval(scene, b));
      const double xs[2] = {b.min_x(), b.max_x()};
      const double zs[2] = {b.min_z(), b.max_z()};
      for (double cx : xs) {
        for (double cz : zs) {
          events.push_back(signed_angle(scene.onset_pose, cx, cz));
        }
      }
    }
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end(),
                             [](double a, double b) { return b - a < 1e-12; }),
                 events.end());

    for (std::size_t e = 0; e + 1 < events.size(); ++e) {
      const double a = events[e];
      const double b = events[e + 1];
      const double mid = 0.5 * (a + b);
      std::size_t nearest = n;
      double nearest_dist = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (!silhouettes[i].contains(mid)) continue;
        const auto dist = detail::ray_rect_distance(scene.onset_pose, mid, scene.buildings[i]);
        if (dist && *dist < nearest_dist) {
          nearest_dist = *dist;
          nearest = i;
        }
      }
      if (nearest == n) continue;
      auto& list = per_building_[nearest];
      if (!list.empty() && list.back().hi == a) {
        list.back().hi = b;
      } else {
        list.push_back({a, b});
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      for (const AngularInterval& iv : per_building_[i]) {
        labeled_.push_back({iv, i});
      }
    }
    std::sort(labeled_.begin(), labeled_.end(),
              [](const LabeledInterval& a, const LabeledInterval& b) {
                return a.interval.lo < b.interval.lo;
              });
  }

  const std::vector<AngularInterval>& intervals_of(std::size_t building_index) const {
    return per_building_.at(building_index);
  }

  /// All visible intervals across buildings; disjoint, sorted by lo.
  const std::vector<LabeledInterval>& labeled() const { return labeled_; }

  bool anything_visible() const { return !labeled_.empty(); }

  /// Span from the lowest to the highest covered angle.
  AngularInterval covered_hull() const {
    if (labeled_.empty()) throw std::logic_error("empty scene: no covered angles");
    return {labeled_.front().interval.lo, labeled_.back().interval.hi};
  }

  /// Nearest-visible-interval assignment: the building owning the interval
  /// with minimal angular distance to `angle_deg`. Ties go to the building
  /// with the lexicographically lower id.
  std::size_t nearest_owner(double angle_deg) const {
    if (labeled_.empty()) throw std::logic_error("empty scene: no visible intervals");
    std::size_t best = labeled_.front().owner;
    double best_dist = labeled_.front().interval.distance_to(angle_deg);
    for (std::size_t k = 1; k < labeled_.size(); ++k) {
      const double d = labeled_[k].interval.distance_to(angle_deg);
      const std::size_t owner = labeled_[k].owner;
      if (d < best_dist ||
          (d == best_dist && scene_->buildings[owner].id < scene_->buildings[best].id)) {
        best_dist = d;
        best = owner;
      }
    }
    return best;
  }

  /// Total width of the building's visible intervals, each extended by half
  /// the gap to the adjacent visible interval on each side. The outermost
  /// intervals are not extended past the covered hull, so the assigned widths
  /// partition the hull.
  double assigned_width(std::size_t building_index) const {
    double total = 0.0;
    for (std::size_t k = 0; k < labeled_.size(); ++k) {
      if (labeled_[k].owner != building_index) continue;
      const AngularInterval& iv = labeled_[k].interval;
      const double gap_below = k > 0 ? iv.lo - labeled_[k - 1].interval.hi : 0.0;
      const double gap_above =
          k + 1 < labeled_.size() ? labeled_[k + 1].interval.lo - iv.hi : 0.0;
      total += iv.width() + gap_below / 2.0 + gap_above / 2.0;
    }
    return total;
  }

 private:
  const Scene* scene_;
  std::vector<std::vector<AngularInterval>> per_building_;
  std::vector<LabeledInterval> labeled_;
};

/// Sub-intervals at which a ray from the onset pose hits this building before
/// any other; disjoint, sorted, possibly empty when fully occluded.
inline std::vector<AngularInterval> visible_intervals(const Scene& scene,
                                                      const std::string& building_id) {
  return SceneVisibility(scene).intervals_of(scene.index_of(building_id));
}

enum class HitMetric { kMrde, kSegObj, kMinDt };

inline const char* to_string(HitMetric metric) {
  switch (metric) {
    case HitMetric::kMrde: return "mrde";
    case HitMetric::kSegObj: return "segobj";
    case HitMetric::kMinDt: return "mindt";
  }
  return "?";
}

/// Metric-specific angular width of the target, in degrees.
inline double target_metric_width(const Scene& scene, HitMetric metric,
                                  const SceneVisibility& visibility) {
  const std::size_t target = scene.index_of(scene.target_id);
  switch (metric) {
    case HitMetric::kMrde:
      return geometric_interval(scene, scene.buildings[target]).width();
    case HitMetric::kSegObj: {
      double total = 0.0;
      for (const AngularInterval& iv : visibility.intervals_of(target)) total += iv.width();
      return total;
    }
    case HitMetric::kMinDt:
      return visibility.assigned_width(target);
  }
  return 0.0;
}

/// Pseudo-random chance level: metric-specific width of the target over 180
/// degrees, as a percentage. A fully occluded target yields 0 under SegObj.
inline double chance_level(const Scene& scene, HitMetric metric) {
  const SceneVisibility visibility(scene);
  return target_metric_width(scene, metric, visibility) / 180.0 * 100.0;
}

inline void Scene::validate(bool require_cluster_size) const {
  if (require_cluster_size && buildings.size() != 8 && buildings.size() != 16) {
    throw std::invalid_argument("cluster size must be 8 or 16");
  }
  if (buildings.empty()) throw std::invalid_argument("scene has no buildings");
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    buildings[i].validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (buildings[i].id == buildings[j].id) {
        throw std::invalid_argument("duplicate building id '" + buildings[i].id + "'");
      }
      const Building& a = buildings[i];
      const Building& b = buildings[j];
      const bool overlap = a.min_x() < b.max_x() && b.min_x() < a.max_x() &&
                           a.min_z() < b.max_z() && b.min_z() < a.max_z();
      if (overlap) {
        throw std::invalid_argument("footprints of '" + a.id + "' and '" + b.id + "' overlap");
      }
    }
    const Building& b = buildings[i];
    if (onset_pose.x >= b.min_x() && onset_pose.x <= b.max_x() && onset_pose.z >= b.min_z() &&
        onset_pose.z <= b.max_z()) {
      throw std::invalid_argument("building '" + b.id + "' contains the driver");
    }
    geometric_interval(*this, b);  // throws when the silhouette crosses the cut
  }
  index_of(target_id);
}

}  // namespace icregress
