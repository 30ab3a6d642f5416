#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "russ/errors.hpp"
#include "russ/geometry.hpp"
#include "russ/guideline.hpp"
#include "russ/rng.hpp"
#include "russ/tool_registry.hpp"

#ifndef RUSS_DATA_DIR
#define RUSS_DATA_DIR "data"
#endif

namespace russ {

inline std::filesystem::path default_data_dir() { return RUSS_DATA_DIR; }

/// Tunables of the simulated world; every field may be overridden per scene.
struct WorldConfig {
  double force_max = 15.0;             // N
  double force_saturation = 5.0;       // N, confidence ramp saturates here
  double contact_force = 5.0;          // N, force established by adjust_contact
  double initial_force = 3.0;          // N
  int breath_hold_frames = 60;
  double footprint_half_width = 30.0;  // mm
  double segmentation_sigma = 2.0;     // mm per axis
  double centered_offset_ratio = 0.2;
  double visible_fraction = 0.5;
  double atlas_offset_range = 25.0;    // mm per axis
  double atlas_offset_max = 40.0;      // mm, norm bound
  double speed_min = 1.0;              // mm/s
  double speed_max = 50.0;             // mm/s
  int default_points = 50;
  int max_points = 500;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

struct Organ {
  std::string name;
  Vec3 center;  // true center = prior + atlas_offset
  Vec3 radii;
  bool requires_breath_hold = false;
  Vec3 atlas_offset;

  Vec3 prior_center() const { return center - atlas_offset; }
  friend bool operator==(const Organ&, const Organ&) = default;
};

struct Trajectory {
  std::vector<Pose> poses;
  double speed = 10.0;  // mm/s
  std::string target_organ;
  std::optional<std::size_t> refined_from;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct FrameObs {
  Vec3 position;
  double confidence = 0.0;
  bool organ_in_plane = false;
  std::optional<double> lateral_offset_ratio;  // present iff organ_in_plane

  friend bool operator==(const FrameObs&, const FrameObs&) = default;
};

struct SweepRecord {
  std::size_t trajectory_index = 0;
  std::string target_organ;
  std::vector<FrameObs> frames;

  std::size_t visible_count() const {
    return static_cast<std::size_t>(std::count_if(
        frames.begin(), frames.end(), [](const FrameObs& f) { return f.organ_in_plane; }));
  }

  double visible_fraction() const {
    return frames.empty() ? 0.0 : static_cast<double>(visible_count()) / frames.size();
  }

  /// Mean lateral offset ratio over visible frames; empty when none is visible.
  std::optional<double> mean_offset_ratio() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : frames)
      if (f.organ_in_plane) {
        sum += *f.lateral_offset_ratio;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }

  friend bool operator==(const SweepRecord&, const SweepRecord&) = default;
};

struct ContactAdjustment {
  double confidence_before = 0.0;
  double confidence_after = 0.0;
  double force_before = 0.0;
  double force_after = 0.0;

  friend bool operator==(const ContactAdjustment&, const ContactAdjustment&) = default;
};

/// Scene description loaded from a `*.scene.json` fixture.
struct SceneFixture {
  std::string id;
  std::map<std::string, Vec3> landmarks;  // surface points, keyed by canonical name
  std::vector<Organ> organs;              // atlas_offset zero, center = prior
  WorldConfig config;
};

struct WorldState {
  std::string fixture_id;
  WorldConfig config;
  HalfCylinderSurface surface;
  std::map<std::string, Vec3> landmarks;
  std::map<std::string, Organ> organs;
  std::optional<Pose> probe;
  double force = 0.0;
  int breath_hold_frames_remaining = 0;
  std::vector<SweepRecord> sweeps;
  std::vector<Trajectory> trajectories;
  std::vector<ContactAdjustment> adjustments;
  std::vector<std::string> voice_log;
  DeterministicRng rng;
  std::uint64_t frame_counter = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

// ---------------------------------------------------------------------------
// Fixtures

/// Default landmark layout, (x, y) in mm: x lateral (patient right < 0),
/// y cranio-caudal (cranial > 0).
inline std::map<std::string, std::pair<double, double>> default_landmark_layout() {
  return {
      {"xiphoid", {0.0, 140.0}},          {"umbilicus", {0.0, 0.0}},
      {"right_costal_margin", {-75.0, 90.0}}, {"left_costal_margin", {75.0, 90.0}},
      {"right_iliac_crest", {-75.0, -60.0}},  {"left_iliac_crest", {75.0, -60.0}},
      {"l1", {0.0, 100.0}},               {"l2", {0.0, 60.0}},
      {"l3", {0.0, 20.0}},                {"l4", {0.0, -20.0}},
      {"l5", {0.0, -60.0}},               {"right_midaxillary", {-140.0, 40.0}},
      {"left_midaxillary", {140.0, 40.0}},
  };
}

namespace detail {

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3 ||
      !std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_number(); }))
    throw SchemaError(where + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json vec3_to_json(Vec3 v) { return Json::array({v.x, v.y, v.z}); }

inline void apply_config_overrides(WorldConfig& c, const Json& j) {
  if (!j.is_object()) throw SchemaError("scene overrides must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw SchemaError("override '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "force_max") c.force_max = v;
    else if (key == "force_saturation") c.force_saturation = v;
    else if (key == "contact_force") c.contact_force = v;
    else if (key == "initial_force") c.initial_force = v;
    else if (key == "breath_hold_frames") c.breath_hold_frames = static_cast<int>(v);
    else if (key == "footprint_half_width") c.footprint_half_width = v;
    else if (key == "segmentation_sigma") c.segmentation_sigma = v;
    else if (key == "centered_offset_ratio") c.centered_offset_ratio = v;
    else if (key == "visible_fraction") c.visible_fraction = v;
    else if (key == "atlas_offset_range") c.atlas_offset_range = v;
    else if (key == "atlas_offset_max") c.atlas_offset_max = v;
    else throw SchemaError("unknown override '" + key + "'");
  }
  if (c.force_saturation <= 0.0 || c.footprint_half_width <= 0.0 || c.segmentation_sigma < 0.0 ||
      c.breath_hold_frames < 0 || c.initial_force < 0.0 || c.initial_force > c.force_max ||
      c.atlas_offset_range < 0.0 || c.atlas_offset_max < 0.0)
    throw SchemaError("scene overrides out of range");
}

}  // namespace detail

inline SceneFixture parse_scene_fixture(std::string_view document) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw FormatError(e.what());
  }
  detail::require_fields(j, "scene", {"id", "organs"}, {"landmarks", "overrides", "description"});
  SceneFixture s;
  s.id = detail::string_field(j, "id", "scene");
  const HalfCylinderSurface surface;
  for (const auto& [name, xy] : default_landmark_layout())
    s.landmarks[name] = surface.lift(xy.first, xy.second);
  if (j.contains("landmarks")) {
    for (const auto& [name, v] : j.at("landmarks").items()) {
      const auto canon = text::canonical_token(name);
      if (!is_landmark_name(canon)) throw SchemaError("unknown landmark '" + name + "'");
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw SchemaError("landmark '" + name + "' must be [x, y]");
      s.landmarks[canon] = surface.lift(v[0].get<double>(), v[1].get<double>());
    }
  }
  if (!j.at("organs").is_array() || j.at("organs").empty())
    throw SchemaError("scene.organs must be a non-empty array");
  for (const auto& o : j.at("organs")) {
    detail::require_fields(o, "organ", {"name", "center", "radii"}, {"requires_breath_hold"});
    Organ organ;
    organ.name = text::canonical_token(detail::string_field(o, "name", "organ"));
    organ.center = detail::vec3_from_json(o.at("center"), organ.name + ".center");
    organ.radii = detail::vec3_from_json(o.at("radii"), organ.name + ".radii");
    if (!(organ.radii.x > 0 && organ.radii.y > 0 && organ.radii.z > 0))
      throw SchemaError(organ.name + ".radii must be positive");
    if (o.contains("requires_breath_hold")) {
      if (!o.at("requires_breath_hold").is_boolean())
        throw SchemaError(organ.name + ".requires_breath_hold must be a boolean");
      organ.requires_breath_hold = o.at("requires_breath_hold").get<bool>();
    }
    s.organs.push_back(std::move(organ));
  }
  if (j.contains("overrides")) detail::apply_config_overrides(s.config, j.at("overrides"));
  return s;
}

inline SceneFixture load_scene_fixture(std::string_view id,
                                       const std::filesystem::path& dir = default_data_dir() / "fixtures") {
  const auto path = dir / (std::string(id) + ".scene.json");
  if (!std::filesystem::is_regular_file(path)) throw UnknownFixture("'" + std::string(id) + "'");
  return parse_scene_fixture(read_file(path));
}

/// Builds the world for `fixture`; organ atlas offsets are drawn from the
/// seeded stream, uniform per axis and rejected above the norm bound.
inline WorldState init_world(std::uint64_t seed, const SceneFixture& fixture) {
  WorldState w;
  w.fixture_id = fixture.id;
  w.config = fixture.config;
  w.landmarks = fixture.landmarks;
  w.force = fixture.config.initial_force;
  w.rng = DeterministicRng(seed);
  std::map<std::string, Organ> organs;
  for (const auto& o : fixture.organs) organs[o.name] = o;
  const double range = w.config.atlas_offset_range;
  for (auto& [name, organ] : organs) {
    Vec3 offset;
    do {
      offset.x = w.rng.uniform(-range, range);
      offset.y = w.rng.uniform(-range, range);
      offset.z = w.rng.uniform(-range, range);
    } while (norm(offset) > w.config.atlas_offset_max);
    organ.atlas_offset = offset;
    organ.center = organ.center + offset;
  }
  w.organs = std::move(organs);
  return w;
}

inline WorldState init_world(std::uint64_t seed, std::string_view fixture_id,
                             const std::filesystem::path& fixtures_dir = default_data_dir() / "fixtures") {
  return init_world(seed, load_scene_fixture(fixture_id, fixtures_dir));
}

/// Moves an organ so that its true center sits `offset` away from its prior.
inline void set_atlas_offset(WorldState& w, const std::string& organ, Vec3 offset) {
  auto it = w.organs.find(organ);
  if (it == w.organs.end()) throw InvalidArgument("no organ '" + organ + "'");
  it->second.center = it->second.prior_center() + offset;
  it->second.atlas_offset = offset;
}

// ---------------------------------------------------------------------------
// Imaging geometry

/// c = max(0, d.n) * clip(force / saturation, 0, 1).
inline double contact_confidence(const HalfCylinderSurface& surface, const Pose& pose, double force,
                                 double force_saturation = 5.0) {
  const Vec3 n = surface.inward_normal(pose.position.x);
  const double alignment = std::max(0.0, dot(normalized(pose.direction), n));
  const double ramp = std::clamp(force / force_saturation, 0.0, 1.0);
  return std::clamp(alignment * ramp, 0.0, 1.0);
}

inline double contact_confidence(const WorldState& w, const Pose& pose, double force) {
  return contact_confidence(w.surface, pose, force, w.config.force_saturation);
}

/// Current confidence of the placed probe; an unplaced probe has no contact.
inline double current_confidence(const WorldState& w) {
  return w.probe ? contact_confidence(w, *w.probe, w.force) : 0.0;
}

/// Image frame axes of a probe pose: the beam, the lateral axis and the
/// elevation axis (the image-plane normal, nominally cranio-caudal).
struct ImageFrame {
  Vec3 beam;
  Vec3 lateral;
  Vec3 elevation;
};

inline ImageFrame image_frame(const Pose& pose) {
  const Vec3 d = normalized(pose.direction);
  const Vec3 y{0.0, 1.0, 0.0};
  Vec3 e = y - dot(y, d) * d;
  if (norm(e) < 1e-12) e = Vec3{1.0, 0.0, 0.0} - d.x * d;
  e = normalized(e);
  return {d, normalized(cross(e, d)), e};
}

struct PlaneObservation {
  bool in_plane = false;
  double lateral_offset = 0.0;  // mm, |distance| of the organ-center projection from the beam
};

/// Intersects the image plane of `pose` (restricted to |lateral| <= half_width)
/// with the organ's axis-aligned ellipsoid, in closed form.
inline PlaneObservation observe_organ(const Pose& pose, const Organ& organ, double half_width) {
  const ImageFrame f = image_frame(pose);
  const Vec3 r = organ.radii;
  const Vec3 a{r.x * f.elevation.x, r.y * f.elevation.y, r.z * f.elevation.z};
  const Vec3 b{r.x * f.lateral.x, r.y * f.lateral.y, r.z * f.lateral.z};
  const Vec3 to_center = organ.center - pose.position;
  const double h = -dot(f.elevation, to_center);
  const double aa = dot(a, a);
  PlaneObservation obs;
  obs.lateral_offset = std::abs(dot(f.lateral, to_center));
  if (h * h > aa) return obs;
  const double ba = dot(b, a);
  const Vec3 b_perp = b - (ba / aa) * a;
  const double s0 = dot(f.lateral, to_center) + ba * h / aa;
  const double w = norm(b_perp) * std::sqrt(std::max(0.0, 1.0 - h * h / aa));
  obs.in_plane = std::abs(s0) - w <= half_width;
  return obs;
}

// ---------------------------------------------------------------------------
// Tool effects

inline const Vec3& landmark(const WorldState& w, std::string_view name) {
  auto it = w.landmarks.find(text::canonical_token(name));
  if (it == w.landmarks.end()) throw UnknownLandmark("'" + std::string(name) + "'");
  return it->second;
}

/// Samples `n_points` poses on the straight (x, y) segment between two surface
/// points, lifted onto the surface with inward-normal beams.
inline Trajectory plan_between(const HalfCylinderSurface& surface, double x0, double y0, double x1,
                               double y1, int n_points) {
  Trajectory t;
  t.poses.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(n_points - 1);
    const double x = (1.0 - s) * x0 + s * x1;
    const double y = (1.0 - s) * y0 + s * y1;
    t.poses.push_back(surface.pose_at(x, y));
  }
  return t;
}

inline const Trajectory& plan_trajectory(WorldState& w, std::string_view target_organ,
                                         std::string_view start_landmark, std::string_view end_landmark,
                                         int n_points = 50) {
  const Vec3 a = landmark(w, start_landmark);
  const Vec3 b = landmark(w, end_landmark);
  if (text::canonical_token(start_landmark) == text::canonical_token(end_landmark) ||
      (a.x == b.x && a.y == b.y))
    throw DegenerateTrajectory("start and end landmarks coincide");
  if (n_points < 2 || n_points > w.config.max_points)
    throw InvalidArgument("n_points must lie in [2, " + std::to_string(w.config.max_points) + "]");
  Trajectory t = plan_between(w.surface, a.x, a.y, b.x, b.y, n_points);
  t.target_organ = text::canonical_token(target_organ);
  w.trajectories.push_back(std::move(t));
  return w.trajectories.back();
}

inline std::size_t resolve_trajectory(const WorldState& w, std::string_view ref) {
  const auto idx = parse_ref(text::canonical_token(ref), "traj");
  if (!idx) throw UnknownTrajectory("bad reference '" + std::string(ref) + "'");
  if (w.trajectories.empty()) throw UnknownTrajectory("no trajectory planned yet");
  if (*idx < 0) return w.trajectories.size() - 1;
  if (static_cast<std::size_t>(*idx) >= w.trajectories.size())
    throw UnknownTrajectory("'" + std::string(ref) + "'");
  return static_cast<std::size_t>(*idx);
}

inline std::size_t resolve_sweep(const WorldState& w, std::string_view ref) {
  const auto idx = parse_ref(text::canonical_token(ref), "sweep");
  if (!idx) throw UnknownSweep("bad reference '" + std::string(ref) + "'");
  if (w.sweeps.empty()) throw UnknownSweep("no sweep recorded yet");
  if (*idx < 0) return w.sweeps.size() - 1;
  if (static_cast<std::size_t>(*idx) >= w.sweeps.size()) throw UnknownSweep("'" + std::string(ref) + "'");
  return static_cast<std::size_t>(*idx);
}

inline void check_speed(const WorldState& w, double speed) {
  if (!(speed >= w.config.speed_min && speed <= w.config.speed_max))
    throw SpeedOutOfRange(Json(speed).dump() + " mm/s");
}

/// Executes a trajectory, recording one frame per pose.
inline const SweepRecord& execute_trajectory(WorldState& w, std::size_t trajectory_index, double speed) {
  check_speed(w, speed);
  if (trajectory_index >= w.trajectories.size())
    throw UnknownTrajectory("index " + std::to_string(trajectory_index));
  Trajectory& traj = w.trajectories[trajectory_index];
  traj.speed = speed;
  SweepRecord sweep;
  sweep.trajectory_index = trajectory_index;
  sweep.target_organ = traj.target_organ;
  auto organ_it = w.organs.find(traj.target_organ);
  for (const Pose& pose : traj.poses) {
    FrameObs frame;
    frame.position = pose.position;
    frame.confidence = contact_confidence(w, pose, w.force);
    const bool breath_hold = w.breath_hold_frames_remaining > 0;
    if (organ_it != w.organs.end()) {
      const Organ& organ = organ_it->second;
      const auto obs = observe_organ(pose, organ, w.config.footprint_half_width);
      frame.organ_in_plane = obs.in_plane && (!organ.requires_breath_hold || breath_hold);
      if (frame.organ_in_plane)
        frame.lateral_offset_ratio =
            std::clamp(obs.lateral_offset / w.config.footprint_half_width, 0.0, 1.0);
    }
    if (w.breath_hold_frames_remaining > 0) --w.breath_hold_frames_remaining;
    ++w.frame_counter;
    w.probe = pose;
    sweep.frames.push_back(frame);
  }
  w.sweeps.push_back(std::move(sweep));
  return w.sweeps.back();
}

/// Moves the probe to a single pose; no frames are recorded.
inline Pose move_probe(WorldState& w, double x, double y, double tilt_deg, double speed) {
  check_speed(w, speed);
  if (!w.surface.contains(x, y)) throw InvalidArgument("pose outside the surface extent");
  if (!(std::abs(tilt_deg) < 90.0)) throw InvalidArgument("tilt must lie in (-90, 90) degrees");
  w.probe = w.surface.pose_at(x, y, tilt_deg * std::numbers::pi / 180.0);
  return *w.probe;
}

inline ContactAdjustment adjust_contact(WorldState& w, std::optional<std::string_view> sweep_ref = std::nullopt) {
  if (!w.probe) throw ProbeNotPlaced("probe has not been moved onto the patient");
  if (sweep_ref) resolve_sweep(w, *sweep_ref);
  ContactAdjustment adj;
  adj.confidence_before = current_confidence(w);
  adj.force_before = w.force;
  w.probe->direction = w.surface.inward_normal(w.probe->position.x);
  w.force = std::min(w.config.force_max, std::max(w.force, w.config.contact_force));
  adj.confidence_after = current_confidence(w);
  adj.force_after = w.force;
  w.adjustments.push_back(adj);
  return adj;
}

struct VoiceEffect {
  bool breath_hold_started = false;
};

inline VoiceEffect voice_guidance(WorldState& w, std::string_view message) {
  w.voice_log.emplace_back(message);
  const auto lower = text::lower(message);
  for (const char* keyword : {"breath", "inhale", "hold"}) {
    if (lower.find(keyword) != std::string::npos) {
      w.breath_hold_frames_remaining = w.config.breath_hold_frames;
      return {true};
    }
  }
  return {false};
}

/// Mock organ localization: the true center plus seeded Gaussian noise, or
/// nothing when the organ never appeared in the sweep.
inline std::optional<Vec3> segment_organ(WorldState& w, std::size_t sweep_index) {
  if (sweep_index >= w.sweeps.size()) throw UnknownSweep("index " + std::to_string(sweep_index));
  const SweepRecord& sweep = w.sweeps[sweep_index];
  if (sweep.visible_count() == 0) return std::nullopt;
  auto it = w.organs.find(sweep.target_organ);
  if (it == w.organs.end()) return std::nullopt;
  const double sigma = w.config.segmentation_sigma;
  Vec3 noise;
  noise.x = sigma * w.rng.normal();
  noise.y = sigma * w.rng.normal();
  noise.z = sigma * w.rng.normal();
  return it->second.center + noise;
}

inline bool sweep_well_visualized(const WorldConfig& c, const SweepRecord& sweep) {
  const auto offset = sweep.mean_offset_ratio();
  return offset && sweep.visible_fraction() >= c.visible_fraction && *offset <= c.centered_offset_ratio;
}

/// Surface x whose inward normal passes through `target`.
inline double surface_x_above(const HalfCylinderSurface& surface, Vec3 target) {
  const double rho = std::hypot(target.x, target.z);
  if (rho == 0.0) return 0.0;
  return surface.radius * target.x / rho;
}

/// Replans over the localized organ; returns the new trajectory index, or
/// nothing when the sweep already visualizes the organ well.
inline std::optional<std::size_t> refine_trajectory(WorldState& w, std::size_t sweep_index) {
  if (sweep_index >= w.sweeps.size()) throw UnknownSweep("index " + std::to_string(sweep_index));
  if (sweep_well_visualized(w.config, w.sweeps[sweep_index])) return std::nullopt;
  const auto centroid = segment_organ(w, sweep_index);
  if (!centroid) throw RefineImpossible("organ not visible in the sweep");
  const std::size_t source_index = w.sweeps[sweep_index].trajectory_index;
  const Trajectory& source = w.trajectories.at(source_index);
  const Vec3 first = source.poses.front().position;
  const Vec3 last = source.poses.back().position;
  const double shift = surface_x_above(w.surface, *centroid) - 0.5 * (first.x + last.x);
  Trajectory refined;
  refined.speed = source.speed;
  refined.target_organ = source.target_organ;
  refined.refined_from = source_index;
  for (const Pose& p : source.poses) {
    const double x = std::clamp(p.position.x + shift, w.surface.x_min, w.surface.x_max);
    refined.poses.push_back(w.surface.pose_at(x, p.position.y));
  }
  w.trajectories.push_back(std::move(refined));
  return w.trajectories.size() - 1;
}

inline bool is_scan_successful(const WorldState& w, std::string_view target_organ) {
  if (w.sweeps.empty()) throw NoSweepYet("no sweep executed");
  const SweepRecord& last = w.sweeps.back();
  return last.target_organ == text::canonical_token(target_organ) &&
         sweep_well_visualized(w.config, last);
}

inline bool is_scan_successful(const WorldState& w, const Guideline& g) {
  return is_scan_successful(w, g.target_organ);
}

inline bool evaluate_condition(const ConditionSpec& cond, const WorldState& w) {
  const auto last_sweep = [&]() -> const SweepRecord& {
    if (w.sweeps.empty()) throw NoSweepYet(std::string(to_string(cond.kind)) + " needs a sweep");
    return w.sweeps.back();
  };
  switch (cond.kind) {
    case ConditionKind::confidence_below: return current_confidence(w) < cond.threshold.value();
    case ConditionKind::confidence_at_least: return current_confidence(w) >= cond.threshold.value();
    case ConditionKind::organ_off_center: {
      // No visible frame counts as fully off-center.
      return last_sweep().mean_offset_ratio().value_or(1.0) > cond.threshold.value();
    }
    case ConditionKind::organ_visible: return last_sweep().visible_count() > 0;
    case ConditionKind::breath_hold_active: return w.breath_hold_frames_remaining > 0;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Tool dispatch

struct ToolResult {
  std::string summary;
  Json payload = Json::object();

  friend bool operator==(const ToolResult&, const ToolResult&) = default;
};

namespace detail {

inline Json sweep_summary_json(const SweepRecord& s, std::size_t index) {
  Json j{{"sweep", "sweep_" + std::to_string(index)},
         {"trajectory", "traj_" + std::to_string(s.trajectory_index)},
         {"frames", s.frames.size()},
         {"visible_frames", s.visible_count()},
         {"visible_fraction", s.visible_fraction()}};
  const auto off = s.mean_offset_ratio();
  j["mean_offset_ratio"] = off ? Json(*off) : Json(nullptr);
  double conf = 0.0;
  for (const auto& f : s.frames) conf += f.confidence;
  j["mean_confidence"] = s.frames.empty() ? 0.0 : conf / static_cast<double>(s.frames.size());
  return j;
}

}  // namespace detail

/// Applies a validated, canonical tool call to the world.
inline ToolResult execute_tool_call(WorldState& w, const ToolCall& call) {
  const Json& args = call.args;
  const auto str = [&](const char* key) { return args.at(key).get<std::string>(); };
  if (call.tool_name == "plan_trajectory") {
    const int n = args.contains("n_points") ? static_cast<int>(args.at("n_points").get<double>())
                                            : w.config.default_points;
    const Trajectory& t = plan_trajectory(w, str("target_organ"), str("start_landmark"), str("end_landmark"), n);
    const std::size_t idx = w.trajectories.size() - 1;
    return {"planned traj_" + std::to_string(idx) + " with " + std::to_string(t.poses.size()) + " poses",
            Json{{"trajectory", "traj_" + std::to_string(idx)},
                 {"poses", t.poses.size()},
                 {"start", detail::vec3_to_json(t.poses.front().position)},
                 {"end", detail::vec3_to_json(t.poses.back().position)}}};
  }
  if (call.tool_name == "execute_motion") {
    const double speed = args.at("speed").get<double>();
    const Json& target = args.at("target");
    if (target.is_string()) {
      const std::size_t idx = resolve_trajectory(w, target.get<std::string>());
      const SweepRecord& s = execute_trajectory(w, idx, speed);
      const std::size_t sweep_idx = w.sweeps.size() - 1;
      Json payload = detail::sweep_summary_json(s, sweep_idx);
      payload["breath_hold_frames_remaining"] = w.breath_hold_frames_remaining;
      return {"acquired sweep_" + std::to_string(sweep_idx) + ": " + std::to_string(s.visible_count()) + "/" +
                  std::to_string(s.frames.size()) + " frames show the organ",
              payload};
    }
    const Pose p = move_probe(w, target[0].get<double>(), target[1].get<double>(), target[2].get<double>(), speed);
    return {"probe moved",
            Json{{"position", detail::vec3_to_json(p.position)},
                 {"direction", detail::vec3_to_json(p.direction)},
                 {"confidence", current_confidence(w)}}};
  }
  if (call.tool_name == "adjust_contact") {
    std::optional<std::string> ref;
    if (args.contains("sweep") && args.at("sweep").is_string()) ref = str("sweep");
    const auto adj = adjust_contact(w, ref ? std::optional<std::string_view>(*ref) : std::nullopt);
    return {"contact confidence " + Json(adj.confidence_before).dump() + " -> " + Json(adj.confidence_after).dump(),
            Json{{"confidence_before", adj.confidence_before},
                 {"confidence_after", adj.confidence_after},
                 {"force", adj.force_after}}};
  }
  if (call.tool_name == "voice_guidance") {
    const auto effect = voice_guidance(w, str("message"));
    return {effect.breath_hold_started ? "breath hold started" : "message delivered",
            Json{{"breath_hold_started", effect.breath_hold_started},
                 {"breath_hold_frames_remaining", w.breath_hold_frames_remaining}}};
  }
  if (call.tool_name == "refine_trajectory") {
    const std::size_t sweep_idx = resolve_sweep(w, str("sweep"));
    const auto refined = refine_trajectory(w, sweep_idx);
    if (!refined)
      return {"organ already centered and visible; no refinement", Json{{"refined", false}}};
    return {"replanned as traj_" + std::to_string(*refined),
            Json{{"refined", true}, {"trajectory", "traj_" + std::to_string(*refined)}}};
  }
  if (call.tool_name == "complete_scan") {
    return {"scan completed", Json{{"sweeps", w.sweeps.size()}}};
  }
  throw UnknownTool("'" + call.tool_name + "' has no simulated effect");
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const Pose& p) {
  return Json{{"position", detail::vec3_to_json(p.position)}, {"direction", detail::vec3_to_json(p.direction)}};
}

inline Json to_json(const WorldState& w) {
  Json landmarks = Json::object();
  for (const auto& [n, p] : w.landmarks) landmarks[n] = detail::vec3_to_json(p);
  Json organs = Json::object();
  for (const auto& [n, o] : w.organs)
    organs[n] = Json{{"center", detail::vec3_to_json(o.center)},
                     {"radii", detail::vec3_to_json(o.radii)},
                     {"requires_breath_hold", o.requires_breath_hold},
                     {"atlas_offset", detail::vec3_to_json(o.atlas_offset)}};
  Json trajectories = Json::array();
  for (const auto& t : w.trajectories) {
    Json poses = Json::array();
    for (const auto& p : t.poses) poses.push_back(to_json(p));
    trajectories.push_back(Json{{"poses", poses},
                                {"speed", t.speed},
                                {"target_organ", t.target_organ},
                                {"refined_from", t.refined_from ? Json(*t.refined_from) : Json(nullptr)}});
  }
  Json sweeps = Json::array();
  for (const auto& s : w.sweeps) {
    Json frames = Json::array();
    for (const auto& f : s.frames)
      frames.push_back(Json{{"position", detail::vec3_to_json(f.position)},
                            {"confidence", f.confidence},
                            {"organ_in_plane", f.organ_in_plane},
                            {"lateral_offset_ratio",
                             f.lateral_offset_ratio ? Json(*f.lateral_offset_ratio) : Json(nullptr)}});
    sweeps.push_back(Json{{"trajectory_index", s.trajectory_index},
                          {"target_organ", s.target_organ},
                          {"frames", frames}});
  }
  Json adjustments = Json::array();
  for (const auto& a : w.adjustments)
    adjustments.push_back(Json{{"confidence_before", a.confidence_before},
                               {"confidence_after", a.confidence_after},
                               {"force_before", a.force_before},
                               {"force_after", a.force_after}});
  const auto& c = w.config;
  return Json{
      {"fixture_id", w.fixture_id},
      {"config",
       {{"force_max", c.force_max},
        {"force_saturation", c.force_saturation},
        {"contact_force", c.contact_force},
        {"initial_force", c.initial_force},
        {"breath_hold_frames", c.breath_hold_frames},
        {"footprint_half_width", c.footprint_half_width},
        {"segmentation_sigma", c.segmentation_sigma},
        {"centered_offset_ratio", c.centered_offset_ratio},
        {"visible_fraction", c.visible_fraction}}},
      {"surface_radius", w.surface.radius},
      {"landmarks", landmarks},
      {"organs", organs},
      {"probe", w.probe ? to_json(*w.probe) : Json(nullptr)},
      {"force", w.force},
      {"breath_hold_frames_remaining", w.breath_hold_frames_remaining},
      {"trajectories", trajectories},
      {"sweeps", sweeps},
      {"adjustments", adjustments},
      {"voice_log", w.voice_log},
      {"rng", {{"seed", w.rng.seed()}, {"draws", w.rng.draws()}}},
      {"frame_counter", w.frame_counter},
  };
}

/// Canonical serialized form: sorted keys, shortest round-trip doubles.
inline std::string serialize_world(const WorldState& w) { return to_json(w).dump(); }

/// 64-bit FNV-1a of the canonical serialization.
inline std::uint64_t world_digest(const WorldState& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_world(w)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace russ
