#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"

using namespace russ;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

/// Independent visibility oracle: minimum of the ellipsoid quadratic form over
/// the image strip {p + s*l + t*d : |s| <= half_width}, found by eliminating t
/// and clamping s. Visible iff the minimum is <= 1.
double strip_minimum(const Pose& pose, const Organ& organ, double half_width) {
  const Vec3 d = normalized(pose.direction);
  const Vec3 e = normalized(Vec3{0, 1, 0} - d.y * d);
  const Vec3 l = normalized(cross(e, d));
  const auto scale = [&](Vec3 v) { return Vec3{v.x / organ.radii.x, v.y / organ.radii.y, v.z / organ.radii.z}; };
  const Vec3 u = scale(pose.position - organ.center);
  const Vec3 L = scale(l);
  const Vec3 T = scale(d);
  const auto reject = [&](Vec3 v) { return v - (dot(v, T) / dot(T, T)) * T; };
  const Vec3 U = reject(u);
  const Vec3 V = reject(L);
  const double s = std::clamp(-dot(U, V) / dot(V, V), -half_width, half_width);
  const Vec3 q = U + s * V;
  return dot(q, q);
}

WorldState fresh(const std::string& fixture, std::uint64_t seed = 7) { return init_world(seed, fixture); }

/// Places a straight constant-x trajectory over `organ` at lateral offset `offset_mm`.
void center_organ_under(WorldState& w, const std::string& organ, double x, double offset_mm, double depth = 60.0) {
  const Pose p = w.surface.pose_at(x, w.organs.at(organ).prior_center().y);
  const ImageFrame f = image_frame(p);
  const Vec3 target = p.position + depth * f.beam + offset_mm * f.lateral;
  set_atlas_offset(w, organ, target - w.organs.at(organ).prior_center());
}

}  // namespace

TEST(InitWorld, Deterministic) {
  EXPECT_EQ(fresh("kidney"), fresh("kidney"));
  EXPECT_EQ(serialize_world(fresh("kidney")), serialize_world(fresh("kidney")));
  EXPECT_NE(serialize_world(fresh("kidney", 7)), serialize_world(fresh("kidney", 8)));
}

TEST(InitWorld, GallbladderNeedsBreathHold) {
  EXPECT_TRUE(fresh("gallbladder").organs.at("gallbladder").requires_breath_hold);
  EXPECT_FALSE(fresh("kidney").organs.at("kidney").requires_breath_hold);
}

TEST(InitWorld, LandmarkTable) {
  const WorldState w = fresh("spine");
  for (const char* name : {"xiphoid", "umbilicus", "right_costal_margin", "left_costal_margin", "right_iliac_crest",
                           "left_iliac_crest", "l1", "l2", "l3", "l4", "l5", "right_midaxillary", "left_midaxillary"}) {
    ASSERT_TRUE(w.landmarks.count(name)) << name;
    const Vec3 p = w.landmarks.at(name);
    EXPECT_NEAR(p.z, w.surface.height(p.x), 1e-9) << name;
  }
  EXPECT_EQ(w.landmarks.size(), 13u);
  EXPECT_EQ(landmark(w, "L3"), w.landmarks.at("l3"));
}

TEST(InitWorld, AtlasOffsetsBounded) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const WorldState w = fresh("liver", seed);
    for (const auto& [name, organ] : w.organs) {
      for (double c : {organ.atlas_offset.x, organ.atlas_offset.y, organ.atlas_offset.z}) {
        EXPECT_GE(c, -25.0);
        EXPECT_LE(c, 25.0);
      }
      EXPECT_LE(norm(organ.atlas_offset), 40.0);
      const Vec3 diff = organ.center - (organ.prior_center() + organ.atlas_offset);
      EXPECT_LT(norm(diff), 1e-9);
    }
  }
}

TEST(InitWorld, UnknownFixture) { EXPECT_THROW(fresh("appendix"), UnknownFixture); }

TEST(SceneFixture, ParseErrors) {
  EXPECT_THROW(parse_scene_fixture("{"), FormatError);
  EXPECT_THROW(parse_scene_fixture(R"({"id":"x"})"), SchemaError);
  EXPECT_THROW(parse_scene_fixture(R"({"id":"x","organs":[{"name":"kidney","center":[0,0],"radii":[1,1,1]}]})"),
               SchemaError);
}

TEST(PlanTrajectory, TwoPointsHitLandmarks) {
  WorldState w = fresh("kidney");
  const Trajectory& t = plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest", 2);
  ASSERT_EQ(t.poses.size(), 2u);
  EXPECT_EQ(t.poses[0].position, w.landmarks.at("right_costal_margin"));
  EXPECT_EQ(t.poses[1].position, w.landmarks.at("right_iliac_crest"));
}

TEST(PlanTrajectory, OnSurfaceWithUnitInwardNormals) {
  WorldState w = fresh("aorta");
  const Trajectory& t = plan_trajectory(w, "aorta", "xiphoid", "umbilicus", 50);
  ASSERT_EQ(t.poses.size(), 50u);
  for (const Pose& p : t.poses) {
    EXPECT_LT(std::abs(p.position.z - std::sqrt(150.0 * 150.0 - p.position.x * p.position.x)), 1e-6);
    EXPECT_LT(std::abs(norm(p.direction) - 1.0), 1e-9);
    EXPECT_LT(norm(p.direction - w.surface.inward_normal(p.position.x)), 1e-12);
  }
}

TEST(PlanTrajectory, RandomLandmarkPairsStayOnSurface) {
  std::mt19937_64 gen(3);
  WorldState w = fresh("liver");
  std::vector<std::string> names;
  for (const auto& [n, _] : w.landmarks) names.push_back(n);
  for (int i = 0; i < 300; ++i) {
    const auto& a = names[gen() % names.size()];
    const auto& b = names[gen() % names.size()];
    if (a == b) continue;
    const int n = 2 + static_cast<int>(gen() % 100);
    for (const Pose& p : plan_trajectory(w, "liver", a, b, n).poses) {
      EXPECT_LT(std::abs(p.position.z - w.surface.height(p.position.x)), 1e-6);
      EXPECT_LT(std::abs(norm(p.direction) - 1.0), 1e-9);
    }
  }
}

TEST(PlanTrajectory, Errors) {
  WorldState w = fresh("kidney");
  EXPECT_THROW(plan_trajectory(w, "kidney", "umbilicus", "umbilicus"), DegenerateTrajectory);
  EXPECT_THROW(plan_trajectory(w, "kidney", "umbilicus", "nose"), UnknownLandmark);
  EXPECT_THROW(plan_trajectory(w, "kidney", "umbilicus", "xiphoid", 1), InvalidArgument);
  EXPECT_THROW(plan_trajectory(w, "kidney", "umbilicus", "xiphoid", 501), InvalidArgument);
  EXPECT_TRUE(w.trajectories.empty());
}

TEST(ExecuteMotion, ProbeOverOrganCenterSeesItCentered) {
  WorldState w = fresh("kidney");
  const Organ& kidney = w.organs.at("kidney");
  const double x = surface_x_above(w.surface, kidney.center);
  const Pose p = w.surface.pose_at(x, kidney.center.y);
  const auto obs = observe_organ(p, kidney, 30.0);
  EXPECT_TRUE(obs.in_plane);
  EXPECT_LT(obs.lateral_offset / 30.0, 0.1);
}

TEST(ExecuteMotion, MatchesStripMinimumOracle) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ux(-140, 140), uy(-200, 200), ut(-60, 60), uc(-100, 100), ur(5, 80);
  int visible = 0, hidden = 0;
  for (int i = 0; i < 20000; ++i) {
    const Pose p = HalfCylinderSurface{}.pose_at(ux(gen), uy(gen), ut(gen) * kDeg);
    Organ o;
    o.center = p.position + 80.0 * normalized(p.direction) + Vec3{uc(gen), uc(gen), uc(gen) * 0.5};
    o.radii = {ur(gen), ur(gen), ur(gen)};
    const double m = strip_minimum(p, o, 30.0);
    if (std::abs(m - 1.0) < 1e-9) continue;
    const bool expect = m <= 1.0;
    EXPECT_EQ(observe_organ(p, o, 30.0).in_plane, expect) << "case " << i << " min " << m;
    (expect ? visible : hidden)++;
  }
  EXPECT_GT(visible, 1000);
  EXPECT_GT(hidden, 1000);
}

TEST(ExecuteMotion, GallbladderWithoutBreathHoldIsInvisible) {
  WorldState w = fresh("gallbladder");
  ASSERT_EQ(w.breath_hold_frames_remaining, 0);
  plan_trajectory(w, "gallbladder", "right_costal_margin", "right_iliac_crest", 40);
  const SweepRecord& s = execute_trajectory(w, 0, 10.0);
  for (const auto& f : s.frames) EXPECT_FALSE(f.organ_in_plane);
  EXPECT_FALSE(is_scan_successful(w, "gallbladder"));
}

TEST(ExecuteMotion, BreathHoldWindowGatesFrames) {
  WorldState w = fresh("gallbladder");
  center_organ_under(w, "gallbladder", -75.0, 0.0, 40.0);
  voice_guidance(w, "hold your breath");
  plan_trajectory(w, "gallbladder", "right_costal_margin", "right_iliac_crest", 100);
  const SweepRecord& s = execute_trajectory(w, 0, 10.0);
  for (std::size_t i = 60; i < s.frames.size(); ++i) EXPECT_FALSE(s.frames[i].organ_in_plane) << i;
  EXPECT_GT(s.visible_count(), 0u);
  EXPECT_EQ(w.breath_hold_frames_remaining, 0);
}

TEST(ExecuteMotion, FrameCountAndBreathHoldDecrement) {
  WorldState w = fresh("kidney");
  voice_guidance(w, "inhale");
  plan_trajectory(w, "kidney", "l1", "l5", 25);
  const auto& s = execute_trajectory(w, 0, 5.0);
  EXPECT_EQ(s.frames.size(), 25u);
  EXPECT_EQ(w.breath_hold_frames_remaining, 35);
  execute_trajectory(w, 0, 5.0);
  execute_trajectory(w, 0, 5.0);
  EXPECT_EQ(w.breath_hold_frames_remaining, 0);
  EXPECT_EQ(w.sweeps.size(), 3u);
}

TEST(ExecuteMotion, SpeedAndReferenceErrors) {
  WorldState w = fresh("kidney");
  EXPECT_THROW(resolve_trajectory(w, "latest"), UnknownTrajectory);
  plan_trajectory(w, "kidney", "l1", "l5");
  EXPECT_THROW(execute_trajectory(w, 0, 0.0), SpeedOutOfRange);
  EXPECT_THROW(execute_trajectory(w, 0, 50.5), SpeedOutOfRange);
  EXPECT_THROW(execute_trajectory(w, 3, 10.0), UnknownTrajectory);
  EXPECT_THROW(resolve_trajectory(w, "traj_1"), UnknownTrajectory);
  EXPECT_EQ(resolve_trajectory(w, "latest"), 0u);
  EXPECT_EQ(resolve_trajectory(w, "TRAJ_0"), 0u);
  EXPECT_NO_THROW(execute_trajectory(w, 0, 50.0));
}

TEST(ExecuteMotion, PoseTargetMovesProbeWithoutSweep) {
  WorldState w = fresh("spine");
  const auto r = execute_tool_call(w, {"execute_motion", {{"target", {0.0, 100.0, 20.0}}, {"speed", 10.0}}});
  ASSERT_TRUE(w.probe);
  EXPECT_TRUE(w.sweeps.empty());
  EXPECT_NEAR(r.payload.at("confidence").get<double>(), std::cos(20.0 * kDeg) * 3.0 / 5.0, 1e-12);
  EXPECT_THROW(execute_tool_call(w, {"execute_motion", {{"target", {0.0, 900.0, 0.0}}, {"speed", 10.0}}}),
               InvalidArgument);
}

TEST(ContactConfidence, ClosedFormCases) {
  const HalfCylinderSurface s;
  const Pose aligned = s.pose_at(30.0, 10.0);
  EXPECT_DOUBLE_EQ(contact_confidence(s, aligned, 5.0), 1.0);
  EXPECT_DOUBLE_EQ(contact_confidence(s, aligned, 12.0), 1.0);
  Pose perpendicular = aligned;
  perpendicular.direction = Vec3{0, 1, 0};
  EXPECT_DOUBLE_EQ(contact_confidence(s, perpendicular, 10.0), 0.0);
  const Pose tilted = s.pose_at(30.0, 10.0, 30.0 * kDeg);
  EXPECT_NEAR(contact_confidence(s, tilted, 2.5), 0.4330127018922193, 1e-12);
}

TEST(ContactConfidence, RangeMonotoneAndMaximizedAtNormal) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> ux(-149, 149), uf(0, 20), ud(-1, 1);
  const HalfCylinderSurface s;
  for (int i = 0; i < 2000; ++i) {
    Pose p = s.pose_at(ux(gen), 0.0);
    const double best = contact_confidence(s, p, 20.0);
    p.direction = normalized(Vec3{ud(gen), ud(gen), ud(gen)});
    const double f1 = uf(gen), f2 = uf(gen);
    const double c1 = contact_confidence(s, p, std::min(f1, f2));
    const double c2 = contact_confidence(s, p, std::max(f1, f2));
    EXPECT_GE(c1, 0.0);
    EXPECT_LE(c2, 1.0);
    EXPECT_LE(c1, c2);
    EXPECT_LE(contact_confidence(s, p, 20.0), best);
  }
}

TEST(AdjustContact, AlignsTiltedProbe) {
  WorldState w = fresh("kidney");
  w.probe = w.surface.pose_at(-40.0, 20.0, 30.0 * kDeg);
  w.force = 2.5;
  EXPECT_NEAR(current_confidence(w), 0.4330127018922193, 1e-12);
  const Vec3 before = w.probe->position;
  const auto adj = adjust_contact(w);
  EXPECT_EQ(w.probe->position, before);
  EXPECT_DOUBLE_EQ(adj.confidence_after, 1.0);
  EXPECT_DOUBLE_EQ(w.force, 5.0);
  EXPECT_EQ(w.adjustments.size(), 1u);
}

TEST(AdjustContact, FixedPointWhenAligned) {
  WorldState w = fresh("kidney");
  w.probe = w.surface.pose_at(10.0, 0.0);
  w.force = 10.0;
  const Pose before = *w.probe;
  adjust_contact(w);
  EXPECT_EQ(*w.probe, before);
  EXPECT_EQ(w.force, 10.0);
}

TEST(AdjustContact, NeverPlacedProbe) {
  WorldState w = fresh("kidney");
  EXPECT_THROW(adjust_contact(w), ProbeNotPlaced);
}

TEST(AdjustContact, IdempotentAndNonDecreasing) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> ux(-149, 149), uy(-200, 200), ut(-85, 85), uf(0, 15);
  WorldState w = fresh("liver");
  for (int i = 0; i < 1000; ++i) {
    w.probe = w.surface.pose_at(ux(gen), uy(gen), ut(gen) * kDeg);
    w.force = uf(gen);
    const double c0 = current_confidence(w);
    adjust_contact(w);
    const double c1 = current_confidence(w);
    const WorldState once = w;
    adjust_contact(w);
    EXPECT_GE(c1, c0);
    EXPECT_EQ(*w.probe, *once.probe);
    EXPECT_EQ(w.force, once.force);
    EXPECT_LE(w.force, w.config.force_max);
  }
}

TEST(AdjustContact, SweepReferenceMustExist) {
  WorldState w = fresh("kidney");
  w.probe = w.surface.pose_at(0.0, 0.0);
  EXPECT_THROW(adjust_contact(w, "sweep_0"), UnknownSweep);
}

TEST(VoiceGuidance, KeywordRule) {
  WorldState w = fresh("gallbladder");
  EXPECT_TRUE(voice_guidance(w, "Please take a deep BREATH and hold").breath_hold_started);
  EXPECT_EQ(w.breath_hold_frames_remaining, 60);
  WorldState relax = fresh("gallbladder");
  const WorldState before = relax;
  EXPECT_FALSE(voice_guidance(relax, "Please relax your arm").breath_hold_started);
  EXPECT_FALSE(voice_guidance(relax, "").breath_hold_started);
  EXPECT_EQ(relax.breath_hold_frames_remaining, before.breath_hold_frames_remaining);
  EXPECT_EQ(relax.voice_log.size(), 2u);
}

TEST(SegmentOrgan, ZeroNoiseIsExact) {
  WorldState w = fresh("kidney");
  w.config.segmentation_sigma = 0.0;
  plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(w, 0, 10.0);
  ASSERT_GT(w.sweeps[0].visible_count(), 0u);
  EXPECT_EQ(segment_organ(w, 0).value(), w.organs.at("kidney").center);
}

TEST(SegmentOrgan, NotVisibleAndDeterministic) {
  WorldState hidden = fresh("gallbladder");
  plan_trajectory(hidden, "gallbladder", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(hidden, 0, 10.0);
  EXPECT_FALSE(segment_organ(hidden, 0).has_value());
  EXPECT_THROW(segment_organ(hidden, 1), UnknownSweep);

  auto run = [] {
    WorldState w = fresh("kidney", 99);
    plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest");
    execute_trajectory(w, 0, 10.0);
    return segment_organ(w, 0).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(RefineTrajectory, CenteredSweepIsNoChange) {
  WorldState w = fresh("kidney");
  center_organ_under(w, "kidney", -60.0, 0.0);
  w.landmarks["right_costal_margin"] = w.surface.lift(-60.0, 90.0);
  w.landmarks["right_iliac_crest"] = w.surface.lift(-60.0, -60.0);
  plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(w, 0, 10.0);
  EXPECT_FALSE(refine_trajectory(w, 0).has_value());
  EXPECT_EQ(w.trajectories.size(), 1u);
  EXPECT_TRUE(is_scan_successful(w, "kidney"));
}

TEST(RefineTrajectory, OffCenterSweepIsReplannedOverOrgan) {
  WorldState w = fresh("kidney");
  w.config.segmentation_sigma = 0.0;
  w.landmarks["right_costal_margin"] = w.surface.lift(-60.0, 90.0);
  w.landmarks["right_iliac_crest"] = w.surface.lift(-60.0, -60.0);
  center_organ_under(w, "kidney", -60.0, 13.5);
  plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(w, 0, 10.0);
  EXPECT_NEAR(w.sweeps[0].mean_offset_ratio().value(), 0.45, 1e-9);
  EXPECT_TRUE(evaluate_condition({ConditionKind::organ_off_center, 0.3}, w));
  const auto idx = refine_trajectory(w, 0);
  ASSERT_TRUE(idx.has_value());
  const Trajectory& t = w.trajectories[*idx];
  EXPECT_EQ(t.refined_from, std::optional<std::size_t>(0));
  for (const Pose& p : t.poses) EXPECT_LT(std::abs(p.position.z - w.surface.height(p.position.x)), 1e-6);
  const Pose mid = t.poses[t.poses.size() / 2];
  EXPECT_LT(std::abs(dot(image_frame(mid).lateral, w.organs.at("kidney").center - mid.position)), 1e-9);
  execute_trajectory(w, *idx, 10.0);
  EXPECT_LT(w.sweeps[1].mean_offset_ratio().value(), 1e-9);
  EXPECT_TRUE(is_scan_successful(w, "kidney"));
}

// With 2 mm noise per axis the midpoint lateral error is close to N(0, 2 mm),
// so |error| < 3 mm holds with probability 2*Phi(1.5) - 1 = 0.866, not 0.95.
TEST(RefineTrajectory, LateralErrorFollowsSegmentationNoise) {
  int n = 0, pass = 0;
  double sum_sq = 0.0;
  for (std::uint64_t seed = 0; n < 1000; ++seed) {
    WorldState w = fresh("kidney", seed);
    plan_trajectory(w, "kidney", "right_costal_margin", "right_iliac_crest");
    execute_trajectory(w, 0, 10.0);
    const auto idx = refine_trajectory(w, 0);
    if (!idx) continue;
    const Trajectory& t = w.trajectories[*idx];
    const Pose mid = t.poses[t.poses.size() / 2];
    const double err = dot(image_frame(mid).lateral, w.organs.at("kidney").center - mid.position);
    ++n;
    pass += std::abs(err) < 3.0 ? 1 : 0;
    sum_sq += err * err;
  }
  const double expected = std::erf(1.5 / std::sqrt(2.0));
  const double rate = static_cast<double>(pass) / n;
  EXPECT_NEAR(rate, expected, 4.0 * std::sqrt(expected * (1 - expected) / n));
  EXPECT_NEAR(std::sqrt(sum_sq / n), 2.0, 0.2);
}

TEST(RefineTrajectory, InvisibleSweepCannotBeRefined) {
  WorldState w = fresh("gallbladder");
  plan_trajectory(w, "gallbladder", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(w, 0, 10.0);
  EXPECT_THROW(refine_trajectory(w, 0), RefineImpossible);
  EXPECT_THROW(refine_trajectory(w, 4), UnknownSweep);
}

TEST(Conditions, Predicates) {
  WorldState w = fresh("kidney");
  EXPECT_FALSE(evaluate_condition({ConditionKind::confidence_below, 0.8}, w) == false) << "unplaced probe has zero";
  w.probe = w.surface.pose_at(0.0, 0.0);
  w.force = 3.75;  // confidence 0.75
  EXPECT_TRUE(evaluate_condition({ConditionKind::confidence_below, 0.8}, w));
  EXPECT_FALSE(evaluate_condition({ConditionKind::confidence_at_least, 0.8}, w));
  EXPECT_TRUE(evaluate_condition({ConditionKind::confidence_at_least, 0.75}, w));
  EXPECT_THROW(evaluate_condition({ConditionKind::organ_visible, std::nullopt}, w), NoSweepYet);
  EXPECT_THROW(evaluate_condition({ConditionKind::organ_off_center, 0.2}, w), NoSweepYet);
  EXPECT_FALSE(evaluate_condition({ConditionKind::breath_hold_active, std::nullopt}, w));
  voice_guidance(w, "hold");
  EXPECT_TRUE(evaluate_condition({ConditionKind::breath_hold_active, std::nullopt}, w));
}

TEST(Conditions, VisibilityFromSweep) {
  WorldState w = fresh("gallbladder");
  plan_trajectory(w, "gallbladder", "right_costal_margin", "right_iliac_crest");
  execute_trajectory(w, 0, 10.0);
  EXPECT_FALSE(evaluate_condition({ConditionKind::organ_visible, std::nullopt}, w));
  EXPECT_TRUE(evaluate_condition({ConditionKind::organ_off_center, 0.2}, w));
  voice_guidance(w, "deep breath");
  execute_trajectory(w, 0, 10.0);
  EXPECT_TRUE(evaluate_condition({ConditionKind::organ_visible, std::nullopt}, w));
}

TEST(ScanSuccess, NeedsSweep) {
  const WorldState w = fresh("kidney");
  EXPECT_THROW(is_scan_successful(w, "kidney"), NoSweepYet);
}

TEST(WorldDeterminism, SameCallSequenceSameState) {
  auto run = [] {
    WorldState w = fresh("gallbladder", 42);
    voice_guidance(w, "breathe in and hold");
    plan_trajectory(w, "gallbladder", "right_costal_margin", "right_iliac_crest", 40);
    execute_trajectory(w, 0, 8.0);
    const auto idx = refine_trajectory(w, 0);
    voice_guidance(w, "hold again");
    if (idx) execute_trajectory(w, *idx, 8.0);
    adjust_contact(w);
    return w;
  };
  const WorldState a = run(), b = run();
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize_world(a), serialize_world(b));
  EXPECT_EQ(world_digest(a), world_digest(b));
}
