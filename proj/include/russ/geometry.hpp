#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace russ {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  return n > 0.0 ? (1.0 / n) * a : a;
}

/// Probe pose: contact position (mm) and unit beam direction.
struct Pose {
  Vec3 position;
  Vec3 direction{0.0, 0.0, -1.0};

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Half-cylinder abdomen whose axis runs cranio-caudally along y.
///
/// Height z(x) = sqrt(max(0, R^2 - x^2)); outside |x| < R the surface is the
/// table plane z = 0.
struct HalfCylinderSurface {
  double radius = 150.0;
  double x_min = -200.0;
  double x_max = 200.0;
  double y_min = -250.0;
  double y_max = 250.0;

  double height(double x) const { return std::sqrt(std::max(0.0, radius * radius - x * x)); }

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }

  Vec3 lift(double x, double y) const { return {x, y, height(x)}; }

  friend bool operator==(const HalfCylinderSurface&, const HalfCylinderSurface&) = default;

  /// Unit normal pointing into the body at the footprint (x, ·).
  Vec3 inward_normal(double x) const {
    if (std::abs(x) >= radius) return {x > 0.0 ? -1.0 : 1.0, 0.0, 0.0};
    return normalized(Vec3{-x, 0.0, -height(x)});
  }

  /// Pose at (x, y) whose beam is the inward normal tilted by `tilt_rad`
  /// about the cranio-caudal axis.
  Pose pose_at(double x, double y, double tilt_rad = 0.0) const {
    const Vec3 n = inward_normal(x);
    if (tilt_rad == 0.0) return {lift(x, y), n};
    const double c = std::cos(tilt_rad);
    const double s = std::sin(tilt_rad);
    Vec3 d{n.x * c + n.z * s, 0.0, -n.x * s + n.z * c};
    return {lift(x, y), normalized(d)};
  }
};

}  // namespace russ
