#pragma once

#include <cmath>
#include <numbers>

namespace imitdrive {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline Vec2 unit_from_angle(double a) { return {std::cos(a), std::sin(a)}; }

/// Right-hand normal of a direction given by its heading angle.
inline Vec2 right_normal(double heading) { return {std::sin(heading), -std::cos(heading)}; }

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

constexpr double deg_to_rad(double d) { return d * kPi / 180.0; }
constexpr double rad_to_deg(double r) { return r * 180.0 / kPi; }
constexpr double kmh_to_ms(double v) { return v / 3.6; }
constexpr double ms_to_kmh(double v) { return v * 3.6; }

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a - kPi;
}

/// x mod m into [0, m).
inline double wrap_positive(double x, double m) {
  double r = std::fmod(x, m);
  if (r < 0.0) r += m;
  if (r >= m) r = 0.0;
  return r;
}

/// Oriented rectangle: center, unit axis along its length, half extents
/// (along, across).
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double half_along = 0.0;
  double half_across = 0.0;

  Vec2 axis_along() const { return unit_from_angle(heading); }
  Vec2 axis_across() const { return {-std::sin(heading), std::cos(heading)}; }
};

/// Separating-axis overlap test for two oriented rectangles.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 axes[4] = {a.axis_along(), a.axis_across(), b.axis_along(), b.axis_across()};
  const Vec2 d = b.center - a.center;
  for (const Vec2& ax : axes) {
    const double ra = a.half_along * std::abs(dot(a.axis_along(), ax)) +
                      a.half_across * std::abs(dot(a.axis_across(), ax));
    const double rb = b.half_along * std::abs(dot(b.axis_along(), ax)) +
                      b.half_across * std::abs(dot(b.axis_across(), ax));
    if (std::abs(dot(d, ax)) > ra + rb) return false;
  }
  return true;
}

/// Distance along a unit ray to the box boundary, or +inf when missed.
/// Returns 0 when the origin is inside.
inline double ray_box(Vec2 origin, Vec2 dir, const OrientedBox& box) {
  const Vec2 rel = origin - box.center;
  const Vec2 u = box.axis_along();
  const Vec2 v = box.axis_across();
  const double o[2] = {dot(rel, u), dot(rel, v)};
  const double r[2] = {dot(dir, u), dot(dir, v)};
  const double h[2] = {box.half_along, box.half_across};
  double tmin = 0.0;
  double tmax = INFINITY;
  for (int i = 0; i < 2; ++i) {
    if (std::abs(r[i]) < 1e-15) {
      if (std::abs(o[i]) > h[i]) return INFINITY;
      continue;
    }
    double t1 = (-h[i] - o[i]) / r[i];
    double t2 = (h[i] - o[i]) / r[i];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return INFINITY;
  }
  return tmin;
}

/// Distance along a unit ray to a segment, or +inf.
inline double ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
  const Vec2 e = b - a;
  const double den = cross(dir, e);
  if (std::abs(den) < 1e-15) return INFINITY;
  const Vec2 w = a - origin;
  const double t = cross(w, e) / den;
  const double u = cross(w, dir) / den;
  if (t < 0.0 || u < 0.0 || u > 1.0) return INFINITY;
  return t;
}

/// Circular arc: points center + radius * (cos phi, sin phi) for phi from
/// start_angle sweeping by `sweep` (signed).
struct Arc {
  Vec2 center;
  double radius = 0.0;
  double start_angle = 0.0;
  double sweep = 0.0;

  bool contains_angle(double phi) const {
    double rel = (sweep >= 0.0) ? phi - start_angle : start_angle - phi;
    rel = wrap_positive(rel, kTwoPi);
    return rel <= std::abs(sweep) + 1e-12;
  }
};

/// Distance along a unit ray to an arc, or +inf.
inline double ray_arc(Vec2 origin, Vec2 dir, const Arc& arc) {
  const Vec2 f = origin - arc.center;
  const double b = dot(f, dir);
  const double c = dot(f, f) - arc.radius * arc.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return INFINITY;
  const double sq = std::sqrt(disc);
  for (double t : {-b - sq, -b + sq}) {
    if (t < 0.0) continue;
    const Vec2 p = f + dir * t;
    if (arc.contains_angle(std::atan2(p.y, p.x))) return t;
  }
  return INFINITY;
}

}  // namespace imitdrive
