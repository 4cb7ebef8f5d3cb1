#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tofg/error.hpp"

namespace tofg::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend constexpr bool operator==(Vec2 a, Vec2 b) = default;
};

inline constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

/// Unit vector pointing along `heading`.
inline Vec2 direction(double heading) { return {std::cos(heading), std::sin(heading)}; }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (a > -kPi && a <= kPi) return a;
  double r = std::fmod(a + kPi, kTwoPi);
  if (r <= 0.0) r += kTwoPi;
  return r - kPi;
}

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

/// Directed lane segment p1 -> p2. `arc_length` is the length of polyline
/// path the segment spans; it equals the chord length unless the segment cuts
/// across a polyline vertex.
struct Segment {
  Vec2 p1;
  Vec2 p2;
  double arc_length = 0.0;

  Vec2 midpoint() const { return (p1 + p2) * 0.5; }
  Vec2 vector() const { return p2 - p1; }
  double length() const { return norm(p2 - p1); }
  double heading() const { return std::atan2(p2.y - p1.y, p2.x - p1.x); }
};

struct OrientedRect {
  Vec2 center;
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  Vec2 axis_u() const { return direction(heading); }
  Vec2 axis_v() const { return {-std::sin(heading), std::cos(heading)}; }

  std::array<Vec2, 4> corners() const {
    const Vec2 u = axis_u() * half_length;
    const Vec2 v = axis_v() * half_width;
    return {center + u + v, center - u + v, center - u - v, center + u - v};
  }

  /// Closed containment: boundary points count as inside.
  bool contains(Vec2 p, double tolerance = 0.0) const {
    const Vec2 d = p - center;
    return std::abs(dot(d, axis_u())) <= half_length + tolerance &&
           std::abs(dot(d, axis_v())) <= half_width + tolerance;
  }

  double area() const { return 4.0 * half_length * half_width; }
};

struct Frame2D {
  Vec2 origin;
  double heading = 0.0;
};

/// Cuts a polyline into n = max(1, round(L / target_len)) pieces of equal arc
/// length L / n. Piece endpoints lie on the polyline.
inline std::vector<Segment> resample_polyline(std::span<const Vec2> points, double target_len) {
  if (!(target_len > 0.0)) {
    throw GeometryError("resample_polyline: target_len must be > 0");
  }
  if (points.size() < 2) {
    throw GeometryError("resample_polyline: polyline needs at least 2 points");
  }
  std::vector<double> cumulative(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) {
    cumulative[i] = cumulative[i - 1] + distance(points[i - 1], points[i]);
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) {
    throw GeometryError("resample_polyline: degenerate polyline (zero arc length)");
  }
  const auto n = static_cast<std::size_t>(std::max(1.0, std::round(total / target_len)));
  const double step = total / static_cast<double>(n);

  std::size_t cursor = 0;
  auto point_at = [&](double s) {
    while (cursor + 2 < points.size() && cumulative[cursor + 1] < s) ++cursor;
    const double span = cumulative[cursor + 1] - cumulative[cursor];
    const double t = span > 0.0 ? std::clamp((s - cumulative[cursor]) / span, 0.0, 1.0) : 0.0;
    return points[cursor] + (points[cursor + 1] - points[cursor]) * t;
  };

  std::vector<Segment> out;
  out.reserve(n);
  Vec2 prev = points.front();
  for (std::size_t k = 1; k <= n; ++k) {
    const Vec2 next = k == n ? points.back() : point_at(step * static_cast<double>(k));
    out.push_back(Segment{prev, next, step});
    prev = next;
  }
  return out;
}

inline OrientedRect expand_segment(const Segment& seg, double lane_width) {
  if (!(lane_width > 0.0)) throw GeometryError("expand_segment: lane_width must be > 0");
  const double len = seg.length();
  if (!(len > 0.0)) throw GeometryError("expand_segment: zero-length segment");
  return OrientedRect{seg.midpoint(), wrap_angle(seg.heading()), 0.5 * len, 0.5 * lane_width};
}

namespace detail {

inline void project(const OrientedRect& r, Vec2 axis, double& lo, double& hi) {
  const double c = dot(r.center, axis);
  const double extent = r.half_length * std::abs(dot(r.axis_u(), axis)) +
                        r.half_width * std::abs(dot(r.axis_v(), axis));
  lo = c - extent;
  hi = c + extent;
}

}  // namespace detail

/// Separating-axis test on the two edge normals of each rectangle. Closed
/// semantics: touching rectangles intersect.
inline bool rects_intersect(const OrientedRect& a, const OrientedRect& b) {
  const std::array<Vec2, 4> axes = {a.axis_u(), a.axis_v(), b.axis_u(), b.axis_v()};
  for (const Vec2& axis : axes) {
    double a_lo, a_hi, b_lo, b_hi;
    detail::project(a, axis, a_lo, a_hi);
    detail::project(b, axis, b_lo, b_hi);
    if (a_hi < b_lo || b_hi < a_lo) return false;
  }
  return true;
}

/// p' = R(-heading) * (p - origin)
inline Vec2 to_frame(Vec2 p, const Frame2D& f) {
  const Vec2 d = p - f.origin;
  const double c = std::cos(f.heading);
  const double s = std::sin(f.heading);
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

inline Vec2 from_frame(Vec2 p, const Frame2D& f) {
  const double c = std::cos(f.heading);
  const double s = std::sin(f.heading);
  return Vec2{c * p.x - s * p.y, s * p.x + c * p.y} + f.origin;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return distance(p, a + ab * t);
}

/// Axis-aligned bounds of a rectangle, used as a cheap pre-filter.
struct Bounds {
  double min_x, min_y, max_x, max_y;

  bool overlaps(const Bounds& o) const {
    return !(max_x < o.min_x || o.max_x < min_x || max_y < o.min_y || o.max_y < min_y);
  }
};

inline Bounds bounds_of(const OrientedRect& r) {
  const Vec2 u = r.axis_u();
  const Vec2 v = r.axis_v();
  const double ex = r.half_length * std::abs(u.x) + r.half_width * std::abs(v.x);
  const double ey = r.half_length * std::abs(u.y) + r.half_width * std::abs(v.y);
  // Slack absorbs rounding so the filter never rejects a touching pair.
  constexpr double kSlack = 1e-9;
  return {r.center.x - ex - kSlack, r.center.y - ey - kSlack, r.center.x + ex + kSlack,
          r.center.y + ey + kSlack};
}

}  // namespace tofg::geometry
