// Copyright 2026 The Tandem Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TANDEM_GEOMETRY_HPP_
#define TANDEM_GEOMETRY_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

namespace tandem {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = std::numbers::pi;

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

inline Mat2 rotation(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

// 2D cross product (z component).
inline double cross(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Planar rigid transform: rotation by `heading` followed by translation.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  Vec2 transform(const Vec2& local) const {
    return position() + rotation(heading) * local;
  }
  Vec2 inverse_transform(const Vec2& world) const {
    return rotation(-heading) * (world - position());
  }
  bool operator==(const Pose2&) const = default;
};

struct Segment {
  Vec2 a;
  Vec2 b;
};

// Closest distance between a point and a segment.
inline double point_segment_distance(const Vec2& p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = d.squaredNorm();
  double t = len2 > 0.0 ? (p - s.a).dot(d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (s.a + t * d - p).norm();
}

inline bool segments_intersect(const Segment& s, const Segment& t) {
  const Vec2 r = s.b - s.a;
  const Vec2 q = t.b - t.a;
  const double denom = cross(r, q);
  const Vec2 w = t.a - s.a;
  if (denom == 0.0) {
    // Parallel: intersect only if collinear and overlapping.
    if (cross(w, r) != 0.0) return false;
    const double rr = r.squaredNorm();
    if (rr == 0.0) return point_segment_distance(s.a, t) == 0.0;
    const double t0 = w.dot(r) / rr;
    const double t1 = (t.b - s.a).dot(r) / rr;
    return std::max(std::min(t0, t1), 0.0) <= std::min(std::max(t0, t1), 1.0);
  }
  const double u = cross(w, q) / denom;
  const double v = cross(w, r) / denom;
  return u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0;
}

inline double segment_segment_distance(const Segment& s, const Segment& t) {
  if (segments_intersect(s, t)) return 0.0;
  return std::min({point_segment_distance(s.a, t), point_segment_distance(s.b, t),
                   point_segment_distance(t.a, s), point_segment_distance(t.b, s)});
}

// Ray parameter (distance along unit `dir`) at which the ray from `origin`
// hits segment `s`, if any.
inline std::optional<double> ray_segment_hit(const Vec2& origin, const Vec2& dir,
                                             const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double denom = cross(dir, e);
  if (denom == 0.0) return std::nullopt;
  const Vec2 w = s.a - origin;
  const double t = cross(w, e) / denom;
  const double u = cross(w, dir) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

// Oriented rectangle centered at `pose` with half extents along its local axes.
struct OrientedBox {
  Pose2 pose;
  Vec2 half_extents;

  std::array<Vec2, 4> corners() const {
    const double hx = half_extents.x();
    const double hy = half_extents.y();
    return {pose.transform({hx, hy}), pose.transform({-hx, hy}),
            pose.transform({-hx, -hy}), pose.transform({hx, -hy})};
  }
  std::array<Segment, 4> edges() const {
    const auto c = corners();
    return {Segment{c[0], c[1]}, Segment{c[1], c[2]}, Segment{c[2], c[3]},
            Segment{c[3], c[0]}};
  }
  bool contains(const Vec2& p) const {
    const Vec2 l = pose.inverse_transform(p);
    return std::abs(l.x()) <= half_extents.x() && std::abs(l.y()) <= half_extents.y();
  }
  bool intersects(const Segment& s) const {
    if (contains(s.a) || contains(s.b)) return true;
    for (const auto& e : edges()) {
      if (segments_intersect(e, s)) return true;
    }
    return false;
  }
};

}  // namespace tandem

#endif  // TANDEM_GEOMETRY_HPP_
