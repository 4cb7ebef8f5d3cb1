#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tofg/geometry.hpp"

using namespace tofg;
using namespace tofg::geometry;

TEST(Resample, ThreeMetreLineGivesTenPieces) {
  const std::vector<Vec2> pts{{0, 0}, {3, 0}};
  const auto segs = resample_polyline(pts, 0.3);
  ASSERT_EQ(segs.size(), 10u);
  for (std::size_t k = 0; k < segs.size(); ++k) {
    EXPECT_NEAR(segs[k].length(), 0.3, 1e-12);
    EXPECT_NEAR(segs[k].p1.x, 0.3 * k, 1e-12);
  }
}

TEST(Resample, OneMetreLineGivesThirds) {
  const std::vector<Vec2> pts{{0, 0}, {1, 0}};
  const auto segs = resample_polyline(pts, 0.3);
  ASSERT_EQ(segs.size(), 3u);
  for (const auto& s : segs) EXPECT_NEAR(s.length(), 1.0 / 3.0, 1e-12);
}

TEST(Resample, ShortLineKeepsOnePiece) {
  const std::vector<Vec2> pts{{0, 0}, {0.1, 0}};
  EXPECT_EQ(resample_polyline(pts, 0.3).size(), 1u);
}

TEST(Resample, DegenerateInputThrows) {
  const std::vector<Vec2> same{{1, 1}, {1, 1}};
  EXPECT_THROW(resample_polyline(same, 0.3), GeometryError);
  const std::vector<Vec2> single{{1, 1}};
  EXPECT_THROW(resample_polyline(single, 0.3), GeometryError);
  const std::vector<Vec2> ok{{0, 0}, {1, 0}};
  EXPECT_THROW(resample_polyline(ok, 0.0), GeometryError);
}

TEST(Resample, BentPolylineMatchesArcLengthOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec2> pts{{U(rng), U(rng)}};
    for (int k = 0; k < 4; ++k) pts.push_back(pts.back() + Vec2{std::abs(U(rng)) + 0.5, U(rng)});
    double L = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) L += distance(pts[i - 1], pts[i]);
    const auto segs = resample_polyline(pts, 0.3);
    const auto n = static_cast<std::size_t>(std::max(1.0, std::round(L / 0.3)));
    ASSERT_EQ(segs.size(), n);
    double arc_sum = 0;
    for (std::size_t k = 0; k < n; ++k) {
      arc_sum += segs[k].arc_length;
      const Vec2 expect = oracle::point_at_arc(pts, L * static_cast<double>(k) / static_cast<double>(n));
      EXPECT_NEAR(segs[k].p1.x, expect.x, 1e-9);
      EXPECT_NEAR(segs[k].p1.y, expect.y, 1e-9);
      if (k > 0) EXPECT_EQ(segs[k].p1, segs[k - 1].p2);
      // A chord never exceeds the path it spans.
      EXPECT_LE(segs[k].length(), segs[k].arc_length + 1e-12);
    }
    EXPECT_NEAR(arc_sum, L, 1e-9 * L);
    EXPECT_EQ(segs.front().p1, pts.front());
    EXPECT_EQ(segs.back().p2, pts.back());
  }
}

TEST(ExpandSegment, AxisAlignedCases) {
  const auto r = expand_segment({{0, 0}, {0.3, 0}, 0.3}, 3.0);
  EXPECT_NEAR(r.center.x, 0.15, 1e-15);
  EXPECT_NEAR(r.center.y, 0.0, 1e-15);
  EXPECT_NEAR(r.heading, 0.0, 1e-15);
  EXPECT_NEAR(r.half_length, 0.15, 1e-15);
  EXPECT_NEAR(r.half_width, 1.5, 1e-15);
  EXPECT_NEAR(expand_segment({{0, 0}, {0, 0.3}, 0.3}, 3.0).heading, M_PI / 2, 1e-15);
}

TEST(ExpandSegment, AreaIsLengthTimesWidth) {
  for (double a = -3.0; a < 3.0; a += 0.7) {
    const Segment s{{1, 2}, Vec2{1, 2} + direction(a) * 0.8, 0.8};
    EXPECT_NEAR(expand_segment(s, 3.5).area(), 0.8 * 3.5, 1e-12);
  }
}

TEST(Rects, BasicCases) {
  const OrientedRect a{{0, 0}, 0.3, 1, 0.5};
  EXPECT_TRUE(rects_intersect(a, a));
  const OrientedRect u1{{0, 0}, 0, 0.5, 0.5}, u2{{10, 0}, 0, 0.5, 0.5};
  EXPECT_FALSE(rects_intersect(u1, u2));
  // Touching edges count.
  const OrientedRect t{{1, 0}, 0, 0.5, 0.5};
  EXPECT_TRUE(rects_intersect(u1, t));
}

TEST(Rects, AgreesWithSamplingOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0, 1);
  int decided = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const OrientedRect a{{U(rng) * 4, U(rng) * 4}, U(rng) * 6 - 3, 0.2 + U(rng) * 1.5, 0.2 + U(rng)};
    const OrientedRect b{{U(rng) * 4, U(rng) * 4}, U(rng) * 6 - 3, 0.2 + U(rng) * 1.5, 0.2 + U(rng)};
    // Dense grid over a; any hit inside b (with margin) proves overlap, and
    // the oracle also needs every grid point well outside b to call it disjoint.
    const int n = 100;
    bool deep_hit = false, near_boundary = false;
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; j <= n; ++j) {
        const double u = (2.0 * i / n - 1.0) * a.half_length, v = (2.0 * j / n - 1.0) * a.half_width;
        const Vec2 p = a.center + a.axis_u() * u + a.axis_v() * v;
        const double depth = oracle::inside_depth({b.center, b.heading, b.half_length, b.half_width}, p);
        if (depth > 1e-3) deep_hit = true;
        if (std::abs(depth) <= 0.05) near_boundary = true;
      }
    }
    const bool got = rects_intersect(a, b);
    EXPECT_EQ(got, rects_intersect(b, a));
    if (deep_hit) {
      EXPECT_TRUE(got);
      ++decided;
    } else if (!near_boundary) {
      // Grid spacing is below 0.04 m, so no grid point within 0.05 m means the
      // closed rectangles are apart.
      const auto robust = oracle::meet_robust({a.center, a.heading, a.half_length, a.half_width},
                                              {b.center, b.heading, b.half_length, b.half_width}, 1e-3);
      if (robust) {
        EXPECT_EQ(got, *robust);
        ++decided;
      }
    }
  }
  EXPECT_GT(decided, 200);
}

TEST(Rects, RigidMotionPreservesAnswer) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const OrientedRect a{{U(rng) * 3, U(rng) * 3}, U(rng) * 6 - 3, 0.2 + U(rng), 0.2 + U(rng)};
    const OrientedRect b{{U(rng) * 3, U(rng) * 3}, U(rng) * 6 - 3, 0.2 + U(rng), 0.2 + U(rng)};
    const auto robust = oracle::meet_robust({a.center, a.heading, a.half_length, a.half_width},
                                            {b.center, b.heading, b.half_length, b.half_width}, 1e-6);
    if (!robust) continue;
    const Frame2D f{{U(rng) * 50, U(rng) * 50}, U(rng) * 6 - 3};
    auto move = [&](const OrientedRect& r) {
      return OrientedRect{from_frame(r.center, f), wrap_angle(r.heading + f.heading), r.half_length, r.half_width};
    };
    EXPECT_EQ(rects_intersect(a, b), rects_intersect(move(a), move(b)));
  }
}

TEST(Frames, IdentityOriginAndRoundTrip) {
  const Frame2D id{{0, 0}, 0};
  const Vec2 p{3.5, -2.25};
  EXPECT_EQ(to_frame(p, id), p);
  const Frame2D f{{4, 5}, 1.1};
  const Vec2 o = to_frame(f.origin, f);
  EXPECT_NEAR(o.x, 0, 1e-15);
  EXPECT_NEAR(o.y, 0, 1e-15);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-100, 100);
  for (int i = 0; i < 100; ++i) {
    const Frame2D g{{U(rng), U(rng)}, wrap_angle(U(rng))};
    const Vec2 q{U(rng), U(rng)};
    const Vec2 back = from_frame(to_frame(q, g), g);
    EXPECT_NEAR(back.x, q.x, 1e-12);
    EXPECT_NEAR(back.y, q.y, 1e-12);
  }
  // Rotation by -heading after translation.
  const Vec2 r = to_frame({4, 6}, {{4, 5}, M_PI / 2});
  EXPECT_NEAR(r.x, 1.0, 1e-15);
  EXPECT_NEAR(r.y, 0.0, 1e-15);
}

TEST(WrapAngle, HalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(M_PI), M_PI);
  EXPECT_DOUBLE_EQ(wrap_angle(-M_PI), M_PI);
  EXPECT_NEAR(wrap_angle(M_PI + 0.1), -M_PI + 0.1, 1e-12);
  EXPECT_NEAR(wrap_angle(7 * M_PI / 2), -M_PI / 2, 1e-12);
  for (double a = -20; a < 20; a += 0.37) {
    const double w = wrap_angle(a);
    EXPECT_GT(w, -M_PI);
    EXPECT_LE(w, M_PI);
  }
}
