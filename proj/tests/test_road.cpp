#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "supdrive/road.hpp"

using namespace supdrive;

namespace {

RoadGeneratorConfig twisty(int segments) {
  RoadGeneratorConfig c;
  c.min_segments = c.max_segments = segments;
  c.max_curvature = 0.02;
  c.min_segment_length = 20;
  c.max_segment_length = 60;
  c.min_total_length = 0;
  return c;
}

}  // namespace

TEST(GenerateRoad, ZeroCurvatureBoundGivesStraightRoad) {
  RoadGeneratorConfig c;
  c.max_curvature = 0.0;
  const Road road(generate_road(c, 3));
  for (const auto& s : road.spec().segments) EXPECT_EQ(s.curvature, 0.0);
  for (double a = 0; a < road.total_length(); a += 37.0)
    EXPECT_NEAR(road.heading_at(a), road.spec().start_pose.heading, 1e-15);
}

TEST(GenerateRoad, SameSeedSameSpec) {
  RoadGeneratorConfig c;
  const nlohmann::json a = generate_road(c, 42);
  const nlohmann::json b = generate_road(c, 42);
  EXPECT_EQ(a.dump(), b.dump());
  const nlohmann::json other = generate_road(c, 43);
  EXPECT_NE(a.dump(), other.dump());
}

TEST(GenerateRoad, CurvatureBoundHoldsOnEverySegment) {
  RoadGeneratorConfig c;
  c.min_segments = c.max_segments = 10;
  c.max_curvature = 0.01;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const RoadSpec s = generate_road(c, seed);
    ASSERT_GE(s.segments.size(), 10u);
    double total = 0;
    for (const auto& seg : s.segments) {
      EXPECT_LE(std::abs(seg.curvature), 0.01);
      total += seg.length;
    }
    EXPECT_GE(total, c.min_total_length);
  }
}

TEST(GenerateRoad, RejectsInvalidConfig) {
  RoadGeneratorConfig c;
  c.lane_half_width = 0;
  EXPECT_THROW(generate_road(c, 1), ConfigError);
  c = {};
  c.min_segment_length = -1;
  EXPECT_THROW(generate_road(c, 1), ConfigError);
  c = {};
  c.max_curvature = 0.2;
  EXPECT_THROW(generate_road(c, 1), ConfigError);
}

TEST(RoadSpecJson, RoundTripCarriesSchemaVersion) {
  const RoadSpec s = generate_road(RoadGeneratorConfig{}, 9);
  const nlohmann::json j = s;
  EXPECT_EQ(j.at("schema_version").get<int>(), kRoadSchemaVersion);
  const RoadSpec back = j.get<RoadSpec>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
}

TEST(LaneQuery, CenterlineOfStraightRoad) {
  const Road road(Road::default_straight());
  const LaneQuery q = lane_query({100.0, 0.0}, road);
  EXPECT_EQ(q.lateral_offset, 0.0);
  EXPECT_TRUE(q.on_lane);
}

TEST(LaneQuery, JustOutsideLeftBoundary) {
  const Road road(Road::default_straight());
  const double w = road.lane_half_width();
  const LaneQuery q = lane_query({100.0, w + 0.1}, road);
  EXPECT_FALSE(q.on_lane);
  EXPECT_NEAR(q.lateral_offset, w + 0.1, 1e-12);
  EXPECT_NEAR(lane_query({100.0, -(w + 0.1)}, road).lateral_offset, -(w + 0.1), 1e-12);
}

TEST(LaneQuery, AnalyticCenterlinePointsHaveZeroOffset) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Road road(generate_road(twisty(8), seed));
    for (double a = 0; a <= road.total_length(); a += road.total_length() / 97)
      EXPECT_EQ(road.lane_query(road.point_at(a)).lateral_offset, 0.0) << "arc " << a;
  }
}

TEST(LaneQuery, AgreesWithDenseCenterlineSampling) {
  const RoadSpec spec = generate_road(twisty(6), 5);
  const Road road(spec);
  const auto samples = oracle::dense_centerline(spec, 0.01);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> arc(0, road.total_length()), lat(-4.0, 4.0);
  for (int i = 0; i < 300; ++i) {
    const double a = arc(gen);
    const Vec2 c = road.point_at(a);
    const double h = road.heading_at(a);
    const double d = lat(gen);
    const Vec2 p{c.x - std::sin(h) * d, c.y + std::cos(h) * d};
    const double expect = oracle::nearest_sample_offset(samples, p.x, p.y);
    EXPECT_LT(std::abs(road.lane_query(p).lateral_offset - expect), spec.raster_resolution);
  }
}

TEST(Probes, PerpendicularRaysOnStraightRoadCenterline) {
  const Road road(Road::default_straight());
  const ProbeSet p = probe_distances({500.0, 0.0, 0.0}, road);
  // Rays at 1.57 rad reach the boundary at w / sin(1.57).
  const double expect = 1.75 / std::sin(1.57);
  EXPECT_NEAR(p.d_left_157, expect, 1e-6);
  EXPECT_NEAR(p.d_right_157, expect, 1e-6);
  EXPECT_NEAR(p.d_left_04, 1.75 / std::sin(0.4), 1e-6);
  EXPECT_EQ(p.d_ahead, kDefaultProbeRange);
  EXPECT_EQ(probe_distances({500.0, 0.0, 0.0}, road, 20.0).d_ahead, 20.0);
}

TEST(Probes, OffLanePoseGivesAllNegative) {
  const Road road(Road::default_straight());
  const ProbeSet p = probe_distances({500.0, 2.5, 0.3}, road);
  for (double d : p.as_array()) EXPECT_LT(d, 0.0);
  // The right perpendicular ray re-enters the lane after (2.5 - 1.75) / sin(1.57 - 0.3).
  EXPECT_NEAR(p.d_right_157, -(2.5 - 1.75) / std::sin(1.57 - 0.3), 1e-6);
}

TEST(Probes, SignFlipsExactlyAtBoundary) {
  const Road road(Road::default_straight());
  for (double h : {-0.3, 0.0, 0.2}) {
    const ProbeSet in = probe_distances({300.0, 1.75 - 1e-6, h}, road);
    const ProbeSet out = probe_distances({300.0, 1.75 + 1e-6, h}, road);
    for (double d : in.as_array()) EXPECT_GE(d, 0.0);
    for (double d : out.as_array()) EXPECT_LT(d, 0.0);
  }
}

TEST(Probes, LipschitzInPose) {
  const Road road(generate_road(twisty(6), 2));
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> arc(10, road.total_length() - 60), lat(-1.5, 1.5),
      head(-0.2, 0.2), dir(0, 2 * kPi);
  const double eps = 1e-3;
  int checked = 0, ok = 0;
  for (int i = 0; i < 500; ++i) {
    const double a = arc(gen);
    const Vec2 c = road.point_at(a);
    const double h = road.heading_at(a);
    const double d = lat(gen);
    const Pose p{c.x - std::sin(h) * d, c.y + std::cos(h) * d, h + head(gen)};
    const double u = dir(gen);
    const Pose q{p.x + eps * std::cos(u), p.y + eps * std::sin(u), p.heading};
    const auto a0 = probe_distances(p, road).as_array();
    const auto a1 = probe_distances(q, road).as_array();
    for (int k = 0; k < 5; ++k) {
      if (std::abs(a0[k]) >= kDefaultProbeRange || std::abs(a1[k]) >= kDefaultProbeRange)
        continue;
      ++checked;
      if (std::abs(a0[k] - a1[k]) <= 50 * eps) ++ok;
    }
  }
  ASSERT_GT(checked, 1000);
  EXPECT_GE(static_cast<double>(ok) / checked, 0.99);
}

TEST(OffroadTransition, CenterlineStepDoesNotCross) {
  const Road road(Road::default_straight());
  const OffroadCheck c = detect_offroad_transition({10.0, 0.0}, {11.0, 0.0}, road);
  EXPECT_FALSE(c.crossed);
  // Far from the boundary the coarse value at the cell centre is kept.
  const double r = road.spec().raster_resolution;
  EXPECT_NEAR(c.refined_distance, 1.75 - 0.5 * r, 1e-9);
}

TEST(OffroadTransition, LateralJumpOfFullWidthCrosses) {
  const Road road(Road::default_straight());
  EXPECT_TRUE(detect_offroad_transition({10.0, 0.0}, {10.0, 3.5}, road).crossed);
  EXPECT_TRUE(detect_offroad_transition({10.0, 0.0}, {10.5, -3.5}, road).crossed);
}

TEST(OffroadTransition, AgreesWithMillimetreOracleOnRandomSegments) {
  const RoadSpec spec = generate_road(twisty(5), 17);
  const Road road(spec);
  const oracle::ArcRoad ref(spec);
  const double w = spec.lane_half_width;
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> arc(5, road.total_length() - 5), lat(-2.6, 2.6),
      len(0.05, 4.0), dir(-kPi, kPi);
  int crossed = 0, agree = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double a = arc(gen);
    const Vec2 c = road.point_at(a);
    const double h = road.heading_at(a);
    const double d = lat(gen);
    const Vec2 p{c.x - std::sin(h) * d, c.y + std::cos(h) * d};
    const double l = len(gen), u = dir(gen);
    const Vec2 q{p.x + l * std::cos(u), p.y + l * std::sin(u)};
    const bool expect = oracle::crosses_dense(ref, w, p.x, p.y, q.x, q.y);
    const bool got = detect_offroad_transition(p, q, road).crossed;
    if (expect == got) ++agree;
    else ADD_FAILURE() << "segment " << i << " oracle " << expect << " detector " << got;
    crossed += got;
  }
  EXPECT_EQ(agree, n);
  // Both classes are well represented.
  EXPECT_GT(crossed, n / 5);
  EXPECT_LT(crossed, 4 * n / 5);
}

TEST(OffroadTransition, SymmetricInDirection) {
  const Road road(generate_road(twisty(5), 4));
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> arc(5, road.total_length() - 5), lat(-2.5, 2.5),
      off(-2.0, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = arc(gen);
    const Vec2 c = road.point_at(a);
    const Vec2 p{c.x + off(gen), c.y + lat(gen)};
    const Vec2 q{p.x + off(gen), p.y + off(gen)};
    EXPECT_EQ(detect_offroad_transition(p, q, road).crossed,
              detect_offroad_transition(q, p, road).crossed);
  }
}
