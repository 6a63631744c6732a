#ifndef SUPDRIVE_ROAD_HPP_
#define SUPDRIVE_ROAD_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"

namespace supdrive {

inline constexpr int kRoadSchemaVersion = 1;

struct ArcSegment {
  double curvature = 0.0;  // 1/m, positive turns left
  double length = 0.0;     // m
  bool operator==(const ArcSegment&) const = default;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose&) const = default;
};

struct EndRegion {
  Vec2 center;
  double radius = 5.0;
  bool operator==(const EndRegion&) const = default;
};

struct RoadSpec {
  std::vector<ArcSegment> segments;
  double lane_half_width = 1.75;
  double speed_limit_kmh = 60.0;
  Pose start_pose;
  EndRegion end_region;
  double raster_resolution = 0.25;
  bool operator==(const RoadSpec&) const = default;
};

struct RoadGeneratorConfig {
  int min_segments = 6;
  int max_segments = 12;
  double max_curvature = 0.004;  // 1/m
  double min_segment_length = 80.0;
  double max_segment_length = 300.0;
  double min_total_length = 2000.0;
  double lane_half_width = 1.75;
  double speed_limit_kmh = 60.0;
  double raster_resolution = 0.25;
  double end_radius = 5.0;
  // Cumulative heading stays within this band around the start heading so
  // generated roads never fold back onto themselves.
  double max_heading_deviation = kPi / 3;
  Pose start_pose;
};

inline constexpr double kMaxRoadCurvature = 0.05;

struct LaneQuery {
  bool on_lane = true;
  double lateral_offset = 0.0;  // positive = left of centerline
  double arc_position = 0.0;
};

struct ProbeSet {
  double d_ahead = 0.0;
  double d_left_04 = 0.0;
  double d_right_04 = 0.0;
  double d_left_157 = 0.0;
  double d_right_157 = 0.0;

  std::array<double, 5> as_array() const {
    return {d_ahead, d_left_04, d_right_04, d_left_157, d_right_157};
  }
};

struct OffroadCheck {
  bool crossed = false;
  double refined_distance = 0.0;  // min clearance to the boundary along the path
};

namespace detail {

struct SegmentGeometry {
  Vec2 start;
  double heading = 0.0;
  double curvature = 0.0;
  double length = 0.0;
  double arc_start = 0.0;
  Vec2 mid;  // point at half length, for bounding-circle pruning
  Vec2 center;  // circle centre (arcs only)
  double start_angle = 0.0;  // polar angle of start around centre

  bool straight() const { return std::abs(curvature) < 1e-12; }

  Vec2 point_at(double s) const {
    if (straight()) return start + unit(heading) * s;
    const double k = curvature;
    return {start.x + (std::sin(heading + k * s) - std::sin(heading)) / k,
            start.y + (-std::cos(heading + k * s) + std::cos(heading)) / k};
  }

  double heading_at(double s) const { return heading + curvature * s; }

  // Closest arc parameter to p, clamped to [0, length].
  double closest_s(Vec2 p) const {
    if (straight()) {
      return std::clamp(dot(p - start, unit(heading)), 0.0, length);
    }
    const Vec2 r = p - center;
    if (r.x == 0.0 && r.y == 0.0) return 0.0;
    const double sign = curvature > 0 ? 1.0 : -1.0;
    const double sweep = std::abs(curvature) * length;
    double delta = (std::atan2(r.y, r.x) - start_angle) * sign;
    delta = std::fmod(delta, 2 * kPi);
    if (delta < 0) delta += 2 * kPi;
    if (delta <= sweep) return delta / std::abs(curvature);
    const double d0 = (p - start).norm();
    const double d1 = (p - point_at(length)).norm();
    return d0 <= d1 ? 0.0 : length;
  }
};

}  // namespace detail

// Immutable, validated road with cached segment geometry. All queries are
// const and re-entrant.
class Road {
 public:
  Road() : Road(default_straight()) {}

  explicit Road(RoadSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    Vec2 p = spec_.start_pose.position();
    double h = spec_.start_pose.heading;
    double arc = 0.0;
    for (const ArcSegment& seg : spec_.segments) {
      detail::SegmentGeometry g;
      g.start = p;
      g.heading = h;
      g.curvature = seg.curvature;
      g.length = seg.length;
      g.arc_start = arc;
      if (!g.straight()) {
        g.center = p + Vec2{-std::sin(h), std::cos(h)} * (1.0 / seg.curvature);
        const Vec2 r = p - g.center;
        g.start_angle = std::atan2(r.y, r.x);
      }
      g.mid = g.point_at(seg.length / 2);
      geometry_.push_back(g);
      p = g.point_at(seg.length);
      h = g.heading_at(seg.length);
      arc += seg.length;
    }
    total_length_ = arc;
    end_point_ = p;
    end_heading_ = h;
  }

  static RoadSpec default_straight(double length = 2000.0) {
    RoadSpec s;
    s.segments = {{0.0, length}};
    s.end_region.center = {length, 0.0};
    return s;
  }

  static void validate(const RoadSpec& s) {
    if (s.segments.empty()) throw ConfigError("road has no segments");
    if (!(s.lane_half_width > 0)) throw ConfigError("lane_half_width must be > 0");
    if (!(s.raster_resolution > 0))
      throw ConfigError("raster_resolution must be > 0");
    if (!(s.end_region.radius > 0)) throw ConfigError("end radius must be > 0");
    for (const auto& seg : s.segments) {
      if (!(seg.length > 0)) throw ConfigError("segment length must be > 0");
      if (!(std::abs(seg.curvature) <= kMaxRoadCurvature))
        throw ConfigError("segment curvature exceeds 0.05 1/m");
    }
  }

  const RoadSpec& spec() const { return spec_; }
  double lane_half_width() const { return spec_.lane_half_width; }
  double total_length() const { return total_length_; }
  Vec2 end_point() const { return end_point_; }
  double end_heading() const { return end_heading_; }

  Vec2 point_at(double arc) const {
    const auto& g = segment_for_arc(arc);
    return g.point_at(std::clamp(arc - g.arc_start, 0.0, g.length));
  }
  double heading_at(double arc) const {
    const auto& g = segment_for_arc(arc);
    return g.heading_at(std::clamp(arc - g.arc_start, 0.0, g.length));
  }

  LaneQuery lane_query(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    double best_offset = 0.0;
    double best_arc = 0.0;
    for (const auto& g : geometry_) {
      const double lower = (p - g.mid).norm() - g.length / 2;
      if (lower > best) continue;
      const double s = g.closest_s(p);
      const Vec2 q = g.point_at(s);
      const Vec2 d = p - q;
      double dist = d.norm();
      if (dist < best) {
        best = dist;
        // Sub-nanometre residue from trig round-off counts as on the line.
        if (dist < 1e-9) dist = 0.0;
        best_offset = cross(unit(g.heading_at(s)), d) >= 0 ? dist : -dist;
        best_arc = g.arc_start + s;
      }
    }
    LaneQuery out;
    out.lateral_offset = best_offset;
    out.arc_position = best_arc;
    out.on_lane = std::abs(best_offset) <= spec_.lane_half_width;
    return out;
  }

  // Signed clearance: positive inside the lane, negative outside.
  double clearance(Vec2 p) const {
    return spec_.lane_half_width - std::abs(lane_query(p).lateral_offset);
  }

  bool in_end_region(Vec2 p) const {
    return (p - spec_.end_region.center).norm() <= spec_.end_region.radius;
  }
  // Whether the straight path a→b passes through the end region.
  bool path_reaches_end(Vec2 a, Vec2 b) const {
    return point_segment_distance(spec_.end_region.center, a, b) <=
           spec_.end_region.radius;
  }

 private:
  const detail::SegmentGeometry& segment_for_arc(double arc) const {
    auto it = std::upper_bound(
        geometry_.begin(), geometry_.end(), arc,
        [](double a, const detail::SegmentGeometry& g) { return a < g.arc_start; });
    if (it == geometry_.begin()) return geometry_.front();
    return *(it - 1);
  }

  RoadSpec spec_;
  std::vector<detail::SegmentGeometry> geometry_;
  double total_length_ = 0.0;
  Vec2 end_point_;
  double end_heading_ = 0.0;
};

inline LaneQuery lane_query(Vec2 point, const Road& road) {
  return road.lane_query(point);
}

inline RoadSpec generate_road(const RoadGeneratorConfig& cfg, std::uint64_t seed) {
  if (!(cfg.lane_half_width > 0) || !(cfg.min_segment_length > 0) ||
      !(cfg.max_segment_length >= cfg.min_segment_length) ||
      !(cfg.raster_resolution > 0) || !(cfg.end_radius > 0) ||
      cfg.min_segments < 1 || cfg.max_segments < cfg.min_segments ||
      !(cfg.max_curvature >= 0) || cfg.max_curvature > kMaxRoadCurvature ||
      !(cfg.min_total_length >= 0) || !(cfg.max_heading_deviation > 0)) {
    throw ConfigError("invalid road generator config");
  }
  Rng rng(mix_seed(seed, 0x524f4144));  // "ROAD"
  RoadSpec spec;
  spec.lane_half_width = cfg.lane_half_width;
  spec.speed_limit_kmh = cfg.speed_limit_kmh;
  spec.start_pose = cfg.start_pose;
  spec.raster_resolution = cfg.raster_resolution;

  const int n = rng.uniform_int(cfg.min_segments, cfg.max_segments);
  double total = 0.0;
  double heading_dev = 0.0;
  auto add_segment = [&]() {
    const double len = rng.uniform(cfg.min_segment_length, cfg.max_segment_length);
    double k = cfg.max_curvature > 0
                   ? rng.uniform(-cfg.max_curvature, cfg.max_curvature)
                   : 0.0;
    if (std::abs(heading_dev + k * len) > cfg.max_heading_deviation) k = -k;
    if (std::abs(heading_dev + k * len) > cfg.max_heading_deviation) k = 0.0;
    heading_dev += k * len;
    spec.segments.push_back({k, len});
    total += len;
  };
  for (int i = 0; i < n; ++i) add_segment();
  while (total < cfg.min_total_length) add_segment();

  const Road road(RoadSpec{spec.segments, spec.lane_half_width,
                           spec.speed_limit_kmh, spec.start_pose,
                           EndRegion{{0, 0}, 1.0}, spec.raster_resolution});
  spec.end_region.center = road.end_point();
  spec.end_region.radius = cfg.end_radius;
  return spec;
}

// Ray-marched distance to the lane boundary. Inside the lane the clearance
// is a safe step (lateral offset is 1-Lipschitz); outside, |offset| - w is.
inline double probe_distance(const Road& road, Vec2 origin, double direction,
                             double max_range) {
  const Vec2 u = unit(direction);
  const double min_step = 0.4 * road.spec().raster_resolution;
  const bool inside = road.clearance(origin) >= 0;
  auto inside_at = [&](double t) { return road.clearance(origin + u * t) >= 0; };
  // lo keeps the origin's status, hi has the opposite one.
  auto bisect = [&](double lo, double hi) {
    for (int i = 0; i < 60 && hi - lo > 1e-7; ++i) {
      const double mid = 0.5 * (lo + hi);
      (inside_at(mid) == inside ? lo : hi) = mid;
    }
    return inside ? lo : hi;
  };
  double prev = 0.0;
  double t = 0.0;
  for (;;) {
    const double c = road.clearance(origin + u * t);
    if ((c >= 0) != inside) {
      const double d = bisect(prev, t);
      return inside ? d : -d;
    }
    if (t >= max_range) return inside ? max_range : -max_range;
    prev = t;
    t = std::min(max_range, t + std::max(std::abs(c), min_step));
  }
}

inline constexpr double kProbeSideAngle = 0.4;
inline constexpr double kProbePerpAngle = 1.57;
inline constexpr double kDefaultProbeRange = 50.0;

inline ProbeSet probe_distances(const Pose& pose, const Road& road,
                                double max_range = kDefaultProbeRange) {
  const Vec2 o = pose.position();
  const double h = pose.heading;
  return {probe_distance(road, o, h, max_range),
          probe_distance(road, o, h + kProbeSideAngle, max_range),
          probe_distance(road, o, h - kProbeSideAngle, max_range),
          probe_distance(road, o, h + kProbePerpAngle, max_range),
          probe_distance(road, o, h - kProbePerpAngle, max_range)};
}

namespace detail {

// Largest |offset| along p(t) = a + t (b - a), t in [t0, t1], found by
// Lipschitz branch and bound. Stops early once the lane is left.
inline double max_abs_offset(const Road& road, Vec2 a, Vec2 b, double t0,
                             double t1, double stop_above) {
  const double len = (b - a).norm();
  auto f = [&](double t) {
    return std::abs(road.lane_query(a + (b - a) * t).lateral_offset);
  };
  double best = std::max(f(t0), f(t1));
  if (best > stop_above) return best;
  struct Interval {
    double lo, hi;
  };
  std::vector<Interval> stack{{t0, t1}};
  while (!stack.empty()) {
    const Interval iv = stack.back();
    stack.pop_back();
    const double mid = 0.5 * (iv.lo + iv.hi);
    const double fm = f(mid);
    best = std::max(best, fm);
    if (best > stop_above) return best;
    const double half = 0.5 * (iv.hi - iv.lo) * len;
    if (fm + half <= stop_above || half < 1e-8) continue;
    stack.push_back({iv.lo, mid});
    stack.push_back({mid, iv.hi});
  }
  return best;
}

}  // namespace detail

// Rasterises prev→next on a grid of raster_resolution cells (supercover
// Bresenham). Each traversed cell gets a coarse clearance from its centre;
// cells closer than the threshold are refined on the exact sub-segment.
inline OffroadCheck detect_offroad_transition(Vec2 prev, Vec2 next, const Road& road) {
  const double r = road.spec().raster_resolution;
  const double threshold = r;
  const double w = road.lane_half_width();
  OffroadCheck out;
  out.refined_distance = std::numeric_limits<double>::infinity();

  const Vec2 d = next - prev;
  int cx = static_cast<int>(std::floor(prev.x / r));
  int cy = static_cast<int>(std::floor(prev.y / r));
  const int ex = static_cast<int>(std::floor(next.x / r));
  const int ey = static_cast<int>(std::floor(next.y / r));
  const int sx = d.x > 0 ? 1 : -1;
  const int sy = d.y > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  const double tdx = d.x != 0 ? r / std::abs(d.x) : inf;
  const double tdy = d.y != 0 ? r / std::abs(d.y) : inf;
  double tmx = d.x != 0 ? ((sx > 0 ? (cx + 1) * r : cx * r) - prev.x) / d.x : inf;
  double tmy = d.y != 0 ? ((sy > 0 ? (cy + 1) * r : cy * r) - prev.y) / d.y : inf;
  double t_enter = 0.0;

  const int max_cells = std::abs(ex - cx) + std::abs(ey - cy) + 1;
  for (int i = 0; i < max_cells; ++i) {
    const double t_exit = std::min({tmx, tmy, 1.0});
    const Vec2 centre{(cx + 0.5) * r, (cy + 0.5) * r};
    const double coarse = road.clearance(centre);
    double clearance = coarse;
    if (coarse < threshold) {
      const double m =
          detail::max_abs_offset(road, prev, next, t_enter, t_exit, w);
      clearance = w - m;
    }
    out.refined_distance = std::min(out.refined_distance, clearance);
    if (clearance < 0) {
      out.crossed = true;
      return out;
    }
    if (t_exit >= 1.0 || (cx == ex && cy == ey)) break;
    t_enter = t_exit;
    if (tmx < tmy) {
      cx += sx;
      tmx += tdx;
    } else {
      cy += sy;
      tmy += tdy;
    }
  }
  return out;
}

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const RoadSpec& s) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& g : s.segments)
    segs.push_back({{"curvature_per_m", g.curvature}, {"length_m", g.length}});
  j = {{"schema_version", kRoadSchemaVersion},
       {"segments", segs},
       {"lane_half_width_m", s.lane_half_width},
       {"speed_limit_kmh", s.speed_limit_kmh},
       {"start_pose",
        {{"x_m", s.start_pose.x},
         {"y_m", s.start_pose.y},
         {"heading_rad", s.start_pose.heading}}},
       {"end_region",
        {{"x_m", s.end_region.center.x},
         {"y_m", s.end_region.center.y},
         {"radius_m", s.end_region.radius}}},
       {"raster_resolution_m", s.raster_resolution}};
}

inline void from_json(const nlohmann::json& j, RoadSpec& s) {
  if (j.value("schema_version", -1) != kRoadSchemaVersion)
    throw ParseError("road spec schema_version mismatch");
  s.segments.clear();
  for (const auto& g : j.at("segments"))
    s.segments.push_back({g.at("curvature_per_m").get<double>(),
                          g.at("length_m").get<double>()});
  s.lane_half_width = j.at("lane_half_width_m").get<double>();
  s.speed_limit_kmh = j.at("speed_limit_kmh").get<double>();
  const auto& p = j.at("start_pose");
  s.start_pose = {p.at("x_m").get<double>(), p.at("y_m").get<double>(),
                  p.at("heading_rad").get<double>()};
  const auto& e = j.at("end_region");
  s.end_region = {{e.at("x_m").get<double>(), e.at("y_m").get<double>()},
                  e.at("radius_m").get<double>()};
  s.raster_resolution = j.at("raster_resolution_m").get<double>();
}

inline void to_json(nlohmann::json& j, const RoadGeneratorConfig& c) {
  j = {{"schema_version", kRoadSchemaVersion},
       {"min_segments", c.min_segments},
       {"max_segments", c.max_segments},
       {"max_curvature_per_m", c.max_curvature},
       {"min_segment_length_m", c.min_segment_length},
       {"max_segment_length_m", c.max_segment_length},
       {"min_total_length_m", c.min_total_length},
       {"lane_half_width_m", c.lane_half_width},
       {"speed_limit_kmh", c.speed_limit_kmh},
       {"raster_resolution_m", c.raster_resolution},
       {"end_radius_m", c.end_radius},
       {"max_heading_deviation_rad", c.max_heading_deviation},
       {"start_pose",
        {{"x_m", c.start_pose.x},
         {"y_m", c.start_pose.y},
         {"heading_rad", c.start_pose.heading}}}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, RoadGeneratorConfig& c) {
  if (j.contains("schema_version") && j.at("schema_version") != kRoadSchemaVersion)
    throw ParseError("road generator schema_version mismatch");
  c.min_segments = j.value("min_segments", c.min_segments);
  c.max_segments = j.value("max_segments", c.max_segments);
  c.max_curvature = j.value("max_curvature_per_m", c.max_curvature);
  c.min_segment_length = j.value("min_segment_length_m", c.min_segment_length);
  c.max_segment_length = j.value("max_segment_length_m", c.max_segment_length);
  c.min_total_length = j.value("min_total_length_m", c.min_total_length);
  c.lane_half_width = j.value("lane_half_width_m", c.lane_half_width);
  c.speed_limit_kmh = j.value("speed_limit_kmh", c.speed_limit_kmh);
  c.raster_resolution = j.value("raster_resolution_m", c.raster_resolution);
  c.end_radius = j.value("end_radius_m", c.end_radius);
  c.max_heading_deviation =
      j.value("max_heading_deviation_rad", c.max_heading_deviation);
  if (j.contains("start_pose")) {
    const auto& p = j.at("start_pose");
    c.start_pose = {p.value("x_m", 0.0), p.value("y_m", 0.0),
                    p.value("heading_rad", 0.0)};
  }
}

}  // namespace supdrive

#endif  // SUPDRIVE_ROAD_HPP_
