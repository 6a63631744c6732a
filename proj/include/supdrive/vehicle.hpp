#ifndef SUPDRIVE_VEHICLE_HPP_
#define SUPDRIVE_VEHICLE_HPP_

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/road.hpp"

namespace supdrive {

inline constexpr double kWheelbase = 2.0;              // m
inline constexpr double kMaxSpeed = 150.0 / 3.6;       // m/s
inline constexpr double kMaxSteering = 0.26;           // rad
inline constexpr double kMaxAcceleration = 6.0;        // m/s^2
inline constexpr double kDrivingStep = 0.1;            // s

struct VehicleState {
  Vec2 front;
  Vec2 rear;
  double heading = 0.0;
  double speed = 0.0;
  double steering = 0.0;  // last applied (noisy) steering

  Vec2 center() const { return midpoint(front, rear); }
  Pose pose() const { return {center().x, center().y, heading}; }
};

struct ControlInput {
  double steering = 0.0;      // rad
  double acceleration = 0.0;  // m/s^2

  ControlInput clamped() const {
    return {std::clamp(steering, -kMaxSteering, kMaxSteering),
            std::clamp(acceleration, -kMaxAcceleration, kMaxAcceleration)};
  }
};

// sigma_steer_dep is the action-dependent steering noise (per unit of
// steering), sigma_steer_indep the action-independent one.
struct NoiseParams {
  double sigma_steer_dep = 0.0001;    // rad per rad
  double sigma_steer_indep = 0.0003;  // rad
  double sigma_time = 0.0001;         // s
  double sigma_obs = 0.0001;          // m

  void validate() const {
    if (!(sigma_steer_dep >= 0) || !(sigma_steer_indep >= 0) ||
        !(sigma_time >= 0) || !(sigma_obs >= 0))
      throw ConfigError("noise parameters must be >= 0");
  }
};

struct LcaConfig {
  bool enabled = false;
  double boundary_margin = 0.5;     // m
  double sharp_correction = 0.1;    // rad
  double lookahead = 10.0;          // m
  double centering_gain = 0.005;    // rad/m

  void validate() const {
    if (!(boundary_margin > 0) || !(lookahead > 0))
      throw ConfigError("LCA margin and lookahead must be > 0");
    if (std::abs(sharp_correction) > kMaxSteering)
      throw ConfigError("LCA sharp correction exceeds steering limit");
  }
};

inline VehicleState make_vehicle(const Pose& center, double speed) {
  const Vec2 c = center.position();
  const Vec2 half = unit(center.heading) * (kWheelbase / 2);
  VehicleState s;
  s.front = c + half;
  s.rear = c - half;
  s.heading = center.heading;
  s.speed = std::clamp(speed, 0.0, kMaxSpeed);
  return s;
}

// Noise dampening D = 1 - v / v_max.
inline double dampening(double v) {
  constexpr double kTol = 1e-9;
  if (!(v >= -kTol && v <= kMaxSpeed + kTol))
    throw ContractViolation("dampening: speed outside [0, v_max]");
  return std::clamp(1.0 - v / kMaxSpeed, 0.0, 1.0);
}

// z_dep and z_indep are standard-normal draws.
inline double apply_steering_noise(double delta, double v, const NoiseParams& noise,
                                   double z_dep, double z_indep) {
  const double d = dampening(v);
  const double r1 = noise.sigma_steer_dep * z_dep;
  const double r2 = noise.sigma_steer_indep * z_indep;
  return std::clamp(delta + d * (std::abs(delta) * r1 + r2), -kMaxSteering,
                    kMaxSteering);
}

inline double apply_steering_noise(double delta, double v, const NoiseParams& noise,
                                   Rng& rng) {
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  return apply_steering_noise(delta, v, noise, z1, z2);
}

// Speed update then bicycle geometry. `steering` is the final applied
// angle; acceleration is integrated over dt.
inline VehicleState advance_kinematics(const VehicleState& s, double steering,
                                       double acceleration, double dt) {
  VehicleState n = s;
  n.speed = std::clamp(s.speed + acceleration * dt, 0.0, kMaxSpeed);
  n.steering = steering;
  const double step = n.speed * dt;
  n.front = s.front + unit(s.heading + steering) * step;
  n.rear = s.rear + unit(s.heading) * step;
  const Vec2 axis = n.front - n.rear;
  n.heading = std::atan2(axis.y, axis.x);
  const Vec2 c = midpoint(n.front, n.rear);
  const Vec2 half = unit(n.heading) * (kWheelbase / 2);
  n.front = c + half;
  n.rear = c - half;
  return n;
}

inline void check_finite(const VehicleState& s) {
  if (!s.front.finite() || !s.rear.finite() || !std::isfinite(s.heading) ||
      !std::isfinite(s.speed) || !std::isfinite(s.steering))
    throw ContractViolation("vehicle state is not finite");
}

inline VehicleState step_vehicle(const VehicleState& state, ControlInput control,
                                 const NoiseParams& noise, double dt, Rng& rng) {
  check_finite(state);
  if (!std::isfinite(control.steering) || !std::isfinite(control.acceleration) ||
      !std::isfinite(dt))
    throw ContractViolation("step_vehicle: non-finite control or dt");
  const ControlInput c = control.clamped();
  const double v = std::clamp(state.speed + c.acceleration * dt, 0.0, kMaxSpeed);
  const double noisy = apply_steering_noise(c.steering, v, noise, rng);
  return advance_kinematics(state, noisy, c.acceleration, dt);
}

// Lane-centering assist. Near a boundary it steers sharply away; otherwise it
// equalises the boundary distances `lookahead` metres ahead.
inline double lca_correction(const VehicleState& state, const Road& road,
                             const LcaConfig& cfg) {
  if (!cfg.enabled) throw ContractViolation("lca_correction called with LCA disabled");
  const double w = road.lane_half_width();
  const LaneQuery here = road.lane_query(state.center());
  const double clearance = w - std::abs(here.lateral_offset);
  double adjust = 0.0;
  if (clearance < cfg.boundary_margin) {
    adjust = here.lateral_offset > 0 ? -cfg.sharp_correction : cfg.sharp_correction;
  } else {
    const Vec2 ahead = state.center() + unit(state.heading) * cfg.lookahead;
    const double off = road.lane_query(ahead).lateral_offset;
    const double d_left = w - off;
    const double d_right = w + off;
    adjust = cfg.centering_gain * (d_left - d_right);
  }
  return std::clamp(adjust, -kMaxSteering, kMaxSteering);
}

inline void to_json(nlohmann::json& j, const NoiseParams& n) {
  j = {{"sigma_steer_dep_rad_per_rad", n.sigma_steer_dep},
       {"sigma_steer_indep_rad", n.sigma_steer_indep},
       {"sigma_time_s", n.sigma_time},
       {"sigma_obs_m", n.sigma_obs}};
}
inline void from_json(const nlohmann::json& j, NoiseParams& n) {
  n.sigma_steer_dep = j.value("sigma_steer_dep_rad_per_rad", n.sigma_steer_dep);
  n.sigma_steer_indep = j.value("sigma_steer_indep_rad", n.sigma_steer_indep);
  n.sigma_time = j.value("sigma_time_s", n.sigma_time);
  n.sigma_obs = j.value("sigma_obs_m", n.sigma_obs);
}

inline void to_json(nlohmann::json& j, const LcaConfig& c) {
  j = {{"enabled", c.enabled},
       {"boundary_margin_m", c.boundary_margin},
       {"sharp_correction_rad", c.sharp_correction},
       {"lookahead_m", c.lookahead},
       {"centering_gain_rad_per_m", c.centering_gain}};
}
inline void from_json(const nlohmann::json& j, LcaConfig& c) {
  c.enabled = j.value("enabled", c.enabled);
  c.boundary_margin = j.value("boundary_margin_m", c.boundary_margin);
  c.sharp_correction = j.value("sharp_correction_rad", c.sharp_correction);
  c.lookahead = j.value("lookahead_m", c.lookahead);
  c.centering_gain = j.value("centering_gain_rad_per_m", c.centering_gain);
}

}  // namespace supdrive

#endif  // SUPDRIVE_VEHICLE_HPP_
