#ifndef SUPDRIVE_COGNITION_HPP_
#define SUPDRIVE_COGNITION_HPP_

#include <cmath>

#include "supdrive/common.hpp"
#include "supdrive/road.hpp"
#include "supdrive/vehicle.hpp"

namespace supdrive {

struct BeliefState {
  Vec2 position;
  double sigma_pos = 0.0;  // m
  double speed = 0.0;
  double heading = 0.0;
  double steering = 0.0;
  bool attended = true;

  Pose pose() const { return {position.x, position.y, heading}; }
};

struct Observation {
  Vec2 position;
  double speed = 0.0;
  double heading = 0.0;
  double steering = 0.0;
  ProbeSet probes;
};

inline BeliefState belief_from_truth(const VehicleState& s) {
  return {s.center(), 0.0, s.speed, s.heading, s.steering, true};
}

// Position is perturbed per axis; speed, heading and steering are exact.
inline Observation observe(const VehicleState& truth, const Road& road,
                           double sigma_obs, Rng& rng, bool with_probes = true) {
  if (!(sigma_obs >= 0)) throw ContractViolation("observe: sigma_obs < 0");
  Observation o;
  const Vec2 c = truth.center();
  const double nx = rng.normal(sigma_obs);
  const double ny = rng.normal(sigma_obs);
  o.position = {c.x + nx, c.y + ny};
  o.speed = truth.speed;
  o.heading = truth.heading;
  o.steering = truth.steering;
  if (with_probes)
    o.probes = probe_distances({o.position.x, o.position.y, o.heading}, road);
  return o;
}

struct ProcessNoise {
  double steering_pos = 0.0;  // dampened steering noise, in metres per step
  double timing_pos = 0.0;    // time-estimate noise, in metres per step
};

// Per-step position-unit process noise of the internal simulator.
inline ProcessNoise process_noise(double speed, double steering,
                                  const NoiseParams& noise, double dt) {
  const double v = std::clamp(speed, 0.0, kMaxSpeed);
  const double angular = std::hypot(noise.sigma_steer_indep,
                                    steering * noise.sigma_steer_dep);
  return {dampening(v) * angular * v * dt, noise.sigma_time * v};
}

inline double propagate_uncertainty(double sigma_pos, const ProcessNoise& q) {
  return std::sqrt(sigma_pos * sigma_pos + q.steering_pos * q.steering_pos +
                   q.timing_pos * q.timing_pos);
}

// Internal forward model: noiseless kinematics driven by the believed state
// and the felt (pre-noise) control, with a noisy estimate of elapsed time.
inline BeliefState predict_belief(const BeliefState& b, ControlInput control,
                                  const NoiseParams& noise, double dt, Rng& rng) {
  const double dt_est = std::max(0.0, dt + rng.normal(noise.sigma_time));
  const ControlInput c = control.clamped();
  VehicleState internal = make_vehicle(b.pose(), b.speed);
  internal = advance_kinematics(internal, c.steering, c.acceleration, dt_est);
  BeliefState n = b;
  n.position = internal.center();
  n.heading = internal.heading;
  n.speed = internal.speed;
  n.steering = c.steering;
  n.sigma_pos = propagate_uncertainty(
      b.sigma_pos, process_noise(internal.speed, c.steering, noise, dt));
  return n;
}

inline BeliefState predict_unattended(const BeliefState& b, ControlInput control,
                                      const NoiseParams& noise, double dt, Rng& rng) {
  BeliefState n = predict_belief(b, control, noise, dt, rng);
  n.attended = false;
  return n;
}

struct FusionWeights {
  double prediction = 0.5;
  double observation = 0.5;
};

inline FusionWeights fusion_weights(double sigma_pos, double sigma_obs) {
  const double vp = sigma_pos * sigma_pos;
  const double vo = sigma_obs * sigma_obs;
  return {vo / (vp + vo), vp / (vp + vo)};
}

// Inverse-variance fusion of the internal prediction with an observation.
inline BeliefState fuse(const BeliefState& predicted, const Observation& obs,
                        double sigma_obs) {
  if (!(predicted.sigma_pos >= 0) || !(sigma_obs >= 0))
    throw ContractViolation("fuse: negative uncertainty");
  BeliefState n = predicted;
  if (predicted.sigma_pos == 0.0 && sigma_obs == 0.0) {
    if (!(predicted.position == obs.position))
      throw DegenerateInput("fuse: zero variances with disagreeing positions");
  } else {
    const FusionWeights w = fusion_weights(predicted.sigma_pos, sigma_obs);
    // Same as w_pred * predicted + w_obs * observed, but exact when they agree.
    n.position = predicted.position + (obs.position - predicted.position) * w.observation;
    n.sigma_pos = std::sqrt(w.prediction * w.prediction * predicted.sigma_pos *
                                predicted.sigma_pos +
                            w.observation * w.observation * sigma_obs * sigma_obs);
  }
  n.speed = obs.speed;
  n.heading = obs.heading;
  n.steering = obs.steering;
  n.attended = true;
  return n;
}

}  // namespace supdrive

#endif  // SUPDRIVE_COGNITION_HPP_
