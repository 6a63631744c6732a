#ifndef SUPDRIVE_DRIVING_ENV_HPP_
#define SUPDRIVE_DRIVING_ENV_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "supdrive/cognition.hpp"
#include "supdrive/common.hpp"
#include "supdrive/road.hpp"
#include "supdrive/vehicle.hpp"

namespace supdrive {

struct InattentionConfig {
  bool enabled = false;
  double min_unattended_s = 0.2;
  double max_unattended_s = 5.0;
  double min_attended_s = 0.5;
  double max_attended_s = 3.0;
};

struct DrivingEnvConfig {
  RoadGeneratorConfig road;
  std::optional<RoadSpec> fixed_road;
  NoiseParams noise;
  LcaConfig lca;
  double speed_limit_kmh = 60.0;
  double speed_tolerance_kmh = 10.0;
  double offroad_penalty = -1.0;
  double speed_penalty_factor = -0.1;  // per km/h beyond the tolerance band
  double dt = kDrivingStep;
  double horizon_s = 120.0;
  InattentionConfig inattention;
  bool acc_enabled = false;
  double probe_range = kDefaultProbeRange;

  void validate() const {
    if (!(dt > 0)) throw ConfigError("driving_env.dt must be > 0");
    if (!(speed_tolerance_kmh >= 0)) throw ConfigError("speed tolerance must be >= 0");
    if (!(horizon_s > 0)) throw ConfigError("horizon must be > 0");
    if (!(speed_limit_kmh > 0) || speed_limit_kmh > mps_to_kmh(kMaxSpeed) + 1e-9)
      throw ConfigError("speed limit must be in (0, 150] km/h");
    if (!(probe_range > 0)) throw ConfigError("probe range must be > 0");
    const auto& ia = inattention;
    if (!(ia.min_unattended_s > 0) || !(ia.max_unattended_s >= ia.min_unattended_s) ||
        !(ia.max_unattended_s < horizon_s) || !(ia.min_attended_s > 0) ||
        !(ia.max_attended_s >= ia.min_attended_s))
      throw ConfigError("inattention curriculum bounds must lie within (0, horizon)");
    noise.validate();
    lca.validate();
  }
};

// Observation vector layout.
enum DrivingObsIndex : int {
  kObsBelX = 0,
  kObsBelY,
  kObsSpeed,
  kObsHeading,
  kObsSteering,
  kObsProbeAhead,
  kObsProbeLeft04,
  kObsProbeRight04,
  kObsProbeLeft157,
  kObsProbeRight157,
  kObsSigmaPos,
  kObsLca,
  kObsSpeedLimit,
  kObsAttended,
  kDrivingObsDim,
};

using DrivingObservation = std::array<double, kDrivingObsDim>;

struct TruthSnapshot {
  VehicleState state;
  double lateral_offset = 0.0;
  bool on_lane = true;
  bool crossed = false;
  double r_offroad = 0.0;
  double r_speed = 0.0;
  double applied_steering = 0.0;  // pre-noise, driver + LCA
};

struct DrivingStepOutcome {
  DrivingObservation observation{};
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  double elapsed = 0.0;
  TruthSnapshot truth;  // metrics only; policies never see this
};

struct EpisodeOverrides {
  std::optional<double> speed_limit_kmh;
  std::optional<bool> lca;
  std::optional<bool> acc;
};

// Reward for one step, speeds in km/h.
inline double speed_penalty(double speed_kmh, double limit_kmh, double tolerance_kmh,
                            double factor) {
  const double excess = std::max(0.0, std::abs(speed_kmh - limit_kmh) - tolerance_kmh);
  return factor * excess;
}

class DrivingEnv {
 public:
  explicit DrivingEnv(DrivingEnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const DrivingEnvConfig& config() const { return cfg_; }

  DrivingObservation reset(std::uint64_t seed, const EpisodeOverrides& ov = {}) {
    rng_ = Rng(mix_seed(seed, 0x44524956));  // "DRIV"
    speed_limit_kmh_ = ov.speed_limit_kmh.value_or(cfg_.speed_limit_kmh);
    if (!(speed_limit_kmh_ > 0) || speed_limit_kmh_ > mps_to_kmh(kMaxSpeed) + 1e-9)
      throw ConfigError("speed limit must be in (0, 150] km/h");
    lca_ = cfg_.lca;
    lca_.enabled = ov.lca.value_or(cfg_.lca.enabled);
    acc_ = ov.acc.value_or(cfg_.acc_enabled);
    RoadSpec spec;
    if (cfg_.fixed_road) {
      spec = *cfg_.fixed_road;
    } else {
      spec = generate_road(cfg_.road, seed);
    }
    spec.speed_limit_kmh = speed_limit_kmh_;
    road_ = Road(std::move(spec));
    truth_ = make_vehicle(road_.spec().start_pose, kmh_to_mps(speed_limit_kmh_));
    belief_ = belief_from_truth(truth_);
    steps_ = 0;
    done_ = false;
    last_obs_ = build_observation();
    return last_obs_;
  }

  DrivingStepOutcome step(ControlInput action, bool attended) {
    if (done_) throw StateError("driving env stepped after episode end");
    const double dt = cfg_.dt;
    ControlInput c = action.clamped();
    if (acc_) {
      c.acceleration = 0.0;
      truth_.speed = kmh_to_mps(speed_limit_kmh_);
      belief_.speed = truth_.speed;
    }
    double steer = c.steering;
    if (lca_.enabled) steer = std::clamp(steer + lca_correction(truth_, road_, lca_),
                                         -kMaxSteering, kMaxSteering);
    const ControlInput applied{steer, c.acceleration};

    const Vec2 prev_center = truth_.center();
    truth_ = step_vehicle(truth_, applied, cfg_.noise, dt, rng_);
    const Vec2 center = truth_.center();
    const OffroadCheck check = detect_offroad_transition(prev_center, center, road_);

    // The internal model knows how the assist behaves but can only apply it
    // to where the driver believes the car is.
    ControlInput believed = applied;
    if (lca_.enabled) {
      const VehicleState b = make_vehicle(belief_.pose(), belief_.speed);
      believed.steering = std::clamp(c.steering + lca_correction(b, road_, lca_), -kMaxSteering,
                                     kMaxSteering);
    }
    BeliefState predicted = predict_belief(belief_, believed, cfg_.noise, dt, rng_);
    if (attended) {
      const Observation obs =
          observe(truth_, road_, cfg_.noise.sigma_obs, rng_, /*with_probes=*/false);
      belief_ = fuse(predicted, obs, cfg_.noise.sigma_obs);
    } else {
      predicted.attended = false;
      belief_ = predicted;
    }

    DrivingStepOutcome out;
    out.truth.state = truth_;
    const LaneQuery q = road_.lane_query(center);
    out.truth.lateral_offset = q.lateral_offset;
    out.truth.on_lane = q.on_lane;
    out.truth.crossed = check.crossed;
    out.truth.applied_steering = steer;
    out.truth.r_offroad = check.crossed ? cfg_.offroad_penalty : 0.0;
    out.truth.r_speed = speed_penalty(mps_to_kmh(truth_.speed), speed_limit_kmh_,
                                      cfg_.speed_tolerance_kmh, cfg_.speed_penalty_factor);
    out.reward = out.truth.r_offroad + out.truth.r_speed;

    ++steps_;
    out.elapsed = elapsed();
    out.terminated = road_.path_reaches_end(prev_center, center);
    out.truncated = !out.terminated && out.elapsed >= cfg_.horizon_s - 1e-9;
    done_ = out.terminated || out.truncated;
    last_obs_ = build_observation();
    out.observation = last_obs_;
    return out;
  }

  double elapsed() const { return static_cast<double>(steps_) * cfg_.dt; }
  long steps() const { return steps_; }
  bool done() const { return done_; }
  const Road& road() const { return road_; }
  const VehicleState& truth() const { return truth_; }
  const BeliefState& belief() const { return belief_; }
  const DrivingObservation& observation() const { return last_obs_; }
  double speed_limit_kmh() const { return speed_limit_kmh_; }
  bool lca_enabled() const { return lca_.enabled; }
  bool acc_enabled() const { return acc_; }

 private:
  DrivingObservation build_observation() const {
    DrivingObservation o{};
    o[kObsBelX] = belief_.position.x;
    o[kObsBelY] = belief_.position.y;
    o[kObsSpeed] = belief_.speed;
    o[kObsHeading] = belief_.heading;
    o[kObsSteering] = belief_.steering;
    const auto probes = probe_distances(belief_.pose(), road_, cfg_.probe_range).as_array();
    for (int i = 0; i < 5; ++i) o[kObsProbeAhead + i] = probes[i];
    o[kObsSigmaPos] = belief_.sigma_pos;
    o[kObsLca] = lca_.enabled ? 1.0 : 0.0;
    o[kObsSpeedLimit] = kmh_to_mps(speed_limit_kmh_);
    o[kObsAttended] = belief_.attended ? 1.0 : 0.0;
    return o;
  }

  DrivingEnvConfig cfg_;
  Road road_;
  VehicleState truth_;
  BeliefState belief_;
  Rng rng_{0};
  double speed_limit_kmh_ = 60.0;
  LcaConfig lca_;
  bool acc_ = false;
  long steps_ = 0;
  bool done_ = true;
  DrivingObservation last_obs_{};
};

// Alternating attended / unattended periods for the training curriculum.
struct AttentionPeriod {
  double attended_s = 0.0;
  double unattended_s = 0.0;
};

inline std::vector<AttentionPeriod> inattention_schedule(Rng& rng,
                                                         const InattentionConfig& cfg,
                                                         double total_s) {
  std::vector<AttentionPeriod> out;
  double t = 0.0;
  while (t < total_s) {
    AttentionPeriod p{rng.uniform(cfg.min_attended_s, cfg.max_attended_s),
                      rng.uniform(cfg.min_unattended_s, cfg.max_unattended_s)};
    t += p.attended_s + p.unattended_s;
    out.push_back(p);
  }
  return out;
}

// Step-wise view of the curriculum: answers "is this step attended?".
class AttentionCurriculum {
 public:
  AttentionCurriculum(const InattentionConfig& cfg, std::uint64_t seed, double dt)
      : cfg_(cfg), rng_(mix_seed(seed, 0x41545454)), dt_(dt) {
    draw();
  }

  bool next() {
    if (!cfg_.enabled) return true;
    if (remaining_steps_ <= 0) {
      if (attended_) {
        attended_ = false;
        remaining_steps_ = steps_for(period_.unattended_s);
      } else {
        draw();
      }
    }
    --remaining_steps_;
    return attended_;
  }

 private:
  int steps_for(double s) const { return std::max(1, static_cast<int>(std::lround(s / dt_))); }
  void draw() {
    period_ = {rng_.uniform(cfg_.min_attended_s, cfg_.max_attended_s),
               rng_.uniform(cfg_.min_unattended_s, cfg_.max_unattended_s)};
    attended_ = true;
    remaining_steps_ = steps_for(period_.attended_s);
  }

  InattentionConfig cfg_;
  Rng rng_;
  double dt_;
  AttentionPeriod period_;
  bool attended_ = true;
  int remaining_steps_ = 0;
};

inline void to_json(nlohmann::json& j, const InattentionConfig& c) {
  j = {{"enabled", c.enabled},
       {"min_unattended_s", c.min_unattended_s},
       {"max_unattended_s", c.max_unattended_s},
       {"min_attended_s", c.min_attended_s},
       {"max_attended_s", c.max_attended_s}};
}
inline void from_json(const nlohmann::json& j, InattentionConfig& c) {
  c.enabled = j.value("enabled", c.enabled);
  c.min_unattended_s = j.value("min_unattended_s", c.min_unattended_s);
  c.max_unattended_s = j.value("max_unattended_s", c.max_unattended_s);
  c.min_attended_s = j.value("min_attended_s", c.min_attended_s);
  c.max_attended_s = j.value("max_attended_s", c.max_attended_s);
}

inline void to_json(nlohmann::json& j, const DrivingEnvConfig& c) {
  j = {{"road", c.road},
       {"noise", c.noise},
       {"lca", c.lca},
       {"speed_limit_kmh", c.speed_limit_kmh},
       {"speed_tolerance_kmh", c.speed_tolerance_kmh},
       {"offroad_penalty_per_step", c.offroad_penalty},
       {"speed_penalty_factor_per_kmh", c.speed_penalty_factor},
       {"dt_s", c.dt},
       {"horizon_s", c.horizon_s},
       {"inattention", c.inattention},
       {"acc_enabled", c.acc_enabled},
       {"probe_range_m", c.probe_range}};
  if (c.fixed_road) j["fixed_road"] = *c.fixed_road;
}
inline void from_json(const nlohmann::json& j, DrivingEnvConfig& c) {
  if (j.contains("road")) j.at("road").get_to(c.road);
  if (j.contains("fixed_road")) c.fixed_road = j.at("fixed_road").get<RoadSpec>();
  if (j.contains("noise")) j.at("noise").get_to(c.noise);
  if (j.contains("lca")) j.at("lca").get_to(c.lca);
  c.speed_limit_kmh = j.value("speed_limit_kmh", c.speed_limit_kmh);
  c.speed_tolerance_kmh = j.value("speed_tolerance_kmh", c.speed_tolerance_kmh);
  c.offroad_penalty = j.value("offroad_penalty_per_step", c.offroad_penalty);
  c.speed_penalty_factor = j.value("speed_penalty_factor_per_kmh", c.speed_penalty_factor);
  c.dt = j.value("dt_s", c.dt);
  c.horizon_s = j.value("horizon_s", c.horizon_s);
  if (j.contains("inattention")) j.at("inattention").get_to(c.inattention);
  c.acc_enabled = j.value("acc_enabled", c.acc_enabled);
  c.probe_range = j.value("probe_range_m", c.probe_range);
}

}  // namespace supdrive

#endif  // SUPDRIVE_DRIVING_ENV_HPP_
