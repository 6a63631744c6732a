#ifndef SUPDRIVE_SUPERVISOR_ENV_HPP_
#define SUPDRIVE_SUPERVISOR_ENV_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/driving_env.hpp"
#include "supdrive/search_env.hpp"

namespace supdrive {

// Frozen subtask agents as seen by the supervisor. act() may be stochastic
// through the supplied rng; value() must not mutate anything.
class DrivingController {
 public:
  virtual ~DrivingController() = default;
  virtual ControlInput act(const DrivingObservation& obs, Rng& rng) const = 0;
  virtual double value(const DrivingObservation& obs) const = 0;
};

class SearchController {
 public:
  virtual ~SearchController() = default;
  virtual int act(const std::vector<double>& obs, const std::vector<bool>& mask,
                  Rng& rng) const = 0;
  virtual double value(const std::vector<double>& obs) const = 0;
};

enum class Locus : int { kDrive = 0, kSearch = 1 };

inline const char* locus_name(Locus l) { return l == Locus::kDrive ? "DRIVE" : "SEARCH"; }

// What a driving sub-step was doing; transitions are eyes-off-road.
enum class SubstepKind : int { kDrive, kToSearch, kSearch, kToDrive };

inline const char* substep_name(SubstepKind k) {
  switch (k) {
    case SubstepKind::kDrive: return "DRIVE";
    case SubstepKind::kToSearch: return "TO_SEARCH";
    case SubstepKind::kSearch: return "SEARCH";
    case SubstepKind::kToDrive: return "TO_DRIVE";
  }
  return "?";
}

inline SubstepKind parse_substep(const std::string& s) {
  if (s == "DRIVE") return SubstepKind::kDrive;
  if (s == "TO_SEARCH") return SubstepKind::kToSearch;
  if (s == "SEARCH") return SubstepKind::kSearch;
  if (s == "TO_DRIVE") return SubstepKind::kToDrive;
  throw ParseError("unknown locus value '" + s + "'");
}

struct SupervisorConfig {
  double driving_weight = 5.0;  // w_d
  int tasks_per_episode = 10;
  bool normalize_values = true;
  int warmup_steps = 10;  // attended driving steps at reset
  int transition_steps = 2;  // 0.2 s gaze shift
  // Task grid sampled per task from these lists (same index).
  std::vector<std::array<int, 2>> grids{{2, 3}};
  std::vector<int> task_types{1};

  void validate() const {
    if (!(driving_weight >= 0)) throw ConfigError("supervisor.driving_weight must be >= 0");
    if (tasks_per_episode < 1) throw ConfigError("supervisor.tasks_per_episode must be >= 1");
    if (warmup_steps < 0 || transition_steps < 0)
      throw ConfigError("supervisor step counts must be >= 0");
    if (grids.empty() || task_types.empty()) throw ConfigError("supervisor task lists empty");
    for (int t : task_types)
      if (t != 0 && t != 1) throw ConfigError("task_type must be 0 or 1");
  }
};

// Only values and locus; raw subtask states are never exposed.
struct SupervisorObservation {
  double v_drive = 0.0;
  double v_search = 0.0;
  Locus locus = Locus::kDrive;

  std::array<double, 3> as_array() const {
    return {v_drive, v_search, locus == Locus::kSearch ? 1.0 : 0.0};
  }
};

// One driving sub-step as it appears in traces.
struct SubstepRecord {
  double t = 0.0;  // wall time at the end of the sub-step
  SubstepKind kind = SubstepKind::kDrive;
  Vec2 true_pos;
  Vec2 bel_pos;
  double sigma_pos = 0.0;
  double speed = 0.0;
  double steering = 0.0;
  double r_drive = 0.0;
  double r_search = 0.0;
  double lateral_offset = 0.0;
  int glance_id = 0;
  int task_id = 0;
};

struct JointStepLog {
  double wall_time = 0.0;  // after the step
  double wall_dt = 0.0;
  Locus locus = Locus::kDrive;  // after the step
  int substeps = 0;
  double pooled_reward = 0.0;
  double drive_reward = 0.0;  // unweighted sum
  double search_reward = 0.0;
  double search_duration = 0.0;
  bool glance_transition = false;
  bool task_completed = false;
  std::vector<SubstepRecord> records;
};

struct SupervisorStepResult {
  SupervisorObservation observation;
  double reward = 0.0;
  bool done = false;
  JointStepLog log;
};

// Welford running mean/variance used to standardize oracle values.
struct RunningStat {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    count += 1.0;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / (count - 1) : 1.0; }
  double standardize(double x) const {
    return (x - mean) / std::sqrt(std::max(variance(), 1e-8));
  }
};

struct ValueNormalizer {
  RunningStat drive;
  RunningStat search;
  bool frozen = false;
};

struct TaskSpec {
  int rows = 2;
  int cols = 3;
  int task_type = 1;
};

class SupervisorEnv {
 public:
  SupervisorEnv(SupervisorConfig cfg, DrivingEnvConfig dcfg, SearchEnvConfig scfg)
      : cfg_(std::move(cfg)), driving_(std::move(dcfg)), search_(std::move(scfg)) {
    cfg_.validate();
  }

  void attach(std::shared_ptr<const DrivingController> drive,
              std::shared_ptr<const SearchController> search) {
    drive_ctl_ = std::move(drive);
    search_ctl_ = std::move(search);
  }
  void set_normalizer(std::shared_ptr<ValueNormalizer> n) { norm_ = std::move(n); }

  SupervisorObservation reset(std::uint64_t seed, const EpisodeOverrides& ov = {},
                              std::optional<TaskSpec> fixed_task = std::nullopt) {
    if (!drive_ctl_ || !search_ctl_)
      throw ConfigError("supervisor reset without attached subtask policies");
    seed_ = seed;
    rng_ = Rng(mix_seed(seed, 0x53555056));  // "SUPV"
    fixed_task_ = fixed_task;
    driving_.reset(mix_seed(seed, 1), ov);
    wall_time_ = 0.0;
    driving_time_ = 0.0;
    substeps_ = 0;
    tasks_completed_ = 0;
    tasks_spawned_ = 0;
    glance_id_ = 0;
    glances_ = 0;
    locus_ = Locus::kDrive;
    done_ = false;
    task_active_ = false;
    pending_ = false;
    delay_remaining_ = 0.0;
    reset_records_.clear();
    JointStepLog log;
    for (int i = 0; i < cfg_.warmup_steps && !driving_.done(); ++i)
      drive_substep(true, SubstepKind::kDrive, kDrivingStep, log);
    reset_records_ = std::move(log.records);
    prepare_task();
    activate_task();
    last_obs_ = make_observation();
    return last_obs_;
  }

  // SEARCH while no task is active (inter-task delay) is treated as DRIVE.
  std::vector<bool> action_mask() const { return {true, task_active_}; }

  SupervisorStepResult step(Locus attend) {
    if (done_) throw StateError("supervisor stepped after episode end");
    if (attend == Locus::kSearch && !task_active_) attend = Locus::kDrive;
    JointStepLog log;
    const double t0 = wall_time_;
    if (attend == Locus::kDrive) {
      if (locus_ == Locus::kSearch) glance_back(log);
      else drive_substep(true, SubstepKind::kDrive, kDrivingStep, log);
    } else {
      if (locus_ == Locus::kDrive) {
        log.glance_transition = true;
        locus_ = Locus::kSearch;
        ++glances_;
        glance_id_ = glances_;
        for (int i = 0; i < cfg_.transition_steps && !driving_.done(); ++i)
          drive_substep(false, SubstepKind::kToSearch, kDrivingStep, log);
      }
      if (!driving_.done()) search_substeps(log);
      if (log.task_completed && !driving_.done()) glance_back(log);
    }
    log.wall_time = wall_time_;
    log.wall_dt = wall_time_ - t0;
    log.locus = locus_;
    log.substeps = static_cast<int>(log.records.size());
    log.pooled_reward = cfg_.driving_weight * log.drive_reward + log.search_reward;
    done_ = driving_.done() || tasks_completed_ >= cfg_.tasks_per_episode;
    last_obs_ = make_observation();
    return {last_obs_, log.pooled_reward, done_, std::move(log)};
  }

  const SupervisorObservation& observation() const { return last_obs_; }
  const std::vector<SubstepRecord>& reset_records() const { return reset_records_; }
  double wall_time() const { return wall_time_; }
  double driving_time() const { return driving_time_; }
  long substeps() const { return substeps_; }
  int tasks_completed() const { return tasks_completed_; }
  int glances() const { return glances_; }
  bool task_active() const { return task_active_; }
  Locus locus() const { return locus_; }
  bool done() const { return done_; }
  const DrivingEnv& driving() const { return driving_; }
  const SearchEnv& search() const { return search_; }
  const SupervisorConfig& config() const { return cfg_; }

  // Raw oracle values, before any standardization.
  double raw_drive_value() const { return drive_ctl_->value(driving_.observation()); }
  double raw_search_value() const { return search_ctl_->value(search_.observation()); }

 private:
  void drive_substep(bool attended, SubstepKind kind, double wall_dt, JointStepLog& log) {
    const ControlInput u = drive_ctl_->act(driving_.observation(), rng_);
    const DrivingStepOutcome o = driving_.step(u, attended);
    ++substeps_;
    driving_time_ = kDrivingStep * static_cast<double>(substeps_);
    wall_time_ += wall_dt;
    log.drive_reward += o.reward;
    SubstepRecord r;
    r.t = wall_time_;
    r.kind = kind;
    r.true_pos = o.truth.state.center();
    r.bel_pos = driving_.belief().position;
    r.sigma_pos = driving_.belief().sigma_pos;
    r.speed = o.truth.state.speed;
    r.steering = o.truth.state.steering;
    r.r_drive = o.reward;
    r.lateral_offset = o.truth.lateral_offset;
    r.glance_id = kind == SubstepKind::kDrive ? 0 : glance_id_;
    r.task_id = task_active_ ? tasks_spawned_ : 0;
    log.records.push_back(r);
    if (pending_) {
      delay_remaining_ -= wall_dt;
      if (delay_remaining_ <= 1e-9) activate_task();
    }
  }

  // One fixation of duration d covered by ceil(d / 0.1) unattended sub-steps;
  // the last one carries the fractional remainder of wall time.
  void search_substeps(JointStepLog& log) {
    const int a = search_ctl_->act(search_.observation(), search_.action_mask(), rng_);
    const SearchStepResult s = search_.step(a);
    log.search_reward += s.reward;
    log.search_duration += s.duration;
    const int n = std::max(1, static_cast<int>(std::ceil(s.duration / kDrivingStep - 1e-9)));
    const double t_end = wall_time_ + s.duration;
    for (int i = 0; i < n && !driving_.done(); ++i) {
      const double dt = i + 1 < n ? kDrivingStep : t_end - wall_time_;
      drive_substep(false, SubstepKind::kSearch, dt, log);
    }
    if (!log.records.empty()) log.records.back().r_search += s.reward;
    if (s.done) {
      log.task_completed = true;
      ++tasks_completed_;
      task_active_ = false;
      if (tasks_spawned_ < cfg_.tasks_per_episode) {
        prepare_task();
        delay_remaining_ = search_.config().inter_task_delay_s;
        pending_ = true;
        if (delay_remaining_ <= 0.0) activate_task();
      }
    }
  }

  void glance_back(JointStepLog& log) {
    log.glance_transition = true;
    for (int i = 0; i < cfg_.transition_steps && !driving_.done(); ++i)
      drive_substep(false, SubstepKind::kToDrive, kDrivingStep, log);
    locus_ = Locus::kDrive;
    glance_id_ = 0;
    if (!driving_.done()) drive_substep(true, SubstepKind::kDrive, kDrivingStep, log);
  }

  // The next display is prepared at completion so that its initial value is
  // what the supervisor sees during the inactive delay.
  void prepare_task() {
    TaskSpec t;
    if (fixed_task_) {
      t = *fixed_task_;
    } else {
      const auto& g = cfg_.grids[rng_.uniform_int(0, static_cast<int>(cfg_.grids.size()) - 1)];
      t.rows = g[0];
      t.cols = g[1];
      t.task_type =
          cfg_.task_types[rng_.uniform_int(0, static_cast<int>(cfg_.task_types.size()) - 1)];
    }
    ++tasks_spawned_;
    search_.reset(t.rows, t.cols, t.task_type, mix_seed(seed_, 2, tasks_spawned_));
  }

  void activate_task() {
    pending_ = false;
    task_active_ = true;
  }

  SupervisorObservation make_observation() {
    SupervisorObservation o;
    o.locus = locus_;
    o.v_drive = raw_drive_value();
    o.v_search = raw_search_value();
    if (cfg_.normalize_values && norm_) {
      if (!norm_->frozen) {
        norm_->drive.push(o.v_drive);
        norm_->search.push(o.v_search);
      }
      o.v_drive = norm_->drive.standardize(o.v_drive);
      o.v_search = norm_->search.standardize(o.v_search);
    }
    if (!std::isfinite(o.v_drive) || !std::isfinite(o.v_search))
      throw ContractViolation("value oracle returned a non-finite value");
    return o;
  }

  SupervisorConfig cfg_;
  DrivingEnv driving_;
  SearchEnv search_;
  std::shared_ptr<const DrivingController> drive_ctl_;
  std::shared_ptr<const SearchController> search_ctl_;
  std::shared_ptr<ValueNormalizer> norm_;
  std::optional<TaskSpec> fixed_task_;
  Rng rng_{0};
  std::uint64_t seed_ = 0;
  double wall_time_ = 0.0;
  double driving_time_ = 0.0;
  long substeps_ = 0;
  int tasks_completed_ = 0;
  int tasks_spawned_ = 0;
  int glance_id_ = 0;
  int glances_ = 0;
  Locus locus_ = Locus::kDrive;
  bool done_ = true;
  bool task_active_ = false;
  bool pending_ = false;
  double delay_remaining_ = 0.0;
  std::vector<SubstepRecord> reset_records_;
  SupervisorObservation last_obs_;
};

inline void to_json(nlohmann::json& j, const SupervisorConfig& c) {
  j = {{"driving_weight", c.driving_weight},
       {"tasks_per_episode", c.tasks_per_episode},
       {"normalize_values", c.normalize_values},
       {"warmup_steps", c.warmup_steps},
       {"transition_steps", c.transition_steps},
       {"grids", c.grids},
       {"task_types", c.task_types}};
}
inline void from_json(const nlohmann::json& j, SupervisorConfig& c) {
  c.driving_weight = j.value("driving_weight", c.driving_weight);
  c.tasks_per_episode = j.value("tasks_per_episode", c.tasks_per_episode);
  c.normalize_values = j.value("normalize_values", c.normalize_values);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.transition_steps = j.value("transition_steps", c.transition_steps);
  if (j.contains("grids")) c.grids = j.at("grids").get<std::vector<std::array<int, 2>>>();
  if (j.contains("task_types")) c.task_types = j.at("task_types").get<std::vector<int>>();
}

}  // namespace supdrive

#endif  // SUPDRIVE_SUPERVISOR_ENV_HPP_
