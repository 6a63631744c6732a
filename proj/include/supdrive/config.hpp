#ifndef SUPDRIVE_CONFIG_HPP_
#define SUPDRIVE_CONFIG_HPP_

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/driving_env.hpp"
#include "supdrive/search_env.hpp"
#include "supdrive/supervisor_env.hpp"
#include "supdrive/training.hpp"

namespace supdrive {

struct ScenarioConfig {
  std::string name = "scenario";
  std::vector<double> speeds_kmh{60.0};
  std::vector<bool> lca{false};
  std::vector<std::array<int, 2>> grids{{2, 3}};
  std::vector<int> task_types{1};
  int n_episodes = 10;
  std::uint64_t base_seed = 1;
  int tasks_per_episode = 5;
  std::string driving_checkpoint;
  std::string search_checkpoint;
  std::string supervisor_checkpoint;
  std::string output_dir = "out";
  int workers = 1;
  bool stochastic_supervisor = true;
  bool glance_include_transitions = true;
  bool write_traces = true;
  std::vector<double> speed_bin_edges{0.0, 75.0, 105.0, 200.0};  // km/h

  void validate() const {
    if (speeds_kmh.empty() || lca.empty() || grids.empty() || task_types.empty())
      throw ConfigError("scenario sweeps must be non-empty");
    if (n_episodes < 1) throw ConfigError("scenario.n_episodes must be >= 1");
    if (tasks_per_episode < 1) throw ConfigError("scenario.tasks_per_episode must be >= 1");
    if (workers < 1) throw ConfigError("scenario.workers must be >= 1");
    for (double v : speeds_kmh)
      if (!(v > 0) || v > mps_to_kmh(kMaxSpeed) + 1e-9)
        throw ConfigError("scenario speeds must lie in (0, 150] km/h");
    for (const auto& g : grids)
      if (g[0] < 1 || g[1] < 1) throw ConfigError("scenario grids must have >= 1 element");
    for (int t : task_types)
      if (t != 0 && t != 1) throw ConfigError("scenario task types must be 0 or 1");
    if (speed_bin_edges.size() < 2 ||
        !std::is_sorted(speed_bin_edges.begin(), speed_bin_edges.end()))
      throw ConfigError("scenario.speed_bin_edges must be >= 2 ascending values");
  }
};

struct TrainSection {
  DrivingTrainConfig driving;
  SearchTrainConfig search;
  SupervisorTrainConfig supervisor;
};

struct ExperimentConfig {
  DrivingEnvConfig driving_env;
  SearchEnvConfig search_env;
  SupervisorConfig supervisor;
  TrainSection train;
  ScenarioConfig scenario;

  void validate() const {
    driving_env.validate();
    search_env.validate();
    supervisor.validate();
    train.driving.validate();
    train.search.validate();
    train.supervisor.validate();
    scenario.validate();
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& s) {
  j = {{"name", s.name},
       {"speeds_kmh", s.speeds_kmh},
       {"lca", s.lca},
       {"grids", s.grids},
       {"task_types", s.task_types},
       {"n_episodes", s.n_episodes},
       {"base_seed", s.base_seed},
       {"tasks_per_episode", s.tasks_per_episode},
       {"checkpoints",
        {{"driving", s.driving_checkpoint},
         {"search", s.search_checkpoint},
         {"supervisor", s.supervisor_checkpoint}}},
       {"output_dir", s.output_dir},
       {"workers", s.workers},
       {"stochastic_supervisor", s.stochastic_supervisor},
       {"glance_include_transitions", s.glance_include_transitions},
       {"write_traces", s.write_traces},
       {"speed_bin_edges_kmh", s.speed_bin_edges}};
}
inline void from_json(const nlohmann::json& j, ScenarioConfig& s) {
  s.name = j.value("name", s.name);
  s.speeds_kmh = j.value("speeds_kmh", s.speeds_kmh);
  s.lca = j.value("lca", s.lca);
  if (j.contains("grids")) s.grids = j.at("grids").get<std::vector<std::array<int, 2>>>();
  s.task_types = j.value("task_types", s.task_types);
  s.n_episodes = j.value("n_episodes", s.n_episodes);
  s.base_seed = j.value("base_seed", s.base_seed);
  s.tasks_per_episode = j.value("tasks_per_episode", s.tasks_per_episode);
  if (j.contains("checkpoints")) {
    const auto& c = j.at("checkpoints");
    s.driving_checkpoint = c.value("driving", s.driving_checkpoint);
    s.search_checkpoint = c.value("search", s.search_checkpoint);
    s.supervisor_checkpoint = c.value("supervisor", s.supervisor_checkpoint);
  }
  s.output_dir = j.value("output_dir", s.output_dir);
  s.workers = j.value("workers", s.workers);
  s.stochastic_supervisor = j.value("stochastic_supervisor", s.stochastic_supervisor);
  s.glance_include_transitions =
      j.value("glance_include_transitions", s.glance_include_transitions);
  s.write_traces = j.value("write_traces", s.write_traces);
  s.speed_bin_edges = j.value("speed_bin_edges_kmh", s.speed_bin_edges);
}

inline void to_json(nlohmann::json& j, const DrivingTrainConfig& c) {
  j = {{"sac", c.sac},
       {"total_steps", c.total_steps},
       {"seed", c.seed},
       {"min_speed_kmh", c.min_speed_kmh},
       {"max_speed_kmh", c.max_speed_kmh},
       {"lca_probability", c.lca_probability},
       {"episode_horizon_s", c.episode_horizon_s},
       {"offroad_reset_s", c.offroad_reset_s},
       {"eval_episodes", c.eval_episodes},
       {"eval_horizon_s", c.eval_horizon_s},
       {"eval_onlane_threshold", c.eval_onlane_threshold},
       {"eval_min_step_reward", c.eval_min_step_reward},
       {"log_every", c.log_every},
       {"convergence", c.convergence}};
}
inline void from_json(const nlohmann::json& j, DrivingTrainConfig& c) {
  if (j.contains("sac")) j.at("sac").get_to(c.sac);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  c.min_speed_kmh = j.value("min_speed_kmh", c.min_speed_kmh);
  c.max_speed_kmh = j.value("max_speed_kmh", c.max_speed_kmh);
  c.lca_probability = j.value("lca_probability", c.lca_probability);
  c.episode_horizon_s = j.value("episode_horizon_s", c.episode_horizon_s);
  c.offroad_reset_s = j.value("offroad_reset_s", c.offroad_reset_s);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.eval_horizon_s = j.value("eval_horizon_s", c.eval_horizon_s);
  c.eval_onlane_threshold = j.value("eval_onlane_threshold", c.eval_onlane_threshold);
  c.eval_min_step_reward = j.value("eval_min_step_reward", c.eval_min_step_reward);
  c.log_every = j.value("log_every", c.log_every);
  if (j.contains("convergence")) j.at("convergence").get_to(c.convergence);
}

inline void to_json(nlohmann::json& j, const SearchTrainConfig& c) {
  j = {{"ppo", c.ppo},
       {"total_steps", c.total_steps},
       {"seed", c.seed},
       {"grids", c.grids},
       {"task_types", c.task_types},
       {"eval_episodes", c.eval_episodes},
       {"min_improvement", c.min_improvement},
       {"log_every", c.log_every},
       {"convergence", c.convergence}};
}
inline void from_json(const nlohmann::json& j, SearchTrainConfig& c) {
  if (j.contains("ppo")) j.at("ppo").get_to(c.ppo);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("grids")) c.grids = j.at("grids").get<std::vector<std::array<int, 2>>>();
  c.task_types = j.value("task_types", c.task_types);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.min_improvement = j.value("min_improvement", c.min_improvement);
  c.log_every = j.value("log_every", c.log_every);
  if (j.contains("convergence")) j.at("convergence").get_to(c.convergence);
}

inline void to_json(nlohmann::json& j, const SupervisorTrainConfig& c) {
  j = {{"ppo", c.ppo},
       {"total_steps", c.total_steps},
       {"seed", c.seed},
       {"min_speed_kmh", c.min_speed_kmh},
       {"max_speed_kmh", c.max_speed_kmh},
       {"lca_probability", c.lca_probability},
       {"normalizer_warmup_steps", c.normalizer_warmup_steps},
       {"eval_episodes", c.eval_episodes},
       {"log_every", c.log_every},
       {"convergence", c.convergence}};
}
inline void from_json(const nlohmann::json& j, SupervisorTrainConfig& c) {
  if (j.contains("ppo")) j.at("ppo").get_to(c.ppo);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  c.min_speed_kmh = j.value("min_speed_kmh", c.min_speed_kmh);
  c.max_speed_kmh = j.value("max_speed_kmh", c.max_speed_kmh);
  c.lca_probability = j.value("lca_probability", c.lca_probability);
  c.normalizer_warmup_steps = j.value("normalizer_warmup_steps", c.normalizer_warmup_steps);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.log_every = j.value("log_every", c.log_every);
  if (j.contains("convergence")) j.at("convergence").get_to(c.convergence);
}

inline void to_json(nlohmann::json& j, const TrainSection& t) {
  j = {{"driving", t.driving}, {"search", t.search}, {"supervisor", t.supervisor}};
}
inline void from_json(const nlohmann::json& j, TrainSection& t) {
  if (j.contains("driving")) j.at("driving").get_to(t.driving);
  if (j.contains("search")) j.at("search").get_to(t.search);
  if (j.contains("supervisor")) j.at("supervisor").get_to(t.supervisor);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"road", c.driving_env.road},
       {"driving_env", c.driving_env},
       {"search_env", c.search_env},
       {"supervisor", c.supervisor},
       {"train", c.train},
       {"scenario", c.scenario}};
  j["driving_env"].erase("road");
}

// The top-level `road` section is the road generator; `driving_env.fixed_road`
// pins a single road instead.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const char* kSections[] = {"road", "driving_env", "search_env",
                                    "supervisor", "train", "scenario"};
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find_if(std::begin(kSections), std::end(kSections),
                     [&](const char* s) { return k == s; }) == std::end(kSections))
      throw ConfigError("unknown config section '" + k + "'");
  }
  if (j.contains("driving_env")) j.at("driving_env").get_to(c.driving_env);
  if (j.contains("road")) j.at("road").get_to(c.driving_env.road);
  if (j.contains("search_env")) j.at("search_env").get_to(c.search_env);
  if (j.contains("supervisor")) j.at("supervisor").get_to(c.supervisor);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("scenario")) j.at("scenario").get_to(c.scenario);
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig c;
  try {
    nlohmann::json::parse(text).get_to(c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open config '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

}  // namespace supdrive

#endif  // SUPDRIVE_CONFIG_HPP_
