#ifndef SUPDRIVE_TRAINING_HPP_
#define SUPDRIVE_TRAINING_HPP_

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/agents.hpp"
#include "supdrive/checkpoint.hpp"
#include "supdrive/common.hpp"
#include "supdrive/driving_env.hpp"
#include "supdrive/ppo.hpp"
#include "supdrive/sac.hpp"
#include "supdrive/search_env.hpp"
#include "supdrive/supervisor_env.hpp"

namespace supdrive {

using LogFn = std::function<void(const std::string&)>;

// Moving-average plateau test over consecutive windows of episode returns.
struct ConvergenceTracker {
  int window = 100;
  double tolerance = 0.02;
  std::deque<double> returns;

  void push(double r) {
    returns.push_back(r);
    while (static_cast<int>(returns.size()) > 2 * window) returns.pop_front();
  }
  bool ready() const { return static_cast<int>(returns.size()) == 2 * window; }
  double previous_mean() const { return mean(0); }
  double current_mean() const { return mean(window); }
  // Relative change, with unit floor so near-zero returns are not amplified.
  bool plateaued() const {
    if (!ready()) return false;
    const double a = previous_mean();
    return std::abs(current_mean() - a) <= tolerance * std::max(std::abs(a), 1.0);
  }

 private:
  double mean(int from) const {
    double s = 0.0;
    for (int i = from; i < from + window; ++i) s += returns[i];
    return s / window;
  }
};

struct ConvergenceConfig {
  int window = 100;
  double tolerance = 0.02;
};

// ---------------------------------------------------------------- driving

struct DrivingTrainConfig {
  SacConfig sac;
  long total_steps = 1'000'000;
  std::uint64_t seed = 1;
  double min_speed_kmh = 30.0;
  double max_speed_kmh = 150.0;
  double lca_probability = 0.5;
  double episode_horizon_s = 30.0;
  double offroad_reset_s = 3.0;  // end an episode after this long off-lane
  int eval_episodes = 100;
  double eval_horizon_s = 60.0;
  double eval_onlane_threshold = 0.95;
  // Rules out crawling: a car far below the limit stays on-lane trivially.
  double eval_min_step_reward = -0.01;
  long log_every = 10000;
  ConvergenceConfig convergence;

  void validate() const {
    sac.validate();
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (!(min_speed_kmh > 0) || max_speed_kmh < min_speed_kmh ||
        max_speed_kmh > mps_to_kmh(kMaxSpeed) + 1e-9)
      throw ConfigError("train speed range must lie in (0, 150] km/h");
    if (!(lca_probability >= 0 && lca_probability <= 1))
      throw ConfigError("train.lca_probability must lie in [0, 1]");
    if (!(episode_horizon_s > 0) || !(offroad_reset_s > 0) || !(eval_horizon_s > 0))
      throw ConfigError("train horizons must be > 0");
    if (eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
  }
};

struct DrivingEvalReport {
  int episodes = 0;
  int on_lane_episodes = 0;
  double mean_step_reward = 0.0;
  double on_lane_fraction() const {
    return episodes ? static_cast<double>(on_lane_episodes) / episodes : 0.0;
  }
};

// Greedy policy, full attention, random speed limits; LCA off.
inline DrivingEvalReport evaluate_driving(const DrivingAgent& agent, DrivingEnvConfig env_cfg,
                                          int episodes, double horizon_s, std::uint64_t seed,
                                          double min_kmh = 30.0, double max_kmh = 150.0) {
  env_cfg.horizon_s = horizon_s;
  env_cfg.inattention.enabled = false;
  DrivingEnv env(env_cfg);
  Rng rng(mix_seed(seed, 0x4556414c));  // "EVAL"
  DrivingEvalReport rep;
  double reward = 0.0;
  long steps = 0;
  for (int e = 0; e < episodes; ++e) {
    EpisodeOverrides ov;
    ov.speed_limit_kmh = rng.uniform(min_kmh, max_kmh);
    ov.lca = false;
    DrivingObservation obs = env.reset(mix_seed(seed, 7, e), ov);
    bool on_lane = true;
    while (!env.done()) {
      const auto out = env.step(agent.act(obs, rng), true);
      obs = out.observation;
      reward += out.reward;
      ++steps;
      if (out.truth.crossed) on_lane = false;
    }
    ++rep.episodes;
    if (on_lane) ++rep.on_lane_episodes;
  }
  rep.mean_step_reward = steps ? reward / steps : 0.0;
  return rep;
}

struct TrainResult {
  Checkpoint checkpoint;
  bool converged = false;
  std::string diagnostics;
};

inline TrainResult train_driving(const DrivingTrainConfig& cfg, DrivingEnvConfig env_cfg,
                                 const LogFn& log = {}) {
  cfg.validate();
  env_cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  DrivingEnvConfig train_env = env_cfg;
  train_env.horizon_s = cfg.episode_horizon_s;
  DrivingEnv env(train_env);
  Sac sac(kDrivingFeatureDim, 2, cfg.sac, cfg.seed);
  ReplayBuffer buf(kDrivingFeatureDim, 2,
                   std::min<long>(cfg.sac.replay_capacity, std::max<long>(cfg.total_steps, 1)));
  Rng rng(mix_seed(cfg.seed, 0x54524e44));  // "TRND"
  ConvergenceTracker conv{cfg.convergence.window, cfg.convergence.tolerance, {}};

  long episode = 0;
  auto new_episode = [&](DrivingObservation& obs, AttentionCurriculum& cur) {
    EpisodeOverrides ov;
    ov.speed_limit_kmh = rng.uniform(cfg.min_speed_kmh, cfg.max_speed_kmh);
    ov.lca = rng.bernoulli(cfg.lca_probability);
    const std::uint64_t s = mix_seed(cfg.seed, 3, static_cast<std::uint64_t>(episode));
    obs = env.reset(s, ov);
    cur = AttentionCurriculum(train_env.inattention, s, train_env.dt);
    ++episode;
  };

  DrivingObservation obs{};
  AttentionCurriculum cur(train_env.inattention, 0, train_env.dt);
  new_episode(obs, cur);
  Vec feats = driving_features(obs);
  double ep_return = 0.0;
  int offroad_steps = 0;
  const int offroad_limit = static_cast<int>(std::lround(cfg.offroad_reset_s / train_env.dt));
  SacUpdateStats last{};
  std::deque<double> recent;
  for (long t = 0; t < cfg.total_steps; ++t) {
    const bool attended = cur.next();
    Vec a(2);
    if (t < cfg.sac.learning_starts) {
      a << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    } else {
      a = sac.act(feats, false, rng);
    }
    const DrivingStepOutcome out = env.step(driving_control(a), attended);
    const Vec next = driving_features(out.observation);
    buf.add(feats, a, out.reward, next, out.terminated);
    ep_return += out.reward;
    offroad_steps = out.truth.on_lane ? 0 : offroad_steps + 1;
    feats = next;
    if (out.terminated || out.truncated || offroad_steps >= offroad_limit) {
      conv.push(ep_return);
      recent.push_back(ep_return);
      if (recent.size() > 20) recent.pop_front();
      ep_return = 0.0;
      offroad_steps = 0;
      new_episode(obs, cur);
      feats = driving_features(obs);
    }
    if (t >= cfg.sac.learning_starts && (t + 1) % cfg.sac.train_freq == 0)
      for (int g = 0; g < cfg.sac.gradient_steps; ++g) last = sac.update(buf, rng);
    if (log && cfg.log_every > 0 && (t + 1) % cfg.log_every == 0) {
      const double avg =
          recent.empty() ? 0.0 : std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
      std::ostringstream ss;
      ss << "driving step " << (t + 1) << "/" << cfg.total_steps << " episodes " << episode
         << " avg_return(20) " << avg << " alpha " << last.alpha << " critic_loss "
         << last.critic_loss << " entropy " << last.entropy;
      log(ss.str());
    }
  }

  DrivingAgent agent(std::move(sac));
  DrivingEnvConfig eval_env = env_cfg;
  eval_env.noise = NoiseParams{};
  const DrivingEvalReport ev = evaluate_driving(agent, eval_env, cfg.eval_episodes,
                                                cfg.eval_horizon_s, mix_seed(cfg.seed, 99));
  const bool passed = ev.on_lane_fraction() >= cfg.eval_onlane_threshold &&
                      ev.mean_step_reward >= cfg.eval_min_step_reward;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  nlohmann::json meta;
  meta["train_config"] = {{"total_steps", cfg.total_steps},
                          {"seed", cfg.seed},
                          {"speed_range_kmh", {cfg.min_speed_kmh, cfg.max_speed_kmh}},
                          {"lca_probability", cfg.lca_probability},
                          {"episode_horizon_s", cfg.episode_horizon_s},
                          {"offroad_reset_s", cfg.offroad_reset_s}};
  meta["env_config"] = env_cfg;
  meta["seed_lineage"] = {{"base_seed", cfg.seed}, {"episodes", episode}};
  meta["evaluation"] = {{"episodes", ev.episodes},
                        {"on_lane_fraction", ev.on_lane_fraction()},
                        {"mean_step_reward", ev.mean_step_reward},
                        {"threshold", cfg.eval_onlane_threshold},
                        {"min_step_reward", cfg.eval_min_step_reward}};
  meta["plateau"] = {{"ready", conv.ready()},
                     {"plateaued", conv.plateaued()},
                     {"previous_mean", conv.ready() ? conv.previous_mean() : 0.0},
                     {"current_mean", conv.ready() ? conv.current_mean() : 0.0}};
  meta["converged"] = passed;
  meta["train_seconds"] = secs;

  TrainResult r;
  r.checkpoint = agent.to_checkpoint(meta);
  r.converged = passed;
  std::ostringstream d;
  d << "driving evaluation: on-lane " << ev.on_lane_episodes << "/" << ev.episodes
    << " (threshold " << cfg.eval_onlane_threshold << "), mean step reward "
    << ev.mean_step_reward << " (floor " << cfg.eval_min_step_reward << "), episodes trained "
    << episode << ", " << secs << " s";
  r.diagnostics = d.str();
  if (log) log(r.diagnostics);
  return r;
}

// ---------------------------------------------------------------- search

struct SearchTrainConfig {
  PpoConfig ppo;
  long total_steps = 300'000;
  std::uint64_t seed = 1;
  std::vector<std::array<int, 2>> grids{{2, 3}, {3, 3}, {3, 4}};
  std::vector<int> task_types{0, 1};
  int eval_episodes = 200;
  double min_improvement = 0.4;  // vs random fixation on 3x3 type 1
  long log_every = 20480;
  ConvergenceConfig convergence;

  void validate() const {
    ppo.validate();
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (grids.empty() || task_types.empty()) throw ConfigError("search task lists empty");
    if (eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
  }
};

// Mean completion time of a task under a policy; `policy` maps
// (env, rng) -> element.
template <class Policy>
double mean_completion_time(SearchEnvConfig cfg, int rows, int cols, int task_type,
                            int episodes, std::uint64_t seed, Policy&& policy,
                            double* repeat_rate = nullptr, double* mean_amplitude = nullptr) {
  SearchEnv env(cfg);
  Rng rng(mix_seed(seed, 0x53455641));
  double total = 0.0;
  long steps = 0, repeats = 0;
  double amp = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(rows, cols, task_type, mix_seed(seed, 5, e));
    int guard = 0;
    while (!env.done()) {
      const int a = policy(env, rng);
      if (a >= 0 && a < env.num_elements() && env.encoded()[a]) ++repeats;
      amp += (env.element_position(a) - env.element_position(env.fixation())).norm();
      env.step(a);
      ++steps;
      if (++guard > 10000) throw TrainingError("search policy never completes the task");
    }
    total += env.elapsed();
  }
  if (repeat_rate) *repeat_rate = steps ? static_cast<double>(repeats) / steps : 0.0;
  if (mean_amplitude) *mean_amplitude = steps ? amp / steps : 0.0;
  return total / episodes;
}

inline auto search_agent_policy(const SearchAgent& agent) {
  return [&agent](const SearchEnv& env, Rng& rng) {
    return agent.act(env.observation(), env.action_mask(), rng);
  };
}

inline auto random_fixation_policy() {
  return [](const SearchEnv& env, Rng& rng) { return rng.uniform_int(0, env.num_elements() - 1); };
}

inline TrainResult train_search(const SearchTrainConfig& cfg, SearchEnvConfig env_cfg,
                                const LogFn& log = {}) {
  cfg.validate();
  env_cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  SearchEnv env(env_cfg);
  Ppo ppo(env_cfg.observation_dim(), env_cfg.max_elements(), cfg.ppo, cfg.seed);
  Rng rng(mix_seed(cfg.seed, 0x54525352));  // "TRSR"
  ConvergenceTracker conv{cfg.convergence.window, cfg.convergence.tolerance, {}};
  long episode = 0;
  auto new_episode = [&]() {
    const auto& g = cfg.grids[rng.uniform_int(0, static_cast<int>(cfg.grids.size()) - 1)];
    const int type = cfg.task_types[rng.uniform_int(0, static_cast<int>(cfg.task_types.size()) - 1)];
    ++episode;
    return env.reset(g[0], g[1], type, mix_seed(cfg.seed, 4, episode));
  };
  std::vector<double> obs = new_episode();
  double ep_return = 0.0;
  RolloutBuffer buf;
  std::vector<double> curve;  // moving-average return at each update
  std::deque<double> recent;
  for (long t = 0; t < cfg.total_steps; ++t) {
    const Vec x = SearchAgent::to_vec(obs);
    const auto mask = env.action_mask();
    double logp = 0.0;
    const int a = ppo.act(x, mask, false, rng, &logp);
    const double v = ppo.value(x);
    const SearchStepResult s = env.step(a);
    ep_return += s.reward;
    buf.add(x, mask, a, logp, v, s.reward, s.done);
    obs = s.observation;
    if (s.done) {
      conv.push(ep_return);
      recent.push_back(ep_return);
      if (recent.size() > 100) recent.pop_front();
      ep_return = 0.0;
      obs = new_episode();
    }
    if (static_cast<int>(buf.size()) >= cfg.ppo.n_steps) {
      buf.last_value = ppo.value(SearchAgent::to_vec(obs));
      const PpoUpdateStats st = ppo.update(buf, rng);
      buf.clear();
      const double avg = recent.empty()
                             ? 0.0
                             : std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
      curve.push_back(avg);
      if (log && cfg.log_every > 0 && (t + 1) % cfg.log_every < cfg.ppo.n_steps) {
        std::ostringstream ss;
        ss << "search step " << (t + 1) << "/" << cfg.total_steps << " avg_return(100) " << avg
           << " entropy " << st.entropy << " value_loss " << st.value_loss;
        log(ss.str());
      }
    }
  }
  SearchAgent agent(std::move(ppo), env_cfg);
  const std::uint64_t es = mix_seed(cfg.seed, 98);
  double repeat = 0.0, amp = 0.0, rand_amp = 0.0;
  const double t_random = mean_completion_time(env_cfg, 3, 3, 1, cfg.eval_episodes, es,
                                               random_fixation_policy(), nullptr, &rand_amp);
  // An undertrained greedy policy can refixate one element forever; that is
  // a failed evaluation, not a crash.
  double t_agent = std::numeric_limits<double>::quiet_NaN();
  std::string eval_error;
  try {
    t_agent = mean_completion_time(env_cfg, 3, 3, 1, cfg.eval_episodes, es,
                                   search_agent_policy(agent), &repeat, &amp);
  } catch (const TrainingError& e) {
    eval_error = e.what();
  }
  const double improvement = eval_error.empty() ? 1.0 - t_agent / t_random : -1.0;
  const bool passed = eval_error.empty() && improvement >= cfg.min_improvement;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  nlohmann::json meta;
  meta["train_config"] = {{"total_steps", cfg.total_steps},
                          {"seed", cfg.seed},
                          {"grids", cfg.grids},
                          {"task_types", cfg.task_types}};
  meta["env_config"] = env_cfg;
  meta["seed_lineage"] = {{"base_seed", cfg.seed}, {"episodes", episode}};
  meta["evaluation"] = {{"completion_time_3x3_type1_s", t_agent},
                        {"random_completion_time_3x3_type1_s", t_random},
                        {"improvement", improvement},
                        {"repeat_fixation_rate", repeat},
                        {"mean_saccade_deg", amp},
                        {"random_mean_saccade_deg", rand_amp},
                        {"threshold", cfg.min_improvement}};
  if (!eval_error.empty()) {
    meta["evaluation"]["completion_time_3x3_type1_s"] = nullptr;
    meta["evaluation"]["error"] = eval_error;
  }
  meta["learning_curve"] = curve;
  meta["plateau"] = {{"ready", conv.ready()}, {"plateaued", conv.plateaued()}};
  meta["converged"] = passed;
  meta["train_seconds"] = secs;
  TrainResult r;
  r.checkpoint = agent.to_checkpoint(meta);
  r.converged = passed;
  std::ostringstream d;
  if (!eval_error.empty()) d << "search evaluation failed (" << eval_error << "); ";
  d << "search evaluation: 3x3 type-1 completion " << t_agent << " s vs random " << t_random
    << " s (improvement " << improvement << ", threshold " << cfg.min_improvement
    << "), repeat rate " << repeat << ", " << secs << " s";
  r.diagnostics = d.str();
  if (log) log(r.diagnostics);
  return r;
}

// ---------------------------------------------------------------- supervisor

struct SupervisorTrainConfig {
  PpoConfig ppo;
  long total_steps = 500'000;
  std::uint64_t seed = 1;
  double min_speed_kmh = 30.0;
  double max_speed_kmh = 150.0;
  double lca_probability = 0.5;
  long normalizer_warmup_steps = 5000;
  int eval_episodes = 50;
  long log_every = 20480;
  ConvergenceConfig convergence;

  void validate() const {
    ppo.validate();
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (!(min_speed_kmh > 0) || max_speed_kmh < min_speed_kmh ||
        max_speed_kmh > mps_to_kmh(kMaxSpeed) + 1e-9)
      throw ConfigError("train speed range must lie in (0, 150] km/h");
    if (!(lca_probability >= 0 && lca_probability <= 1))
      throw ConfigError("train.lca_probability must lie in [0, 1]");
    if (normalizer_warmup_steps < 0 || eval_episodes < 1)
      throw ConfigError("supervisor warmup / eval counts invalid");
  }
};

inline void require_converged(const Checkpoint& c) {
  if (!c.meta.value("converged", false))
    throw PreconditionError(c.kind + " checkpoint did not pass its convergence checks; "
                            "retrain it before training the supervisor");
}

// Scripted supervisor policies used as baselines and in audits.
using SupervisorPolicy = std::function<Locus(const SupervisorEnv&, const SupervisorObservation&, Rng&)>;

inline SupervisorPolicy always_drive_policy() {
  return [](const SupervisorEnv&, const SupervisorObservation&, Rng&) { return Locus::kDrive; };
}

// Alternates `drive_steps` DRIVE decisions with `search_steps` SEARCH ones.
inline SupervisorPolicy fixed_alternation_policy(int drive_steps, int search_steps) {
  auto counter = std::make_shared<long>(0);
  return [=](const SupervisorEnv& env, const SupervisorObservation&, Rng&) {
    if (!env.task_active()) {
      *counter = 0;
      return Locus::kDrive;
    }
    const long k = (*counter)++ % (drive_steps + search_steps);
    return k < drive_steps ? Locus::kDrive : Locus::kSearch;
  };
}

inline SupervisorPolicy agent_policy(const SupervisorAgent& agent, bool deterministic) {
  return [&agent, deterministic](const SupervisorEnv& env, const SupervisorObservation& o,
                                 Rng& rng) { return agent.act(o, env.action_mask(), deterministic, rng); };
}

struct SupervisorEvalReport {
  double mean_return = 0.0;
  double mean_tasks = 0.0;
};

inline SupervisorEvalReport evaluate_supervisor(SupervisorEnv& env, const SupervisorPolicy& policy,
                                                int episodes, std::uint64_t seed,
                                                double min_kmh, double max_kmh,
                                                double lca_probability) {
  Rng rng(mix_seed(seed, 0x53564556));
  SupervisorEvalReport rep;
  for (int e = 0; e < episodes; ++e) {
    EpisodeOverrides ov;
    ov.speed_limit_kmh = rng.uniform(min_kmh, max_kmh);
    ov.lca = rng.bernoulli(lca_probability);
    SupervisorObservation o = env.reset(mix_seed(seed, 6, e), ov);
    double ret = 0.0;
    while (!env.done()) {
      const auto r = env.step(policy(env, o, rng));
      o = r.observation;
      ret += r.reward;
    }
    rep.mean_return += ret / episodes;
    rep.mean_tasks += static_cast<double>(env.tasks_completed()) / episodes;
  }
  return rep;
}

inline TrainResult train_supervisor(const SupervisorTrainConfig& cfg,
                                    const SupervisorConfig& sup_cfg,
                                    const DrivingEnvConfig& drive_env,
                                    const SearchEnvConfig& search_env,
                                    const Checkpoint& driving_ckpt,
                                    const Checkpoint& search_ckpt, const LogFn& log = {}) {
  cfg.validate();
  sup_cfg.validate();
  require_converged(driving_ckpt);
  require_converged(search_ckpt);
  const auto t_start = std::chrono::steady_clock::now();
  auto drive = std::make_shared<DrivingAgent>(DrivingAgent::from_checkpoint(driving_ckpt));
  auto search = std::make_shared<SearchAgent>(SearchAgent::from_checkpoint(search_ckpt));
  SupervisorEnv env(sup_cfg, drive_env, search_env);
  env.attach(drive, search);
  auto norm = std::make_shared<ValueNormalizer>();
  env.set_normalizer(norm);
  Rng rng(mix_seed(cfg.seed, 0x54525356));  // "TRSV"
  Ppo ppo(kSupervisorObsDim, 2, cfg.ppo, cfg.seed);
  SupervisorAgent agent(std::move(ppo), norm);

  long episode = 0;
  auto new_episode = [&]() {
    EpisodeOverrides ov;
    ov.speed_limit_kmh = rng.uniform(cfg.min_speed_kmh, cfg.max_speed_kmh);
    ov.lca = rng.bernoulli(cfg.lca_probability);
    ++episode;
    return env.reset(mix_seed(cfg.seed, 8, episode), ov);
  };

  // Value statistics from a uniformly random supervisor, then frozen.
  if (sup_cfg.normalize_values && cfg.normalizer_warmup_steps > 0) {
    SupervisorObservation o = new_episode();
    for (long t = 0; t < cfg.normalizer_warmup_steps; ++t) {
      const auto mask = env.action_mask();
      const Locus a = mask[1] && rng.bernoulli(0.5) ? Locus::kSearch : Locus::kDrive;
      const auto r = env.step(a);
      o = r.done ? new_episode() : r.observation;
    }
  }
  norm->frozen = true;

  ConvergenceTracker conv{cfg.convergence.window, cfg.convergence.tolerance, {}};
  SupervisorObservation obs = new_episode();
  double ep_return = 0.0;
  RolloutBuffer buf;
  std::deque<double> recent;
  for (long t = 0; t < cfg.total_steps; ++t) {
    const Vec x = SupervisorAgent::features(obs);
    const auto mask = env.action_mask();
    double logp = 0.0;
    const int a = agent.ppo().act(x, mask, false, rng, &logp);
    const double v = agent.ppo().value(x);
    const auto r = env.step(static_cast<Locus>(a));
    ep_return += r.reward;
    buf.add(x, mask, a, logp, v, r.reward, r.done);
    obs = r.observation;
    if (r.done) {
      conv.push(ep_return);
      recent.push_back(ep_return);
      if (recent.size() > 20) recent.pop_front();
      ep_return = 0.0;
      obs = new_episode();
    }
    if (static_cast<int>(buf.size()) >= cfg.ppo.n_steps) {
      buf.last_value = agent.ppo().value(SupervisorAgent::features(obs));
      const PpoUpdateStats st = agent.ppo().update(buf, rng);
      buf.clear();
      if (log && cfg.log_every > 0 && (t + 1) % cfg.log_every < cfg.ppo.n_steps) {
        const double avg = recent.empty() ? 0.0
                                          : std::accumulate(recent.begin(), recent.end(), 0.0) /
                                                recent.size();
        std::ostringstream ss;
        ss << "supervisor step " << (t + 1) << "/" << cfg.total_steps << " episodes " << episode
           << " avg_return(20) " << avg << " entropy " << st.entropy << " value_loss "
           << st.value_loss;
        log(ss.str());
      }
    }
  }

  const std::uint64_t es = mix_seed(cfg.seed, 97);
  const auto ev_agent = evaluate_supervisor(env, agent_policy(agent, false), cfg.eval_episodes, es,
                                            cfg.min_speed_kmh, cfg.max_speed_kmh,
                                            cfg.lca_probability);
  const auto ev_drive = evaluate_supervisor(env, always_drive_policy(), cfg.eval_episodes, es,
                                            cfg.min_speed_kmh, cfg.max_speed_kmh,
                                            cfg.lca_probability);
  const auto ev_alt = evaluate_supervisor(env, fixed_alternation_policy(10, 3), cfg.eval_episodes,
                                          es, cfg.min_speed_kmh, cfg.max_speed_kmh,
                                          cfg.lca_probability);
  const bool passed =
      ev_agent.mean_return > ev_drive.mean_return && ev_agent.mean_return > ev_alt.mean_return;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  nlohmann::json meta;
  meta["train_config"] = {{"total_steps", cfg.total_steps},
                          {"seed", cfg.seed},
                          {"speed_range_kmh", {cfg.min_speed_kmh, cfg.max_speed_kmh}},
                          {"lca_probability", cfg.lca_probability},
                          {"normalizer_warmup_steps", cfg.normalizer_warmup_steps}};
  meta["env_config"] = {{"supervisor", sup_cfg}, {"driving_env", drive_env}, {"search_env", search_env}};
  meta["seed_lineage"] = {{"base_seed", cfg.seed},
                          {"episodes", episode},
                          {"driving_seed", driving_ckpt.meta.value("seed_lineage", nlohmann::json())},
                          {"search_seed", search_ckpt.meta.value("seed_lineage", nlohmann::json())}};
  meta["evaluation"] = {{"mean_return", ev_agent.mean_return},
                        {"mean_tasks", ev_agent.mean_tasks},
                        {"always_drive_return", ev_drive.mean_return},
                        {"alternation_return", ev_alt.mean_return}};
  meta["plateau"] = {{"ready", conv.ready()}, {"plateaued", conv.plateaued()}};
  meta["converged"] = passed;
  meta["train_seconds"] = secs;
  TrainResult r;
  r.checkpoint = agent.to_checkpoint(meta);
  r.converged = passed;
  std::ostringstream d;
  d << "supervisor evaluation: return " << ev_agent.mean_return << " (tasks "
    << ev_agent.mean_tasks << ") vs always-drive " << ev_drive.mean_return
    << " vs alternation " << ev_alt.mean_return << ", " << secs << " s";
  r.diagnostics = d.str();
  if (log) log(r.diagnostics);
  return r;
}

inline void to_json(nlohmann::json& j, const ConvergenceConfig& c) {
  j = {{"window", c.window}, {"tolerance", c.tolerance}};
}
inline void from_json(const nlohmann::json& j, ConvergenceConfig& c) {
  c.window = j.value("window", c.window);
  c.tolerance = j.value("tolerance", c.tolerance);
}

}  // namespace supdrive

#endif  // SUPDRIVE_TRAINING_HPP_
