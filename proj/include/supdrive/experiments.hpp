#ifndef SUPDRIVE_EXPERIMENTS_HPP_
#define SUPDRIVE_EXPERIMENTS_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "supdrive/agents.hpp"
#include "supdrive/checkpoint.hpp"
#include "supdrive/common.hpp"
#include "supdrive/config.hpp"
#include "supdrive/stats.hpp"
#include "supdrive/supervisor_env.hpp"

namespace supdrive {

namespace fs = std::filesystem;

// ------------------------------------------------------------ trace CSV

using TraceRecord = SubstepRecord;

inline const char* kTraceHeader =
    "t_s,locus,true_x_m,true_y_m,bel_x_m,bel_y_m,sigma_pos_m,v_mps,delta_rad,r_drive,"
    "r_search,lat_offset_m,glance_id,task_id";

// Shortest text that parses back to the same double.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "NA";
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  if (s == "NA") return stats::kNaN;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw ParseError("malformed number '" + s + "' in " + what);
  return v;
}

inline long parse_long(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    throw ParseError("malformed integer '" + s + "' in " + what);
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& rows) {
  os << kTraceHeader << "\n";
  for (const auto& r : rows) {
    os << fmt(r.t) << ',' << substep_name(r.kind) << ',' << fmt(r.true_pos.x) << ','
       << fmt(r.true_pos.y) << ',' << fmt(r.bel_pos.x) << ',' << fmt(r.bel_pos.y) << ','
       << fmt(r.sigma_pos) << ',' << fmt(r.speed) << ',' << fmt(r.steering) << ','
       << fmt(r.r_drive) << ',' << fmt(r.r_search) << ',' << fmt(r.lateral_offset) << ','
       << r.glance_id << ',' << r.task_id << "\n";
  }
}

inline std::vector<TraceRecord> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty trace");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw ParseError("trace header mismatch");
  std::vector<TraceRecord> rows;
  long n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "trace line " + std::to_string(n);
    if (f.size() != 14) throw ParseError(where + ": expected 14 fields");
    TraceRecord r;
    r.t = parse_double(f[0], where);
    r.kind = parse_substep(f[1]);
    r.true_pos = {parse_double(f[2], where), parse_double(f[3], where)};
    r.bel_pos = {parse_double(f[4], where), parse_double(f[5], where)};
    r.sigma_pos = parse_double(f[6], where);
    r.speed = parse_double(f[7], where);
    r.steering = parse_double(f[8], where);
    r.r_drive = parse_double(f[9], where);
    r.r_search = parse_double(f[10], where);
    r.lateral_offset = parse_double(f[11], where);
    r.glance_id = static_cast<int>(parse_long(f[12], where));
    r.task_id = static_cast<int>(parse_long(f[13], where));
    rows.push_back(r);
  }
  return rows;
}

// ------------------------------------------------------------ glances

struct Glance {
  int id = 0;
  double start = 0.0;
  double end = 0.0;
  double duration = 0.0;
  bool complete = false;  // gaze returned to the road within the trace
};

inline void validate_trace(const std::vector<TraceRecord>& rows) {
  double prev = 0.0;
  int last_id = 0;
  int open_id = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!(rows[i].t > prev)) throw ParseError("trace wall time is not strictly increasing");
    prev = rows[i].t;
    const int g = rows[i].glance_id;
    if (g < 0) throw ParseError("negative glance id");
    if (g != open_id) {
      if (g != 0 && g != last_id + 1) throw ParseError("glance ids are not contiguous");
      if (g != 0) last_id = g;
      open_id = g;
    }
  }
}

// A glance runs from the decision that moves gaze off the road to the end
// of the return transition. With include_transitions = false only display
// dwell (search sub-steps) counts. A glance is complete only once the trace
// shows gaze back on the road; a return cut short by the horizon is not.
inline std::vector<Glance> segment_glances(const std::vector<TraceRecord>& rows,
                                           bool include_transitions = true) {
  validate_trace(rows);
  std::vector<Glance> out;
  double prev_t = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double dt = r.t - prev_t;
    if (r.glance_id > 0) {
      if (out.empty() || out.back().id != r.glance_id) {
        Glance g;
        g.id = r.glance_id;
        g.start = prev_t;
        out.push_back(g);
      }
      Glance& g = out.back();
      g.end = r.t;
      if (include_transitions || r.kind == SubstepKind::kSearch) g.duration += dt;
      g.complete = false;
    } else if (!out.empty() && i > 0 && rows[i - 1].glance_id == out.back().id) {
      out.back().complete = rows[i - 1].kind == SubstepKind::kToDrive;
    }
    prev_t = r.t;
  }
  return out;
}

struct TaskSpan {
  int id = 0;
  double start = 0.0;
  double end = 0.0;
  bool completed = false;
};

// Tasks run from spawn to the completing fixation; a task still open at the
// final row was cut off by the episode end.
inline std::vector<TaskSpan> segment_tasks(const std::vector<TraceRecord>& rows) {
  std::vector<TaskSpan> out;
  double prev_t = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.task_id > 0) {
      if (out.empty() || out.back().id != r.task_id) {
        TaskSpan s;
        s.id = r.task_id;
        s.start = prev_t;
        out.push_back(s);
      }
      out.back().end = r.t;
      out.back().completed = i + 1 < rows.size();
    }
    prev_t = r.t;
  }
  return out;
}

// ------------------------------------------------------------ metrics

struct EpisodeMetrics {
  int condition = 0;
  int episode = 0;
  double glance_sum = 0.0;  // complete glances only
  int glance_count = 0;
  int glances = 0;  // all DRIVE -> SEARCH transitions
  double offset_sum = 0.0;  // |lateral offset| over all sub-steps
  long offset_count = 0;
  double task_sum = 0.0;
  int task_count = 0;
  int offroad_steps = 0;

  double mean_glance() const { return glance_count ? glance_sum / glance_count : stats::kNaN; }
  double mean_task() const { return task_count ? task_sum / task_count : stats::kNaN; }
  double mean_offset() const { return offset_count ? offset_sum / offset_count : stats::kNaN; }
};

inline EpisodeMetrics episode_metrics(const std::vector<TraceRecord>& rows,
                                      bool include_transitions) {
  EpisodeMetrics m;
  for (const auto& g : segment_glances(rows, include_transitions)) {
    ++m.glances;
    if (g.complete) {
      m.glance_sum += g.duration;
      ++m.glance_count;
    }
  }
  for (const auto& r : rows) {
    m.offset_sum += std::abs(r.lateral_offset);
    ++m.offset_count;
    if (r.r_drive <= -1.0 + 1e-12 && r.r_drive < 0) ++m.offroad_steps;
  }
  for (const auto& t : segment_tasks(rows)) {
    if (!t.completed) continue;
    m.task_sum += t.end - t.start;
    ++m.task_count;
  }
  return m;
}

inline const std::vector<std::string>& summary_variables() {
  static const std::vector<std::string> v{"glance_duration_s", "lateral_offset_m",
                                          "glances_per_task", "task_duration_s"};
  return v;
}

// Pooled ratio estimator for one variable over a set of episodes.
inline double pooled(const std::vector<EpisodeMetrics>& e, const std::string& var) {
  double num = 0.0, den = 0.0;
  for (const auto& m : e) {
    if (var == "glance_duration_s") {
      num += m.glance_sum;
      den += m.glance_count;
    } else if (var == "lateral_offset_m") {
      num += m.offset_sum;
      den += static_cast<double>(m.offset_count);
    } else if (var == "glances_per_task") {
      num += m.glances;
      den += m.task_count;
    } else if (var == "task_duration_s") {
      num += m.task_sum;
      den += m.task_count;
    } else {
      throw ContractViolation("unknown summary variable '" + var + "'");
    }
  }
  return den > 0 ? num / den : stats::kNaN;
}

struct VariableSummary {
  double mean = stats::kNaN;
  double ci95 = stats::kNaN;
  long n = 0;

  bool operator==(const VariableSummary& o) const {
    auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
    return same(mean, o.mean) && same(ci95, o.ci95) && n == o.n;
  }
};

struct ConditionSummary {
  std::string condition;
  long episodes = 0;
  std::map<std::string, VariableSummary> vars;

  bool operator==(const ConditionSummary& o) const {
    return condition == o.condition && episodes == o.episodes && vars == o.vars;
  }
};

// Means are pooled over episodes; CIs come from a cluster bootstrap that
// resamples whole episodes. Episodes are sorted by id first so the result
// does not depend on input order.
inline ConditionSummary summarize(std::vector<EpisodeMetrics> eps, const std::string& key,
                                  int resamples = 1000) {
  if (eps.empty()) throw DegenerateInput("summarize needs at least one episode");
  std::sort(eps.begin(), eps.end(), [](const auto& a, const auto& b) {
    return std::tie(a.condition, a.episode) < std::tie(b.condition, b.episode);
  });
  ConditionSummary s;
  s.condition = key;
  s.episodes = static_cast<long>(eps.size());
  const std::uint64_t seed = fnv1a(key);
  for (const auto& var : summary_variables()) {
    VariableSummary v;
    v.mean = pooled(eps, var);
    v.n = s.episodes;
    if (!std::isnan(v.mean)) {
      Rng rng(mix_seed(seed, fnv1a(var)));
      std::vector<double> boot;
      boot.reserve(resamples);
      std::vector<EpisodeMetrics> sample(eps.size());
      const int n = static_cast<int>(eps.size());
      for (int r = 0; r < resamples; ++r) {
        for (int i = 0; i < n; ++i) sample[i] = eps[rng.uniform_int(0, n - 1)];
        const double x = pooled(sample, var);
        if (!std::isnan(x)) boot.push_back(x);
      }
      if (boot.size() >= 2) {
        std::sort(boot.begin(), boot.end());
        auto q = [&](double p) {
          const double pos = p * (boot.size() - 1);
          const auto lo = static_cast<std::size_t>(std::floor(pos));
          const auto hi = std::min(lo + 1, boot.size() - 1);
          return boot[lo] + (pos - lo) * (boot[hi] - boot[lo]);
        };
        v.ci95 = std::max(0.0, (q(0.975) - q(0.025)) / 2.0);
      } else {
        v.ci95 = 0.0;
      }
    }
    s.vars[var] = v;
  }
  return s;
}

inline void write_summary_csv(std::ostream& os, const std::vector<ConditionSummary>& sums) {
  os << "condition,variable,mean,ci95,n\n";
  for (const auto& s : sums)
    for (const auto& var : summary_variables()) {
      const auto& v = s.vars.at(var);
      os << s.condition << ',' << var << ',' << fmt(v.mean) << ',' << fmt(v.ci95) << ','
         << v.n << "\n";
    }
}

inline std::vector<ConditionSummary> read_summary_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty summary");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "condition,variable,mean,ci95,n") throw ParseError("summary header mismatch");
  std::vector<ConditionSummary> out;
  long n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "summary line " + std::to_string(n);
    if (f.size() != 5) throw ParseError(where + ": expected 5 fields");
    if (out.empty() || out.back().condition != f[0]) {
      out.push_back({});
      out.back().condition = f[0];
    }
    VariableSummary v{parse_double(f[2], where), parse_double(f[3], where),
                      parse_long(f[4], where)};
    out.back().vars[f[1]] = v;
    out.back().episodes = v.n;
  }
  return out;
}

// ------------------------------------------------------------ fit report

struct FitReport {
  std::string variable;
  stats::Fit fit;
  std::vector<std::string> conditions;
  std::vector<double> model, reference;
};

struct ReferenceRow {
  std::string condition;
  std::string variable;
  double mean = 0.0;
  double ci = 0.0;
};

inline std::vector<ReferenceRow> read_reference_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty reference CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "condition_key,variable,mean,ci")
    throw ParseError("reference CSV header must be 'condition_key,variable,mean,ci'");
  std::vector<ReferenceRow> out;
  long n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "reference line " + std::to_string(n);
    if (f.size() != 4) throw ParseError(where + ": expected 4 fields");
    out.push_back({f[0], f[1], parse_double(f[2], where), parse_double(f[3], where)});
  }
  return out;
}

// One report per variable present in the reference; conditions missing
// from the model summaries are an error.
inline std::vector<FitReport> fit_reports(const std::vector<ConditionSummary>& model,
                                          const std::vector<ReferenceRow>& ref) {
  std::map<std::string, const ConditionSummary*> by_key;
  for (const auto& s : model) by_key[s.condition] = &s;
  std::map<std::string, FitReport> reps;
  std::vector<std::string> order;
  for (const auto& r : ref) {
    auto it = by_key.find(r.condition);
    if (it == by_key.end())
      throw ParseError("reference condition '" + r.condition + "' not in model summaries");
    auto vit = it->second->vars.find(r.variable);
    if (vit == it->second->vars.end())
      throw ParseError("reference variable '" + r.variable + "' unknown");
    if (!reps.count(r.variable)) order.push_back(r.variable);
    FitReport& f = reps[r.variable];
    f.variable = r.variable;
    f.conditions.push_back(r.condition);
    f.model.push_back(vit->second.mean);
    f.reference.push_back(r.mean);
  }
  std::vector<FitReport> out;
  for (const auto& v : order) {
    FitReport f = reps[v];
    f.fit = stats::fit(f.model, f.reference);
    out.push_back(std::move(f));
  }
  return out;
}

// ------------------------------------------------------------ simulation

struct Condition {
  std::string key;
  double speed_kmh = 60.0;
  bool lca = false;
  int rows = 2;
  int cols = 3;
  int task_type = 1;
  int elements() const { return rows * cols; }
};

inline std::string condition_key(double speed, bool lca, int elements, int task_type) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "v%03d_lca%d_e%02d_t%d", static_cast<int>(std::lround(speed)),
                lca ? 1 : 0, elements, task_type);
  return buf;
}

inline std::vector<Condition> expand_conditions(const ScenarioConfig& s) {
  s.validate();
  std::vector<Condition> out;
  for (double v : s.speeds_kmh)
    for (bool lca : s.lca)
      for (const auto& g : s.grids)
        for (int t : s.task_types)
          out.push_back({condition_key(v, lca, g[0] * g[1], t), v, lca, g[0], g[1], t});
  return out;
}

struct SimulationAgents {
  std::shared_ptr<const DrivingAgent> driving;
  std::shared_ptr<const SearchAgent> search;
  std::shared_ptr<const SupervisorAgent> supervisor;
};

inline SimulationAgents load_agents(const std::string& driving, const std::string& search,
                                    const std::string& supervisor) {
  if (driving.empty() || search.empty() || supervisor.empty())
    throw ConfigError("simulation needs driving, search and supervisor checkpoints");
  SimulationAgents a;
  a.driving = std::make_shared<DrivingAgent>(DrivingAgent::from_checkpoint(load_checkpoint(driving)));
  a.search = std::make_shared<SearchAgent>(SearchAgent::from_checkpoint(load_checkpoint(search)));
  a.supervisor =
      std::make_shared<SupervisorAgent>(SupervisorAgent::from_checkpoint(load_checkpoint(supervisor)));
  return a;
}

struct DecisionValues {
  std::vector<double> at_glance_out;   // raw v_drive when gaze leaves the road
  std::vector<double> at_glance_back;  // raw v_drive when gaze returns
};

struct EpisodeRun {
  EpisodeMetrics metrics;
  std::vector<TraceRecord> trace;
  DecisionValues decisions;
  std::vector<std::array<double, 4>> values;  // t, v_drive, v_search, locus
};

inline std::uint64_t episode_seed(std::uint64_t base, int condition, int episode) {
  return mix_seed(base, static_cast<std::uint64_t>(condition), static_cast<std::uint64_t>(episode));
}

inline EpisodeRun run_episode(const ExperimentConfig& cfg, const SimulationAgents& agents,
                              const Condition& c, int cond_idx, int episode) {
  SupervisorConfig sup = cfg.supervisor;
  sup.tasks_per_episode = cfg.scenario.tasks_per_episode;
  SupervisorEnv env(sup, cfg.driving_env, cfg.search_env);
  env.attach(agents.driving, agents.search);
  env.set_normalizer(std::make_shared<ValueNormalizer>(*agents.supervisor->normalizer()));
  const std::uint64_t seed = episode_seed(cfg.scenario.base_seed, cond_idx, episode);
  EpisodeOverrides ov;
  ov.speed_limit_kmh = c.speed_kmh;
  ov.lca = c.lca;
  SupervisorObservation o = env.reset(seed, ov, TaskSpec{c.rows, c.cols, c.task_type});
  Rng rng(mix_seed(seed, 0x504f4c));  // "POL"
  EpisodeRun run;
  run.trace = env.reset_records();
  run.values.push_back({env.wall_time(), env.raw_drive_value(), env.raw_search_value(), 0.0});
  while (!env.done()) {
    const Locus a = agents.supervisor->act(o, env.action_mask(),
                                           !cfg.scenario.stochastic_supervisor, rng);
    const Locus before = env.locus();
    const double v_before = env.raw_drive_value();
    auto r = env.step(a);
    if (before == Locus::kDrive && r.log.glance_transition)
      run.decisions.at_glance_out.push_back(v_before);
    if (before == Locus::kSearch && a == Locus::kDrive)
      run.decisions.at_glance_back.push_back(v_before);
    run.trace.insert(run.trace.end(), r.log.records.begin(), r.log.records.end());
    run.values.push_back({env.wall_time(), env.raw_drive_value(), env.raw_search_value(),
                          env.locus() == Locus::kSearch ? 1.0 : 0.0});
    o = r.observation;
  }
  run.metrics = episode_metrics(run.trace, cfg.scenario.glance_include_transitions);
  run.metrics.condition = cond_idx;
  run.metrics.episode = episode;
  return run;
}

struct SimulationResult {
  std::vector<Condition> conditions;
  std::vector<std::vector<EpisodeMetrics>> episodes;  // [condition][episode]
  std::vector<DecisionValues> decisions;              // per condition
  std::vector<ConditionSummary> summaries;
};

inline std::string episode_trace_path(const std::string& key, int episode) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep_%05d.csv", episode);
  return "traces/" + key + "/" + buf;
}

inline void write_episodes_csv(std::ostream& os, const SimulationResult& r) {
  os << "condition,speed_kmh,lca,elements,task_type,episode,glance_sum_s,glance_count,glances,"
        "offset_sum_m,offset_count,task_sum_s,task_count,offroad_steps\n";
  for (std::size_t c = 0; c < r.conditions.size(); ++c) {
    const auto& cd = r.conditions[c];
    for (const auto& m : r.episodes[c])
      os << cd.key << ',' << fmt(cd.speed_kmh) << ',' << (cd.lca ? 1 : 0) << ','
         << cd.elements() << ',' << cd.task_type << ',' << m.episode << ','
         << fmt(m.glance_sum) << ',' << m.glance_count << ',' << m.glances << ','
         << fmt(m.offset_sum) << ',' << m.offset_count << ',' << fmt(m.task_sum) << ','
         << m.task_count << ',' << m.offroad_steps << "\n";
  }
}

// Rebuilds conditions and per-episode metrics from an episodes CSV.
inline SimulationResult read_episodes_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty episodes CSV");
  if (line.rfind("condition,speed_kmh,lca,elements,task_type,episode,", 0) != 0)
    throw ParseError("episodes CSV header mismatch");
  SimulationResult r;
  std::map<std::string, int> index;
  long n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "episodes line " + std::to_string(n);
    if (f.size() != 14) throw ParseError(where + ": expected 14 fields");
    auto it = index.find(f[0]);
    if (it == index.end()) {
      Condition c;
      c.key = f[0];
      c.speed_kmh = parse_double(f[1], where);
      c.lca = parse_long(f[2], where) != 0;
      const long e = parse_long(f[3], where);
      c.rows = 1;
      c.cols = static_cast<int>(e);
      c.task_type = static_cast<int>(parse_long(f[4], where));
      it = index.emplace(f[0], static_cast<int>(r.conditions.size())).first;
      r.conditions.push_back(c);
      r.episodes.emplace_back();
    }
    EpisodeMetrics m;
    m.condition = it->second;
    m.episode = static_cast<int>(parse_long(f[5], where));
    m.glance_sum = parse_double(f[6], where);
    m.glance_count = static_cast<int>(parse_long(f[7], where));
    m.glances = static_cast<int>(parse_long(f[8], where));
    m.offset_sum = parse_double(f[9], where);
    m.offset_count = parse_long(f[10], where);
    m.task_sum = parse_double(f[11], where);
    m.task_count = static_cast<int>(parse_long(f[12], where));
    m.offroad_steps = static_cast<int>(parse_long(f[13], where));
    r.episodes[it->second].push_back(m);
  }
  r.decisions.resize(r.conditions.size());
  for (std::size_t c = 0; c < r.conditions.size(); ++c)
    r.summaries.push_back(summarize(r.episodes[c], r.conditions[c].key));
  return r;
}

struct SimulateOptions {
  std::string output_dir;  // empty: keep results in memory only
  int workers = 1;
  bool write_traces = true;
  LogFn log;
};

// The search network's input size is fixed by the padding it was trained
// with, so the environment has to use the same padding.
inline void check_agents_match(const ExperimentConfig& cfg, const SimulationAgents& agents) {
  const SearchEnvConfig& l = agents.search->layout();
  if (l.max_rows != cfg.search_env.max_rows || l.max_cols != cfg.search_env.max_cols)
    throw ConfigError("search checkpoint was trained with a " + std::to_string(l.max_rows) + "x" +
                      std::to_string(l.max_cols) + " observation layout, config uses " +
                      std::to_string(cfg.search_env.max_rows) + "x" +
                      std::to_string(cfg.search_env.max_cols));
  for (const auto& g : cfg.scenario.grids)
    if (g[0] > l.max_rows || g[1] > l.max_cols)
      throw ConfigError("scenario grid " + std::to_string(g[0]) + "x" + std::to_string(g[1]) +
                        " exceeds the search checkpoint layout");
}

// Runs every (condition, episode) pair. Episodes are seeded from
// (base_seed, condition index, episode index), so results do not depend on
// the worker count; aggregation happens after all workers finish.
inline SimulationResult simulate(const ExperimentConfig& cfg, const SimulationAgents& agents,
                                 const SimulateOptions& opt) {
  cfg.validate();
  if (!agents.driving || !agents.search || !agents.supervisor)
    throw ConfigError("simulation needs all three agents");
  check_agents_match(cfg, agents);
  SimulationResult res;
  res.conditions = expand_conditions(cfg.scenario);
  const int nc = static_cast<int>(res.conditions.size());
  const int ne = cfg.scenario.n_episodes;
  res.episodes.assign(nc, std::vector<EpisodeMetrics>(ne));
  std::vector<std::vector<DecisionValues>> dec(nc, std::vector<DecisionValues>(ne));
  std::vector<std::vector<std::array<double, 4>>> first_values(nc);

  const fs::path out = opt.output_dir;
  if (!opt.output_dir.empty()) fs::create_directories(out);
  std::atomic<long> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&]() {
    for (;;) {
      const long job = next.fetch_add(1);
      if (job >= static_cast<long>(nc) * ne) return;
      const int c = static_cast<int>(job / ne);
      const int e = static_cast<int>(job % ne);
      try {
        EpisodeRun run = run_episode(cfg, agents, res.conditions[c], c, e);
        if (!opt.output_dir.empty() && opt.write_traces) {
          const fs::path p = out / episode_trace_path(res.conditions[c].key, e);
          fs::create_directories(p.parent_path());
          std::ofstream f(p);
          if (!f) throw IoError("cannot write '" + p.string() + "'");
          write_trace_csv(f, run.trace);
        }
        res.episodes[c][e] = run.metrics;
        dec[c][e] = std::move(run.decisions);
        if (e == 0) first_values[c] = std::move(run.values);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        next.store(static_cast<long>(nc) * ne);
        return;
      }
    }
  };
  const int workers = std::max(1, opt.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);

  res.decisions.resize(nc);
  for (int c = 0; c < nc; ++c) {
    for (auto& d : dec[c]) {
      res.decisions[c].at_glance_out.insert(res.decisions[c].at_glance_out.end(),
                                            d.at_glance_out.begin(), d.at_glance_out.end());
      res.decisions[c].at_glance_back.insert(res.decisions[c].at_glance_back.end(),
                                             d.at_glance_back.begin(), d.at_glance_back.end());
    }
    res.summaries.push_back(summarize(res.episodes[c], res.conditions[c].key));
    if (opt.log) opt.log("condition " + res.conditions[c].key + " done");
  }

  if (!opt.output_dir.empty()) {
    std::ofstream s(out / "summary.csv");
    write_summary_csv(s, res.summaries);
    std::ofstream e(out / "episodes.csv");
    write_episodes_csv(e, res);
    std::ofstream v(out / "value_traces.csv");
    v << "condition,t_s,v_drive,v_search,locus\n";
    for (int c = 0; c < nc; ++c)
      for (const auto& row : first_values[c])
        v << res.conditions[c].key << ',' << fmt(row[0]) << ',' << fmt(row[1]) << ','
          << fmt(row[2]) << ',' << (row[3] > 0.5 ? "SEARCH" : "DRIVE") << "\n";
    if (!s || !e || !v) throw IoError("failed writing simulation outputs");
  }
  return res;
}

// Per-episode values of one variable, for significance tests.
inline std::vector<double> per_episode(const std::vector<EpisodeMetrics>& eps,
                                       const std::string& var) {
  std::vector<double> out;
  for (const auto& m : eps) {
    const double x = pooled({m}, var);
    if (!std::isnan(x)) out.push_back(x);
  }
  return out;
}

// Index of the speed bin for a speed, or -1 outside all bins.
inline int speed_bin(double kmh, const std::vector<double>& edges) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (kmh >= edges[i] && kmh < edges[i + 1]) return static_cast<int>(i);
  return -1;
}

struct BinCell {
  int bin = 0;
  bool lca = false;
  std::vector<EpisodeMetrics> episodes;
};

inline std::vector<BinCell> bin_by_speed_and_lca(const SimulationResult& r,
                                                 const std::vector<double>& edges) {
  std::vector<BinCell> cells;
  for (int b = 0; b + 1 < static_cast<int>(edges.size()); ++b)
    for (bool lca : {false, true}) cells.push_back({b, lca, {}});
  for (std::size_t c = 0; c < r.conditions.size(); ++c) {
    const int b = speed_bin(r.conditions[c].speed_kmh, edges);
    if (b < 0) continue;
    auto& cell = cells[2 * b + (r.conditions[c].lca ? 1 : 0)];
    cell.episodes.insert(cell.episodes.end(), r.episodes[c].begin(), r.episodes[c].end());
  }
  return cells;
}

// ------------------------------------------------------------ value probe

// Attended driving, then a scripted stretch without vision, then vision
// again. Used to look at how the driving value reacts to inattention.
struct InattentionSchedule {
  double attended_before_s = 2.0;
  double blind_s = 2.0;
  double attended_after_s = 2.0;
};

struct ValueTrace {
  std::vector<double> t;
  std::vector<double> value;
  std::vector<bool> attended;
  int blind_begin = 0;  // first index without vision
  int blind_end = 0;    // first index with vision again

  // Least-squares slope of the value over the blind stretch, per second.
  double blind_slope() const {
    std::vector<double> x(t.begin() + blind_begin, t.begin() + blind_end + 1);
    std::vector<double> y(value.begin() + blind_begin, value.begin() + blind_end + 1);
    return stats::ols_slope(x, y);
  }
  double mean() const { return stats::mean(value); }
};

inline ValueTrace inattention_value_trace(const DrivingEnvConfig& cfg, const DrivingAgent& agent,
                                          double speed_kmh, bool lca, std::uint64_t seed,
                                          const InattentionSchedule& s = {}) {
  DrivingEnv env(cfg);
  EpisodeOverrides ov;
  ov.speed_limit_kmh = speed_kmh;
  ov.lca = lca;
  DrivingObservation o = env.reset(seed, ov);
  Rng rng(mix_seed(seed, 0x56414c));  // "VAL"
  const int n_before = static_cast<int>(std::lround(s.attended_before_s / cfg.dt));
  const int n_blind = static_cast<int>(std::lround(s.blind_s / cfg.dt));
  const int n_after = static_cast<int>(std::lround(s.attended_after_s / cfg.dt));
  ValueTrace tr;
  tr.blind_begin = n_before;
  tr.blind_end = n_before + n_blind;
  tr.t.push_back(0.0);
  tr.value.push_back(agent.value(o));
  tr.attended.push_back(true);
  for (int k = 0; k < n_before + n_blind + n_after && !env.done(); ++k) {
    const bool attended = k < n_before || k >= n_before + n_blind;
    o = env.step(agent.act(o, rng), attended).observation;
    tr.t.push_back((k + 1) * cfg.dt);
    tr.value.push_back(agent.value(o));
    tr.attended.push_back(attended);
  }
  if (static_cast<int>(tr.t.size()) <= tr.blind_end)
    throw DegenerateInput("episode ended before the blind stretch was over");
  return tr;
}

}  // namespace supdrive

#endif  // SUPDRIVE_EXPERIMENTS_HPP_
