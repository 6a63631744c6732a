#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "supdrive/config.hpp"
#include "supdrive/experiments.hpp"
#include "supdrive/report.hpp"

using namespace supdrive;
namespace fs = std::filesystem;

namespace {

TraceRecord row(double t, SubstepKind k, int glance, int task = 1, double offset = 0.0) {
  TraceRecord r;
  r.t = t;
  r.kind = k;
  r.glance_id = glance;
  r.task_id = task;
  r.lateral_offset = offset;
  return r;
}

// One glance: two transition steps, three 0.25 s fixations each covered by
// 0.1 + 0.1 + 0.05 s sub-steps, two return steps, then one attended step.
std::vector<TraceRecord> one_glance_trace(double t0 = 0.0, int id = 1) {
  std::vector<TraceRecord> rows;
  double t = t0;
  auto add = [&](double dt, SubstepKind k, int g) { rows.push_back(row(t += dt, k, g)); };
  add(0.1, SubstepKind::kDrive, 0);
  add(0.1, SubstepKind::kToSearch, id);
  add(0.1, SubstepKind::kToSearch, id);
  for (int f = 0; f < 3; ++f) {
    add(0.1, SubstepKind::kSearch, id);
    add(0.1, SubstepKind::kSearch, id);
    add(0.05, SubstepKind::kSearch, id);
  }
  add(0.1, SubstepKind::kToDrive, id);
  add(0.1, SubstepKind::kToDrive, id);
  add(0.1, SubstepKind::kDrive, 0);
  return rows;
}

EpisodeMetrics metrics_with(int episode, double glance_sum, int glance_count, int glances,
                            double task_sum, int task_count) {
  EpisodeMetrics m;
  m.episode = episode;
  m.glance_sum = glance_sum;
  m.glance_count = glance_count;
  m.glances = glances;
  m.task_sum = task_sum;
  m.task_count = task_count;
  m.offset_sum = 0.1 * (episode + 1);
  m.offset_count = 1;
  return m;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("supdrive_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SimulationAgents untrained_agents() {
  SacConfig sc;
  sc.hidden = {16, 16};
  PpoConfig pc;
  pc.hidden = {16, 16};
  const SearchEnvConfig layout;
  SimulationAgents a;
  a.driving = std::make_shared<DrivingAgent>(Sac(kDrivingFeatureDim, 2, sc, 1));
  a.search = std::make_shared<SearchAgent>(
      Ppo(layout.observation_dim(), layout.max_elements(), pc, 2), layout);
  a.supervisor = std::make_shared<SupervisorAgent>(Ppo(kSupervisorObsDim, 2, pc, 3),
                                                   std::make_shared<ValueNormalizer>());
  return a;
}

// Small two-condition scenario over short episodes.
ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.driving_env.horizon_s = 15.0;
  c.driving_env.lca.enabled = true;
  c.scenario.speeds_kmh = {40.0, 80.0};
  c.scenario.lca = {true};
  c.scenario.grids = {{2, 2}};
  c.scenario.n_episodes = 3;
  c.scenario.tasks_per_episode = 2;
  return c;
}

// Writes untrained checkpoints and a matching config for CLI runs.
fs::path cli_fixture() {
  const fs::path d = temp_dir("cli");
  const SimulationAgents a = untrained_agents();
  save_checkpoint(a.driving->to_checkpoint({}), d / "driving.ckpt");
  save_checkpoint(a.search->to_checkpoint({}), d / "search.ckpt");
  save_checkpoint(a.supervisor->to_checkpoint({}), d / "supervisor.ckpt");
  nlohmann::json j = small_experiment();
  j["scenario"]["checkpoints"] = {{"driving", (d / "driving.ckpt").string()},
                                  {"search", (d / "search.ckpt").string()},
                                  {"supervisor", (d / "supervisor.ckpt").string()}};
  j["scenario"]["n_episodes"] = 2;
  std::ofstream(d / "exp.json") << j.dump(1);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SUPDRIVE_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST(SegmentGlances, AllDrivingTraceHasNoGlances) {
  std::vector<TraceRecord> rows;
  for (int i = 1; i <= 50; ++i) rows.push_back(row(0.1 * i, SubstepKind::kDrive, 0));
  EXPECT_TRUE(segment_glances(rows).empty());
}

TEST(SegmentGlances, ThreeQuarterSecondSearchGivesOnePointOneFive) {
  const auto g = segment_glances(one_glance_trace());
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0].duration, 0.2 + 0.75 + 0.2, 1e-12);
  EXPECT_NEAR(g[0].start, 0.1, 1e-12);
  EXPECT_TRUE(g[0].complete);
  const auto dwell = segment_glances(one_glance_trace(), false);
  EXPECT_NEAR(dwell[0].duration, 0.75, 1e-12);
}

TEST(SegmentGlances, CountEqualsDriveToSearchTransitions) {
  std::vector<TraceRecord> rows;
  for (int k = 0; k < 4; ++k) {
    auto g = one_glance_trace(rows.empty() ? 0.0 : rows.back().t, k + 1);
    rows.insert(rows.end(), g.begin(), g.end());
  }
  int transitions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    transitions += rows[i - 1].glance_id == 0 && rows[i].glance_id > 0;
  EXPECT_EQ(static_cast<int>(segment_glances(rows).size()), transitions);
  EXPECT_EQ(transitions, 4);
}

TEST(SegmentGlances, ReturnCutByHorizonIsIncomplete) {
  auto rows = one_glance_trace();
  rows.resize(rows.size() - 2);
  ASSERT_EQ(rows.back().kind, SubstepKind::kToDrive);
  EXPECT_FALSE(segment_glances(rows)[0].complete);
}

TEST(SegmentGlances, TraceCutMidGlanceIsIncomplete) {
  auto rows = one_glance_trace();
  rows.resize(6);
  const auto g = segment_glances(rows);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_FALSE(g[0].complete);
  EXPECT_EQ(episode_metrics(rows, true).glance_count, 0);
  EXPECT_EQ(episode_metrics(rows, true).glances, 1);
}

TEST(SegmentGlances, MalformedTracesAreParseErrors) {
  auto rows = one_glance_trace();
  rows[3].t = rows[2].t;
  EXPECT_THROW(segment_glances(rows), ParseError);
  rows = one_glance_trace();
  for (auto& r : rows)
    if (r.glance_id) r.glance_id = 2;
  EXPECT_THROW(segment_glances(rows), ParseError);
}

// The supervisor's own trace for the same sequence of decisions.
TEST(SegmentGlances, SupervisorTraceMatchesDefinition) {
  struct Straight : DrivingController {
    ControlInput act(const DrivingObservation&, Rng&) const override { return {0.0, 0.0}; }
    double value(const DrivingObservation&) const override { return 0.0; }
  };
  struct Centre : SearchController {
    int act(const std::vector<double>&, const std::vector<bool>&, Rng&) const override { return 4; }
    double value(const std::vector<double>&) const override { return 0.0; }
  };
  SearchEnvConfig sc;
  sc.emma.frequency = 1.0;
  sc.emma.saccade_base = 0.25;
  SupervisorEnv env(SupervisorConfig{}, DrivingEnvConfig{}, sc);
  env.attach(std::make_shared<Straight>(), std::make_shared<Centre>());
  env.reset(1, {}, TaskSpec{3, 3, 1});
  auto rows = env.reset_records();
  for (Locus l : {Locus::kSearch, Locus::kSearch, Locus::kSearch, Locus::kDrive}) {
    const auto r = env.step(l);
    rows.insert(rows.end(), r.log.records.begin(), r.log.records.end());
  }
  const auto g = segment_glances(rows);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0].duration, 1.15, 1e-12);
}

TEST(Summaries, SingleGlanceMean) {
  const auto m = episode_metrics(one_glance_trace(), true);
  const auto s = summarize({m}, "c");
  EXPECT_NEAR(s.vars.at("glance_duration_s").mean, 1.15, 1e-12);
  EXPECT_EQ(s.vars.at("glance_duration_s").ci95, 0.0);
}

TEST(Summaries, LateralOffsetIsMeanAbsolute) {
  std::vector<TraceRecord> rows;
  for (int i = 1; i <= 10; ++i)
    rows.push_back(row(0.1 * i, SubstepKind::kDrive, 0, 0, i % 2 ? 0.2 : -0.2));
  const auto s = summarize({episode_metrics(rows, true)}, "c");
  EXPECT_NEAR(s.vars.at("lateral_offset_m").mean, 0.2, 1e-15);
}

TEST(Summaries, GlancesPerTask) {
  const auto s = summarize({metrics_with(0, 4.0, 4, 4, 10.0, 2)}, "c");
  EXPECT_EQ(s.vars.at("glances_per_task").mean, 2.0);
  EXPECT_EQ(s.vars.at("task_duration_s").mean, 5.0);
}

TEST(Summaries, NoCompletedTasksGiveMissingMarkers) {
  const auto s = summarize({metrics_with(0, 2.0, 2, 2, 0.0, 0)}, "c");
  EXPECT_TRUE(std::isnan(s.vars.at("task_duration_s").mean));
  EXPECT_TRUE(std::isnan(s.vars.at("glances_per_task").mean));
  std::ostringstream os;
  write_summary_csv(os, {s});
  EXPECT_NE(os.str().find(",NA,NA,"), std::string::npos);
  EXPECT_THROW(summarize({}, "c"), DegenerateInput);
}

TEST(Summaries, PermutationInvariantOverEpisodeOrder) {
  std::vector<EpisodeMetrics> eps;
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int i = 0; i < 40; ++i) eps.push_back(metrics_with(i, u(gen), 2, 3, u(gen) * 4, 1));
  const auto a = summarize(eps, "c");
  for (int k = 0; k < 5; ++k) {
    std::shuffle(eps.begin(), eps.end(), gen);
    EXPECT_EQ(summarize(eps, "c"), a);
  }
  for (const auto& [name, v] : a.vars) EXPECT_GE(v.ci95, 0.0) << name;
}

TEST(FitStats, IdenticalVectors) {
  const auto f = stats::fit({1, 2, 3, 5}, {1, 2, 3, 5});
  EXPECT_EQ(f.r2, 1.0);
  EXPECT_EQ(f.rmse, 0.0);
}

TEST(FitStats, ConstantAtReferenceMeanGivesZero) {
  const auto f = stats::fit({2, 2, 2}, {1, 2, 3});
  EXPECT_NEAR(f.r2, 0.0, 1e-15);
}

// SS_res = 1, SS_tot = 2/3.
TEST(FitStats, HandEvaluatedExample) {
  const auto f = stats::fit({1.0, 2.0, 3.0}, {1.0, 2.0, 2.0});
  EXPECT_NEAR(f.r2, -0.5, 1e-12);
  EXPECT_NEAR(f.rmse, std::sqrt(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(f.rmse, 0.57735, 1e-5);
}

TEST(FitStats, ZeroReferenceVarianceReportedUndefined) {
  const auto f = stats::fit({1, 2, 3}, {2, 2, 2});
  EXPECT_FALSE(f.r2_defined);
  EXPECT_TRUE(std::isnan(f.r2));
  EXPECT_NEAR(f.rmse, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_THROW(stats::fit({1}, {1}), DegenerateInput);
  EXPECT_THROW(stats::fit({1, 2}, {1, 2, 3}), DegenerateInput);
}

TEST(FitStats, AgreesWithIndependentImplementation) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(-5, 5);
  std::uniform_int_distribution<int> len(2, 30);
  for (int i = 0; i < 100; ++i) {
    const int n = len(gen);
    std::vector<double> m(n), r(n);
    for (int k = 0; k < n; ++k) {
      m[k] = u(gen);
      r[k] = u(gen);
    }
    const auto got = stats::fit(m, r);
    const auto want = oracle::reference_fit(m, r);
    ASSERT_NEAR(got.r2, want.r2, 1e-12);
    ASSERT_NEAR(got.rmse, want.rmse, 1e-12);
    ASSERT_LE(got.r2, 1.0);
    ASSERT_GE(got.rmse, 0.0);
  }
}

TEST(FitReports, MatchReferenceRowsByConditionAndVariable) {
  std::vector<ConditionSummary> model(3);
  const double g[] = {1.0, 2.0, 3.0};
  for (int i = 0; i < 3; ++i) {
    model[i].condition = "k" + std::to_string(i);
    model[i].vars["glance_duration_s"] = {g[i], 0.1, 5};
  }
  std::istringstream ref(
      "condition_key,variable,mean,ci\nk0,glance_duration_s,1,0.1\nk1,glance_duration_s,2,0.1\n"
      "k2,glance_duration_s,2,0.1\n");
  const auto reps = fit_reports(model, read_reference_csv(ref));
  ASSERT_EQ(reps.size(), 1u);
  EXPECT_NEAR(reps[0].fit.r2, -0.5, 1e-12);
  std::istringstream bad_key("condition_key,variable,mean,ci\nzz,glance_duration_s,1,0\n");
  EXPECT_THROW(fit_reports(model, read_reference_csv(bad_key)), ParseError);
  std::istringstream bad_header("cond,var,mean\n");
  EXPECT_THROW(read_reference_csv(bad_header), ParseError);
}

TEST(CsvRoundTrip, TraceRecords) {
  auto rows = one_glance_trace();
  rows[4].true_pos = {123.456789012345, -0.1};
  rows[4].sigma_pos = 1.0 / 3.0;
  rows[5].r_search = -0.0838;
  std::stringstream ss;
  write_trace_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')),
            "t_s,locus,true_x_m,true_y_m,bel_x_m,bel_y_m,sigma_pos_m,v_mps,delta_rad,r_drive,"
            "r_search,lat_offset_m,glance_id,task_id");
  const auto back = read_trace_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].t, rows[i].t);
    EXPECT_EQ(back[i].kind, rows[i].kind);
    EXPECT_EQ(back[i].true_pos, rows[i].true_pos);
    EXPECT_EQ(back[i].sigma_pos, rows[i].sigma_pos);
    EXPECT_EQ(back[i].r_search, rows[i].r_search);
    EXPECT_EQ(back[i].glance_id, rows[i].glance_id);
  }
  std::istringstream bad("t_s,locus\n0.1,DRIVE\n");
  EXPECT_THROW(read_trace_csv(bad), ParseError);
}

TEST(CsvRoundTrip, SummariesReparseIdentically) {
  std::vector<EpisodeMetrics> eps;
  for (int i = 0; i < 12; ++i) eps.push_back(metrics_with(i, 1.1 * i + 0.3, 2, 3, 7.0 / 3 * i, 1));
  const std::vector<ConditionSummary> sums{summarize(eps, "a"),
                                           summarize({metrics_with(0, 1, 1, 1, 0, 0)}, "b")};
  std::stringstream ss;
  write_summary_csv(ss, sums);
  EXPECT_EQ(read_summary_csv(ss), sums);
}

TEST(Conditions, ExperimentOneHasEightKeys) {
  const ExperimentConfig c = load_experiment_config(SUPDRIVE_SOURCE_DIR "/configs/exp1.json");
  const auto conds = expand_conditions(c.scenario);
  ASSERT_EQ(conds.size(), 8u);
  std::set<std::string> keys;
  for (const auto& k : conds) keys.insert(k.key);
  EXPECT_EQ(keys.size(), 8u);
  EXPECT_TRUE(keys.count(condition_key(120, false, 9, 0)));
}

TEST(Conditions, ExperimentTwoSweepsLcaOnAndOff) {
  const ExperimentConfig c = load_experiment_config(SUPDRIVE_SOURCE_DIR "/configs/exp2.json");
  const auto conds = expand_conditions(c.scenario);
  std::set<std::pair<double, bool>> cells;
  for (const auto& k : conds) cells.insert({k.speed_kmh, k.lca});
  EXPECT_EQ(cells.size(), 2 * c.scenario.speeds_kmh.size());
  std::set<int> bins;
  for (double v : c.scenario.speeds_kmh) bins.insert(speed_bin(v, c.scenario.speed_bin_edges));
  EXPECT_EQ(bins.size(), 3u);
}

TEST(Conditions, InvalidScenarioRejected) {
  ScenarioConfig s;
  s.n_episodes = 0;
  EXPECT_THROW(expand_conditions(s), ConfigError);
  s = {};
  s.speeds_kmh.clear();
  EXPECT_THROW(expand_conditions(s), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"bogus": {}})"), ConfigError);
}

TEST(Simulation, SeededRunsAreIdenticalAndWorkerIndependent) {
  const ExperimentConfig cfg = small_experiment();
  const SimulationAgents a = untrained_agents();
  const fs::path d1 = temp_dir("sim1"), d2 = temp_dir("sim2"), d3 = temp_dir("sim3");
  const auto r1 = simulate(cfg, a, {d1.string(), 1, true, {}});
  simulate(cfg, a, {d2.string(), 1, true, {}});
  const auto r3 = simulate(cfg, a, {d3.string(), 3, true, {}});
  for (const char* f : {"summary.csv", "episodes.csv", "value_traces.csv",
                        "traces/v040_lca1_e04_t1/ep_00002.csv"}) {
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    EXPECT_EQ(slurp(d1 / f), slurp(d3 / f)) << f;
  }
  EXPECT_EQ(r1.summaries, r3.summaries);
  ASSERT_EQ(r1.summaries.size(), 2u);
}

// Every complete glance in a real trace covers two transitions each way
// plus at least one fixation.
TEST(Simulation, GlanceLowerBoundOnEveryTrace) {
  ExperimentConfig cfg = small_experiment();
  cfg.scenario.grids = {{2, 3}, {3, 3}};
  cfg.scenario.n_episodes = 4;
  const fs::path d = temp_dir("bound");
  simulate(cfg, untrained_agents(), {d.string(), 1, true, {}});
  const double min_fix = emma_duration(0.0, cfg.search_env.emma);
  int checked = 0;
  for (const auto& e : fs::recursive_directory_iterator(d / "traces")) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path());
    for (const auto& g : segment_glances(read_trace_csv(in))) {
      if (!g.complete) continue;
      ASSERT_GE(g.duration, 0.4 + min_fix - 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Simulation, EpisodesCsvRebuildsSummaries) {
  const fs::path d = temp_dir("episodes");
  const auto r = simulate(small_experiment(), untrained_agents(), {d.string(), 1, false, {}});
  std::ifstream in(d / "episodes.csv");
  EXPECT_EQ(read_episodes_csv(in).summaries, r.summaries);
}

TEST(Simulation, CheckpointLayoutMismatchIsConfigError) {
  ExperimentConfig cfg = small_experiment();
  cfg.search_env.max_rows = 5;
  EXPECT_THROW(simulate(cfg, untrained_agents(), {}), ConfigError);
  cfg = small_experiment();
  cfg.scenario.grids = {{5, 2}};
  EXPECT_THROW(simulate(cfg, untrained_agents(), {}), ConfigError);
  SimulationAgents missing = untrained_agents();
  missing.supervisor.reset();
  EXPECT_THROW(simulate(small_experiment(), missing, {}), ConfigError);
}

TEST(Report, SpeedByLcaTableAndPlots) {
  ExperimentConfig cfg = small_experiment();
  cfg.scenario.speeds_kmh = {40, 90, 130};
  cfg.scenario.lca = {false, true};
  cfg.scenario.n_episodes = 2;
  const fs::path d = temp_dir("report");
  simulate(cfg, untrained_agents(), {(d / "sim").string(), 1, true, {}});
  const auto files = write_report(d / "sim", d / "rep", cfg.scenario.speed_bin_edges);
  EXPECT_FALSE(files.empty());
  for (const auto& f : files) EXPECT_GT(fs::file_size(d / "rep" / f), 0u) << f;
  std::ifstream in(d / "sim" / "episodes.csv");
  const auto table = speed_lca_table(read_episodes_csv(in), cfg.scenario.speed_bin_edges);
  EXPECT_EQ(table.size(), 6u);
}

TEST(Cli, UsageAndMissingInputsFail) {
  EXPECT_NE(run_cli(""), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_NE(run_cli("simulate --bogus-flag"), 0);
  EXPECT_NE(run_cli("simulate --config /nonexistent/exp.json"), 0);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, SimulateTwiceIsByteIdentical) {
  const fs::path d = cli_fixture();
  const std::string base = "simulate --config " + (d / "exp.json").string() + " --deterministic";
  ASSERT_EQ(run_cli(base + " --seed 7 --out " + (d / "a").string()), 0);
  ASSERT_EQ(run_cli(base + " --seed 7 --out " + (d / "b").string()), 0);
  for (const char* f : {"summary.csv", "episodes.csv", "value_traces.csv"})
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;
  ASSERT_EQ(run_cli(base + " --seed 8 --out " + (d / "c").string()), 0);
  EXPECT_NE(slurp(d / "a" / "episodes.csv"), slurp(d / "c" / "episodes.csv"));
}

TEST(Cli, EvaluateAndReportSucceed) {
  const fs::path d = cli_fixture();
  ASSERT_EQ(run_cli("simulate --deterministic --config " + (d / "exp.json").string() + " --out " +
                    (d / "sim").string()),
            0);
  std::ifstream sin(d / "sim" / "summary.csv");
  std::ofstream ref(d / "ref.csv");
  ref << "condition_key,variable,mean,ci\n";
  int k = 0;
  for (const auto& s : read_summary_csv(sin))
    ref << s.condition << ",lateral_offset_m," << 0.1 * ++k << ",0.01\n";
  ref.close();
  ASSERT_EQ(run_cli("evaluate --summary " + (d / "sim" / "summary.csv").string() +
                    " --reference " + (d / "ref.csv").string() + " --out " +
                    (d / "fit.csv").string()),
            0);
  EXPECT_EQ(slurp(d / "fit.csv").rfind("variable,r2,rmse,n_conditions\nlateral_offset_m,", 0), 0u);
  EXPECT_EQ(run_cli("report --input " + (d / "sim").string() + " --out " + (d / "rep").string()),
            0);
  EXPECT_TRUE(fs::exists(d / "rep" / "summary.csv"));
  std::ofstream(d / "bad.csv") << "nope\n";
  EXPECT_EQ(run_cli("evaluate --summary " + (d / "sim" / "summary.csv").string() +
                    " --reference " + (d / "bad.csv").string()),
            static_cast<int>(ErrorKind::kParse));
}

TEST(Cli, CorruptCheckpointGivesCheckpointExitCode) {
  const fs::path d = cli_fixture();
  std::ofstream(d / "driving.ckpt", std::ios::trunc) << "garbage";
  EXPECT_EQ(run_cli("simulate --config " + (d / "exp.json").string() + " --out " +
                    (d / "x").string()),
            static_cast<int>(ErrorKind::kCheckpoint));
}
