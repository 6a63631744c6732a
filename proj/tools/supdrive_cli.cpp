// supdrive command-line interface: training, simulation, fit evaluation and
// reporting.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "supdrive/checkpoint.hpp"
#include "supdrive/config.hpp"
#include "supdrive/experiments.hpp"
#include "supdrive/report.hpp"
#include "supdrive/training.hpp"

namespace fs = std::filesystem;
using namespace supdrive;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SUPDRIVE_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError("SUPDRIVE_SEED must be an unsigned integer");
  return v;
}

// --seed beats SUPDRIVE_SEED, which beats the config file.
std::uint64_t resolve_seed(std::uint64_t from_config, const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return from_config;
}

int finish_training(const TrainResult& r, const std::string& out) {
  save_checkpoint(r.checkpoint, out);
  std::cout << "wrote " << out << " (+ " << sidecar_path(out).string() << ")\n";
  if (!r.converged) {
    std::cerr << "training-failure report: " << r.diagnostics << "\n";
    return static_cast<int>(ErrorKind::kTraining);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervisory attention model of driving with in-car visual search"};
  app.require_subcommand(1);

  std::string config_path, out, driving_ckpt, search_ckpt, supervisor_ckpt;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<int> episodes, workers;
  bool deterministic = false, no_traces = false;
  std::string summary_path, reference_path, input_dir;

  auto* td = app.add_subcommand("train-driver", "train the driving agent");
  td->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  td->add_option("--out", out, "checkpoint path")->required();
  td->add_option("--seed", seed, "training seed");
  td->add_option("--steps", steps, "environment steps");

  auto* ts = app.add_subcommand("train-search", "train the visual search agent");
  ts->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  ts->add_option("--out", out)->required();
  ts->add_option("--seed", seed);
  ts->add_option("--steps", steps);

  auto* tv = app.add_subcommand("train-supervisor", "train the supervisor over frozen subtask agents");
  tv->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  tv->add_option("--driving", driving_ckpt)->required()->check(CLI::ExistingFile);
  tv->add_option("--search", search_ckpt)->required()->check(CLI::ExistingFile);
  tv->add_option("--out", out)->required();
  tv->add_option("--seed", seed);
  tv->add_option("--steps", steps);

  auto* sim = app.add_subcommand("simulate", "run the scenario and write traces and summaries");
  sim->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  sim->add_option("--driving", driving_ckpt, "overrides scenario.checkpoints.driving");
  sim->add_option("--search", search_ckpt, "overrides scenario.checkpoints.search");
  sim->add_option("--supervisor", supervisor_ckpt, "overrides scenario.checkpoints.supervisor");
  sim->add_option("--out", out, "output directory (default scenario.output_dir)");
  sim->add_option("--seed", seed, "base seed");
  sim->add_option("--episodes", episodes, "episodes per condition");
  sim->add_option("--workers", workers, "worker threads");
  sim->add_flag("--deterministic", deterministic, "single-threaded, reproducible mode");
  sim->add_flag("--no-traces", no_traces, "skip per-episode trace files");

  auto* ev = app.add_subcommand("evaluate", "fit model summaries against reference means");
  ev->add_option("--summary", summary_path, "summary.csv from simulate/report")->required()->check(CLI::ExistingFile);
  ev->add_option("--reference", reference_path, "condition_key,variable,mean,ci")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "fit report CSV (default stdout)");

  auto* rp = app.add_subcommand("report", "summary CSV and plots from a simulate directory");
  rp->add_option("--input", input_dir)->required()->check(CLI::ExistingDirectory);
  rp->add_option("--out", out)->required();
  rp->add_option("--config", config_path, "config supplying speed bin edges")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*td) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      auto& t = cfg.train.driving;
      t.seed = resolve_seed(t.seed, seed);
      if (steps) t.total_steps = *steps;
      return finish_training(train_driving(t, cfg.driving_env, log_line), out);
    }
    if (*ts) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      auto& t = cfg.train.search;
      t.seed = resolve_seed(t.seed, seed);
      if (steps) t.total_steps = *steps;
      return finish_training(train_search(t, cfg.search_env, log_line), out);
    }
    if (*tv) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      auto& t = cfg.train.supervisor;
      t.seed = resolve_seed(t.seed, seed);
      if (steps) t.total_steps = *steps;
      const Checkpoint d = load_checkpoint(driving_ckpt);
      const Checkpoint s = load_checkpoint(search_ckpt);
      return finish_training(
          train_supervisor(t, cfg.supervisor, cfg.driving_env, cfg.search_env, d, s, log_line),
          out);
    }
    if (*sim) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      auto& sc = cfg.scenario;
      sc.base_seed = resolve_seed(sc.base_seed, seed);
      if (episodes) sc.n_episodes = *episodes;
      if (workers) sc.workers = *workers;
      if (!driving_ckpt.empty()) sc.driving_checkpoint = driving_ckpt;
      if (!search_ckpt.empty()) sc.search_checkpoint = search_ckpt;
      if (!supervisor_ckpt.empty()) sc.supervisor_checkpoint = supervisor_ckpt;
      cfg.validate();
      const SimulationAgents agents =
          load_agents(sc.driving_checkpoint, sc.search_checkpoint, sc.supervisor_checkpoint);
      SimulateOptions opt;
      opt.output_dir = out.empty() ? sc.output_dir : out;
      opt.workers = deterministic ? 1 : sc.workers;
      opt.write_traces = sc.write_traces && !no_traces;
      opt.log = log_line;
      const SimulationResult r = simulate(cfg, agents, opt);
      write_summary_csv(std::cout, r.summaries);
      return 0;
    }
    if (*ev) {
      std::ifstream s(summary_path), rf(reference_path);
      if (!s || !rf) throw IoError("cannot open summary or reference CSV");
      const auto reps = fit_reports(read_summary_csv(s), read_reference_csv(rf));
      std::ofstream file;
      if (!out.empty()) {
        file.open(out);
        if (!file) throw IoError("cannot write '" + out + "'");
      }
      std::ostream& os = out.empty() ? std::cout : file;
      os << "variable,r2,rmse,n_conditions\n";
      for (const auto& r : reps)
        os << r.variable << ',' << (r.fit.r2_defined ? fmt(r.fit.r2) : "undefined") << ','
           << fmt(r.fit.rmse) << ',' << r.conditions.size() << "\n";
      for (const auto& r : reps)
        if (!r.fit.r2_defined)
          std::cerr << "note: R^2 undefined for " << r.variable
                    << " (reference means have zero variance)\n";
      return 0;
    }
    if (*rp) {
      std::vector<double> edges = ScenarioConfig{}.speed_bin_edges;
      if (!config_path.empty()) edges = load_experiment_config(config_path).scenario.speed_bin_edges;
      for (const auto& f : write_report(input_dir, out, edges)) std::cout << fs::path(out) / f << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kIo);
  }
  return 0;
}
