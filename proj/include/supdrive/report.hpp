#ifndef SUPDRIVE_REPORT_HPP_
#define SUPDRIVE_REPORT_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "supdrive/experiments.hpp"
#include "supdrive/plot.hpp"

namespace supdrive {

struct BinTableRow {
  int bin = 0;
  double lo_kmh = 0, hi_kmh = 0;
  bool lca = false;
  VariableSummary glance;
  VariableSummary task;
  long episodes = 0;
};

inline std::vector<BinTableRow> speed_lca_table(const SimulationResult& r,
                                                const std::vector<double>& edges) {
  std::vector<BinTableRow> out;
  for (const auto& cell : bin_by_speed_and_lca(r, edges)) {
    if (cell.episodes.empty()) continue;
    const auto s = summarize(cell.episodes, "bin" + std::to_string(cell.bin) +
                                                (cell.lca ? "_lca1" : "_lca0"));
    out.push_back({cell.bin, edges[cell.bin], edges[cell.bin + 1], cell.lca,
                   s.vars.at("glance_duration_s"), s.vars.at("task_duration_s"),
                   static_cast<long>(cell.episodes.size())});
  }
  return out;
}

inline void write_speed_lca_table(std::ostream& os, const std::vector<BinTableRow>& rows) {
  os << "speed_bin,lo_kmh,hi_kmh,lca,glance_duration_s,glance_ci95,task_duration_s,task_ci95,"
        "episodes\n";
  for (const auto& r : rows)
    os << r.bin << ',' << fmt(r.lo_kmh) << ',' << fmt(r.hi_kmh) << ',' << (r.lca ? 1 : 0) << ','
       << fmt(r.glance.mean) << ',' << fmt(r.glance.ci95) << ',' << fmt(r.task.mean) << ','
       << fmt(r.task.ci95) << ',' << r.episodes << "\n";
}

// Summary CSV, per-variable bar charts, glance-duration histogram (from
// traces when present), value traces and, when both LCA arms exist, the
// speed-bin x LCA table.
inline std::vector<std::string> write_report(const fs::path& sim_dir, const fs::path& out_dir,
                                             const std::vector<double>& bin_edges) {
  std::ifstream eps_in(sim_dir / "episodes.csv");
  if (!eps_in) throw IoError("missing '" + (sim_dir / "episodes.csv").string() + "'");
  const SimulationResult r = read_episodes_csv(eps_in);
  fs::create_directories(out_dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& body) {
    plot::save(out_dir / name, body);
    files.push_back(name);
  };
  {
    std::ofstream s(out_dir / "summary.csv");
    write_summary_csv(s, r.summaries);
    files.push_back("summary.csv");
  }
  for (const auto& var : summary_variables()) {
    std::vector<std::string> labels;
    std::vector<double> vals, err;
    for (const auto& s : r.summaries) {
      labels.push_back(s.condition);
      vals.push_back(s.vars.at(var).mean);
      err.push_back(s.vars.at(var).ci95);
    }
    emit("bars_" + var + ".svg", plot::bar_chart(var + " by condition", var, labels, vals, err));
  }
  std::vector<double> glances;
  if (fs::exists(sim_dir / "traces")) {
    for (const auto& c : r.conditions) {
      const fs::path d = sim_dir / "traces" / c.key;
      if (!fs::exists(d)) continue;
      std::vector<fs::path> files_in;
      for (const auto& e : fs::directory_iterator(d)) files_in.push_back(e.path());
      std::sort(files_in.begin(), files_in.end());
      for (const auto& p : files_in) {
        std::ifstream t(p);
        for (const auto& g : segment_glances(read_trace_csv(t)))
          if (g.complete) glances.push_back(g.duration);
      }
    }
  }
  emit("glance_durations.svg", plot::histogram("in-car glance durations", "s", glances));

  if (fs::exists(sim_dir / "value_traces.csv")) {
    std::ifstream v(sim_dir / "value_traces.csv");
    std::string line;
    std::getline(v, line);
    std::map<std::string, plot::Series> series;
    std::vector<std::string> order;
    while (std::getline(v, line)) {
      const auto f = split_csv(line);
      if (f.size() != 5) throw ParseError("value_traces.csv: expected 5 fields");
      if (!series.count(f[0])) order.push_back(f[0]);
      auto& s = series[f[0]];
      s.name = f[0];
      s.x.push_back(parse_double(f[1], "value_traces.csv"));
      s.y.push_back(parse_double(f[2], "value_traces.csv"));
    }
    static const char* kColors[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756",
                                    "#72b7b2", "#b279a2", "#ff9da6", "#9d755d"};
    std::vector<plot::Series> list;
    for (std::size_t i = 0; i < order.size() && i < 8; ++i) {
      list.push_back(series[order[i]]);
      list.back().color = kColors[i];
    }
    emit("value_traces.svg", plot::line_chart("driving value, first episode", "t (s)",
                                              "v_drive", list));
  }

  bool has_on = false, has_off = false;
  for (const auto& c : r.conditions) (c.lca ? has_on : has_off) = true;
  if (has_on && has_off) {
    const auto rows = speed_lca_table(r, bin_edges);
    std::ofstream t(out_dir / "speed_lca_table.csv");
    write_speed_lca_table(t, rows);
    files.push_back("speed_lca_table.csv");
    std::vector<std::string> labels;
    std::vector<double> vals, err;
    for (const auto& row : rows) {
      labels.push_back(fmt(row.lo_kmh) + "-" + fmt(row.hi_kmh) + (row.lca ? " LCA" : " no LCA"));
      vals.push_back(row.glance.mean);
      err.push_back(row.glance.ci95);
    }
    emit("speed_lca_glance.svg",
         plot::bar_chart("glance duration by speed bin and LCA", "s", labels, vals, err));
  }
  return files;
}

}  // namespace supdrive

#endif  // SUPDRIVE_REPORT_HPP_
