#pragma once

#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/learner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace safe_ctrl {

// Column names are part of the output contract; append, never rename.
inline constexpr const char* kEpisodeCsvHeader =
    "episode,train_cost,test_reward_mean,test_reward_std,min_theta,max_theta,min_barrier,"
    "unsafe_trials,tolerance_violations,infeasible_count,beta,regret,thompson_attempts,"
    "thompson_fallback";

/// Locale-independent shortest round-trip-safe text for a double.
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_episode_csv(std::ostream& os, const RunRecord& rec) {
  os << kEpisodeCsvHeader << "\n";
  for (const auto& e : rec.episodes) {
    os << e.episode << ',' << fmt_real(e.train_cost) << ',' << fmt_real(e.test_reward_mean) << ','
       << fmt_real(e.test_reward_std) << ',' << fmt_real(e.min_angle) << ','
       << fmt_real(e.max_angle) << ',' << fmt_real(e.min_barrier) << ',' << e.unsafe_trials << ','
       << e.tolerance_violations << ',' << e.infeasible_count << ',' << fmt_real(e.beta) << ','
       << fmt_real(e.regret) << ',' << e.thompson_attempts << ',' << (e.thompson_fallback ? 1 : 0)
       << "\n";
  }
}

inline std::string trace_csv_header(int n, int m) {
  std::ostringstream os;
  os << "episode,step";
  for (int i = 0; i < n; ++i) os << ",x" << i;
  for (int j = 0; j < m; ++j) os << ",u" << j;
  os << ",cost";
  for (int i = 0; i < n; ++i) os << ",next_x" << i;
  os << ",barrier,constraint_active,qp_infeasible";
  return os.str();
}

/// Training trajectories of every episode, one row per step.
inline void write_trace_csv(std::ostream& os, const RunRecord& rec, const Environment& env) {
  os << trace_csv_header(env.state_dim, env.control_dim) << "\n";
  for (const auto& e : rec.episodes) {
    for (const auto& s : e.train.steps) {
      os << e.episode << ',' << s.step;
      for (int i = 0; i < s.x.size(); ++i) os << ',' << fmt_real(s.x[i]);
      for (int j = 0; j < s.u.size(); ++j) os << ',' << fmt_real(s.u[j]);
      os << ',' << fmt_real(s.cost);
      for (int i = 0; i < s.x_next.size(); ++i) os << ',' << fmt_real(s.x_next[i]);
      os << ',' << fmt_real(s.barrier) << ',' << (s.constraint_active ? 1 : 0) << ','
         << (s.qp_infeasible ? 1 : 0) << "\n";
    }
  }
}

/// Column-oriented CSV table of numbers.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    throw Fault("csv: no column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Fault("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw Fault("empty csv " + path);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw Fault("csv: ragged row in " + path);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace safe_ctrl
