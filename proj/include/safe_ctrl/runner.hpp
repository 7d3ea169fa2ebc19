#pragma once

#include "safe_ctrl/config.hpp"
#include "safe_ctrl/learner.hpp"
#include "safe_ctrl/model.hpp"
#include "safe_ctrl/trace_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace safe_ctrl {

inline constexpr int kSchemaVersion = 1;

/// "all" expands to the five controllers compared on the pendulum; otherwise
/// a comma-separated list of method names.
inline std::vector<Method> resolve_methods(const std::string& spec) {
  if (spec == "all") {
    return {Method::algorithm1, Method::gt_mppi, Method::nom_mppi_cbf, Method::exploitation,
            Method::unconstrained_ts};
  }
  std::vector<Method> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto m = parse_method(detail::trim(item));
    if (!m) throw ConfigError("method", "unknown method '" + item + "'");
    out.push_back(*m);
  }
  if (out.empty()) throw ConfigError("method", "no method given");
  return out;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Fault("cannot write " + p.string());
  os << text;
}

/// Persists one method's record under dir.
inline void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                          const Experiment& ex, const RunRecord& rec, double j_star) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream os;
    write_episode_csv(os, rec);
    write_text(dir / "episodes.csv", os.str());
  }
  {
    std::ostringstream os;
    write_trace_csv(os, rec, ex.env);
    write_text(dir / "trace.csv", os.str());
  }
  if (rec.has_model) {
    std::ostringstream a, b;
    rec.initial_model.write(a);
    rec.final_model.write(b);
    write_text(dir / "model_initial.txt", a.str());
    write_text(dir / "model_final.txt", b.str());
    std::filesystem::create_directories(dir / "models");
    for (std::size_t i = 0; i < rec.snapshots.size(); ++i) {
      std::ostringstream os;
      rec.snapshots[i].write(os);
      std::ostringstream name;
      name << "episode_" << std::setw(3) << std::setfill('0') << i << ".txt";
      write_text(dir / "models" / name.str(), os.str());
    }
  }
  {
    std::ostringstream os;
    write_features(os, ex.features);
    write_text(dir / "features.txt", os.str());
  }
  write_text(dir / "config.cfg", cfg.serialize());

  nlohmann::ordered_json m;
  m["schema_version"] = kSchemaVersion;
  m["method"] = std::string(method_name(rec.method));
  m["env"] = ex.env.id;
  m["seed"] = ex.learner.seed;
  m["episodes"] = ex.learner.episodes;
  m["horizon"] = ex.learner.horizon;
  m["config_hash"] = hex64(cfg.hash());
  m["config"] = cfg.serialize();
  write_text(dir / "manifest.json", m.dump(2) + "\n");

  nlohmann::ordered_json s;
  s["method"] = std::string(method_name(rec.method));
  s["episodes_completed"] = rec.episodes.size();
  s["j_star"] = j_star;
  s["error"] = rec.error;
  if (!rec.episodes.empty()) {
    const auto& last = rec.episodes.back();
    s["final_test_reward_mean"] = last.test_reward_mean;
    s["final_regret"] = last.regret;
    int unsafe = 0, tol = 0, infeasible = 0;
    double hmin = std::numeric_limits<double>::infinity();
    for (const auto& e : rec.episodes) {
      unsafe += e.unsafe_trials;
      tol += e.tolerance_violations;
      infeasible += e.infeasible_count;
      hmin = std::min(hmin, e.min_barrier);
    }
    s["unsafe_test_trials"] = unsafe;
    s["tolerance_violations"] = tol;
    s["infeasible_train_steps"] = infeasible;
    s["min_test_barrier"] = fmt_real(hmin);
  }
  write_text(dir / "summary.json", s.dump(2) + "\n");
}

struct ExperimentResult {
  double j_star = 0.0;
  std::vector<RunRecord> records;
};

/// Runs the listed methods on one config and writes out/<method>/.
/// Learning methods share the same initial data and Ball_0.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                                       const std::filesystem::path& out) {
  const Experiment ex = build_experiment(cfg);
  ExperimentResult res;
  res.j_star = reference_cost(ex.learner, ex.env);
  const ResidualModel model0 = initial_model(ex.env, ex.features, ex.learner);
  for (Method m : methods) {
    RunRecord rec = run_method(m, ex.learner, ex.env, ex.features, &model0);
    if (!method_learns(m)) rec.has_model = false;
    regret_curve(rec, res.j_star);
    write_run_dir(out / std::string(method_name(m)), cfg, ex, rec, res.j_star);
    res.records.push_back(std::move(rec));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cross-run aggregation
// ---------------------------------------------------------------------------

struct RunDir {
  std::filesystem::path path;
  std::string method;
  int horizon = 0;
};

/// Accepts method dirs (with manifest.json) or roots holding method dirs.
inline std::vector<RunDir> discover_runs(const std::vector<std::string>& roots) {
  std::vector<RunDir> out;
  auto load = [&](const std::filesystem::path& d) {
    std::ifstream is(d / "manifest.json");
    const auto j = nlohmann::json::parse(is);
    out.push_back({d, j.at("method").get<std::string>(), j.at("horizon").get<int>()});
  };
  for (const auto& r : roots) {
    const std::filesystem::path p(r);
    if (std::filesystem::exists(p / "manifest.json")) {
      load(p);
      continue;
    }
    if (!std::filesystem::is_directory(p)) throw Fault("not a run directory: " + r);
    std::vector<std::filesystem::path> subs;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) subs.push_back(e.path());
    }
    if (subs.empty()) throw Fault("no runs under " + r);
    std::sort(subs.begin(), subs.end());
    for (const auto& s : subs) load(s);
  }
  return out;
}

/// Per method and episode: mean and sample std across runs of the test
/// reward and the angle extremes, plus barrier minima.
inline std::string compare_runs(const std::vector<std::string>& roots) {
  const auto runs = discover_runs(roots);
  if (runs.empty()) throw Fault("compare: no runs");
  for (const auto& r : runs) {
    if (r.horizon != runs.front().horizon) {
      throw Fault("compare: horizon mismatch between " + runs.front().path.string() + " (" +
                  std::to_string(runs.front().horizon) + ") and " + r.path.string() + " (" +
                  std::to_string(r.horizon) + ")");
    }
  }
  std::map<std::string, std::vector<CsvTable>> groups;
  for (const auto& r : runs) groups[r.method].push_back(read_csv((r.path / "episodes.csv").string()));

  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1.0)) : 0.0;
  };

  std::ostringstream os;
  os << "method,episode,runs,reward_mean,reward_std,max_theta_mean,max_theta_std,min_theta_mean,"
        "min_theta_std,min_barrier_mean,min_barrier_min,unsafe_trials\n";
  for (const auto& [method, tables] : groups) {
    std::size_t count = tables.front().rows.size();
    for (const auto& t : tables) count = std::min(count, t.rows.size());
    for (std::size_t e = 0; e < count; ++e) {
      std::vector<double> reward, maxth, minth, hmin;
      double unsafe = 0.0;
      for (const auto& t : tables) {
        const auto& row = t.rows[e];
        reward.push_back(row[t.column("test_reward_mean")]);
        maxth.push_back(row[t.column("max_theta")]);
        minth.push_back(row[t.column("min_theta")]);
        hmin.push_back(row[t.column("min_barrier")]);
        unsafe += row[t.column("unsafe_trials")];
      }
      double rm, rs, xm, xs, nm, ns, hm, hs;
      stats(reward, rm, rs);
      stats(maxth, xm, xs);
      stats(minth, nm, ns);
      stats(hmin, hm, hs);
      const double hlow = *std::min_element(hmin.begin(), hmin.end());
      os << method << ',' << e << ',' << tables.size() << ',' << fmt_real(rm) << ',' << fmt_real(rs)
         << ',' << fmt_real(xm) << ',' << fmt_real(xs) << ',' << fmt_real(nm) << ','
         << fmt_real(ns) << ',' << fmt_real(hm) << ',' << fmt_real(hlow) << ','
         << static_cast<long>(unsafe) << "\n";
    }
  }
  return os.str();
}

}  // namespace safe_ctrl
