// Command-line front end: run experiments, aggregate runs, run the verifiers.

#include "safe_ctrl/config.hpp"
#include "safe_ctrl/runner.hpp"
#include "safe_ctrl/verify.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace sc = safe_ctrl;
namespace fs = std::filesystem;

namespace {

std::string default_out_root() {
  const char* env = std::getenv("SAFE_CTRL_OUT");
  return env && *env ? env : "runs";
}

// Built-in 1-D setup used by `verify` when no config is given.
constexpr const char* kVerifyDefaults =
    "env = synthetic\n"
    "episodes = 0\n"
    "horizon = 100\n"
    "seed = 0\n"
    "eta = 0.2\n"
    "delta_s = 0.05\n";

sc::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                                 const std::optional<long long>& seed) {
  sc::ExperimentConfig cfg = path.empty() ? sc::ExperimentConfig::parse_string(kVerifyDefaults)
                                          : sc::ExperimentConfig::parse_file(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  if (seed) cfg.set("seed", std::to_string(*seed));
  cfg.validate();
  return cfg;
}

void print_report(const sc::VerifyReport& r) {
  std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " rate=" << r.rate << " ("
            << r.hits << "/" << r.trials << ", 95% CI [" << r.ci_low << ", " << r.ci_high
            << "]) bound=" << r.bound;
  if (r.name == "depth_bound") std::cout << " worst=" << r.value;
  std::cout << "\n";
}

int cmd_verify(const std::string& suite, const sc::ExperimentConfig& cfg, const std::string& results,
               int trials_override) {
  const sc::Experiment ex = sc::build_experiment(cfg);
  if (ex.env.id != "synthetic-linear") {
    throw sc::ConfigError("env", "verify suites run on the synthetic environment");
  }
  std::vector<sc::VerifyReport> reports;
  const bool all = suite == "all";
  if (all || suite == "prop1") {
    sc::InvarianceSetup s;
    s.trials = trials_override > 0 ? trials_override : 2000;
    s.horizon = ex.learner.horizon;
    s.seed = ex.learner.seed;
    s.margin_scale = ex.learner.margin_scale;
    reports.push_back(sc::verify_forward_invariance(ex.env, s));
  }
  if (all || suite == "thm1") {
    sc::ExperimentConfig quiet = cfg;
    quiet.set("noise.sigma", "0");
    const sc::Experiment exq = sc::build_experiment(quiet);
    Eigen::MatrixXd w = exq.env.exact_weights;
    w(0, 0) += 0.04;
    w(0, 1) -= 0.03;
    sc::DepthSetup s;
    s.trials = trials_override > 0 ? trials_override : 500;
    s.horizon = ex.learner.horizon;
    s.seed = ex.learner.seed;
    reports.push_back(sc::verify_depth_bound(exq.env, w, s));
  }
  if (all || suite == "envelope") {
    sc::NoiseSpec noise;
    const double sb = ex.env.noise.sigma_bar() > 0.0 ? ex.env.noise.sigma_bar() : 0.1;
    noise.sigmas = Eigen::VectorXd::Constant(2, sb);
    sc::EnvelopeSetup s;
    s.horizon = ex.learner.horizon;
    s.delta_s = ex.env.barriers.front().delta_s;
    s.trials = trials_override > 0 ? trials_override : 5000;
    s.seed = ex.learner.seed;
    s.threshold_scale = ex.learner.margin_scale;
    reports.push_back(sc::verify_noise_envelope(noise, s));
  }
  if (reports.empty()) throw sc::ConfigError("suite", "unknown suite '" + suite + "'");
  if (!results.empty()) {
    const fs::path parent = fs::path(results).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
  }
  bool ok = true;
  for (const auto& r : reports) {
    print_report(r);
    if (!results.empty()) sc::append_report(results, r);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe episodic learning for control: experiments and verifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  std::string method = "algorithm1";
  std::optional<int> episodes;
  std::string out;

  auto* run = app.add_subcommand("run", "run one or more methods on a config");
  run->add_option("--config", config_path, "flat key = value config file")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--method", method, "algorithm1, a baseline name, a comma list, or all");
  run->add_option("--episodes", episodes, "override the episode count");
  run->add_option("--out", out, "output directory (default $SAFE_CTRL_OUT or ./runs)");
  run->add_option("--override", overrides, "key=value, repeatable");

  std::vector<std::string> dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "aggregate run directories across seeds");
  compare->add_option("dirs", dirs, "run directories")->required();
  compare->add_option("--out", compare_out, "write the table here instead of stdout");

  std::string suite = "all";
  std::string results;
  int trials = 0;
  auto* verify = app.add_subcommand("verify", "Monte Carlo checks of the safety guarantees");
  verify->add_option("suite", suite, "prop1, thm1, envelope or all");
  verify->add_option("--config", config_path, "synthetic-environment config");
  verify->add_option("--seed", seed, "override the seed");
  verify->add_option("--override", overrides, "key=value, repeatable");
  verify->add_option("--trials", trials, "Monte Carlo trials (default per suite)");
  verify->add_option("--out", results, "JSON-lines results file to append to");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      sc::ExperimentConfig cfg = sc::ExperimentConfig::parse_file(config_path);
      for (const auto& o : overrides) cfg.apply_override(o);
      if (seed) cfg.set("seed", std::to_string(*seed));
      if (episodes) cfg.set("episodes", std::to_string(*episodes));
      cfg.validate();
      const auto methods = sc::resolve_methods(method);
      const fs::path root = out.empty() ? fs::path(default_out_root()) : fs::path(out);
      const auto res = sc::run_experiment(cfg, methods, root);
      int status = 0;
      for (const auto& r : res.records) {
        std::cout << sc::method_name(r.method) << ": " << r.episodes.size() << " episodes";
        if (!r.episodes.empty()) std::cout << ", final test reward " << r.episodes.back().test_reward_mean;
        if (!r.error.empty()) {
          std::cout << ", aborted: " << r.error;
          status = 1;
        }
        std::cout << "\n";
      }
      std::cout << "wrote " << root.string() << "\n";
      return status;
    }
    if (*compare) {
      const std::string table = sc::compare_runs(dirs);
      if (compare_out.empty()) {
        std::cout << table;
      } else {
        sc::write_text(compare_out, table);
      }
      return 0;
    }
    if (*verify) {
      const auto cfg = load_config(config_path, overrides, seed);
      if (results.empty()) results = (fs::path(default_out_root()) / "verify_results.jsonl").string();
      return cmd_verify(suite, cfg, results, trials);
    }
  } catch (const sc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
