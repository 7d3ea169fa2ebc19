#pragma once

#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/cbf.hpp"
#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/filter.hpp"

#include <json.hpp>

#include <fstream>
#include <string>

namespace safe_ctrl {

/// Point rate with a 95% Wilson interval and a one-sided contract.
struct VerifyReport {
  std::string name;
  long hits = 0;
  long trials = 0;
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double bound = 0.0;  // contract: rate <= bound, or value >= bound for depth
  double value = 0.0;  // depth-type reports
  bool passed = false;
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
};

inline void wilson_interval(long hits, long trials, double& lo, double& hi) {
  if (trials <= 0) {
    lo = 0.0;
    hi = 1.0;
    return;
  }
  const double z = 1.959963984540054;
  const double n = static_cast<double>(trials);
  const double p = hits / n;
  const double denom = 1.0 + z * z / n;
  const double center = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  lo = hits == 0 ? 0.0 : std::max(0.0, center - half);
  hi = hits == trials ? 1.0 : std::min(1.0, center + half);
}

/// One-sided three-sigma binomial slack around a nominal probability.
inline double binomial_tolerance(double delta, long trials) {
  return delta + 3.0 * std::sqrt(delta / static_cast<double>(trials));
}

inline nlohmann::ordered_json to_json(const VerifyReport& r) {
  nlohmann::ordered_json j;
  j["check"] = r.name;
  j["hits"] = r.hits;
  j["trials"] = r.trials;
  j["rate"] = r.rate;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["bound"] = r.bound;
  j["value"] = r.value;
  j["passed"] = r.passed;
  j["detail"] = r.detail;
  return j;
}

/// Appends one JSON object per line.
inline void append_report(const std::string& path, const VerifyReport& r) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw Fault("cannot open results file " + path);
  os << to_json(r).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Forward invariance under the exact model
// ---------------------------------------------------------------------------

enum class InvariancePolicy {
  filtered,    // nominal pushes toward the boundary, exact-model filter applied
  adversarial  // same nominal, no filter
};

struct InvarianceSetup {
  int trials = 2000;
  int horizon = 100;
  std::uint64_t seed = 0;
  double margin_scale = 1.0;
  InvariancePolicy policy = InvariancePolicy::filtered;
};

/// Fraction of trajectories from x0 that leave {h >= 0} at some step. The
/// nominal control is the box corner that decreases the first barrier fastest;
/// the filter uses the exact residual representation of the environment.
inline VerifyReport verify_forward_invariance(const Environment& env, const InvarianceSetup& s) {
  if (!env.exact_features) throw Fault("forward invariance: environment lacks an exact model");
  if (env.barriers.empty()) throw Fault("forward invariance: environment has no barrier");
  if (s.trials < 1 || s.horizon < 1) throw Fault("forward invariance: trials and horizon must be >= 1");
  if (env.min_barrier(env.x0) <= 0.0) throw Fault("forward invariance: x0 must lie strictly inside");
  const FeatureMap& feats = *env.exact_features;
  const double sb = env.noise.sigma_bar();

  // Steepest-descent corner for the first barrier under the nominal input map.
  const StateVector g0 = env.barriers.front().gradient(env.drift(env.x0));
  const Eigen::RowVectorXd dir = g0.transpose() * env.input_map(env.x0);
  ControlVector u_adv(env.control_dim);
  for (int j = 0; j < env.control_dim; ++j) {
    u_adv[j] = dir[j] >= 0.0 ? env.bounds.lower[j] : env.bounds.upper[j];
  }

  long hits = 0;
  long infeasible = 0;
  for (int k = 0; k < s.trials; ++k) {
    Rng rng = seeded_rng(s.seed, "invariance", static_cast<std::uint64_t>(k));
    StateVector x = env.x0;
    bool violated = false;
    for (int h = 0; h < s.horizon; ++h) {
      ControlVector u = u_adv;
      if (s.policy == InvariancePolicy::filtered) {
        std::vector<LinearConstraint> cons;
        for (const auto& b : env.barriers) {
          const double margin = s.margin_scale * noise_margin(b, env.state_dim, s.horizon, sb);
          cons.push_back(linearize(b, env, x, u_adv, feats, env.exact_weights, margin));
        }
        const FilterResult fr = project_safe(u_adv, cons, env.bounds);
        infeasible += fr.status == FilterStatus::infeasible_fallback ? 1 : 0;
        u = fr.u;
      }
      x = step_true(env, x, u, rng);
      if (env.min_barrier(x) < 0.0) violated = true;
    }
    hits += violated ? 1 : 0;
  }

  VerifyReport r;
  r.name = s.policy == InvariancePolicy::filtered ? "forward_invariance" : "forward_invariance_adversarial";
  r.hits = hits;
  r.trials = s.trials;
  r.rate = static_cast<double>(hits) / s.trials;
  wilson_interval(hits, s.trials, r.ci_low, r.ci_high);
  const double ds = env.barriers.front().delta_s;
  r.bound = binomial_tolerance(ds, s.trials);
  r.passed = r.rate <= r.bound;
  r.detail["delta_s"] = ds;
  r.detail["horizon"] = s.horizon;
  r.detail["sigma_bar"] = sb;
  r.detail["margin_scale"] = s.margin_scale;
  r.detail["infeasible_steps"] = infeasible;
  r.detail["seed"] = s.seed;
  return r;
}

// ---------------------------------------------------------------------------
// Barrier depth with a mis-specified model
// ---------------------------------------------------------------------------

/// max over a uniform grid of the box of ||(W - W*) phi(x)||_2 (state-only
/// features).
inline double prediction_error(const Environment& env, const Eigen::MatrixXd& w, int grid = 401) {
  if (!env.exact_features) throw Fault("prediction_error: environment lacks an exact model");
  if (env.state_dim != 1) throw Fault("prediction_error: grid oracle is one-dimensional");
  const Eigen::MatrixXd diff = w - env.exact_weights;
  const ControlVector zero = ControlVector::Zero(env.control_dim);
  double worst = 0.0;
  for (int i = 0; i < grid; ++i) {
    StateVector x(1);
    x[0] = env.box.lower[0] + (env.box.upper[0] - env.box.lower[0]) * i / (grid - 1.0);
    worst = std::max(worst, (diff * (*env.exact_features)(x, zero)).norm());
  }
  return worst;
}

struct DepthSetup {
  int trials = 500;
  int horizon = 100;
  std::uint64_t seed = 0;
  double x0_low = 0.0;
  double x0_high = 2.0;
};

/// Worst h over trajectories that are filtered with W instead of W*
/// (noise-free). Contract: worst >= -L eps / eta - 1e-8.
inline VerifyReport verify_depth_bound(const Environment& env, const Eigen::MatrixXd& w,
                                       const DepthSetup& s) {
  if (env.barriers.size() != 1) throw Fault("depth bound: exactly one barrier expected");
  if (env.noise.sigma_bar() != 0.0) throw Fault("depth bound: noise must be zero");
  const BarrierSpec& b = env.barriers.front();
  const double eps = prediction_error(env, w);
  const FeatureMap& feats = *env.exact_features;

  ControlVector u_adv(env.control_dim);
  const Eigen::RowVectorXd dir = b.gradient(env.x0).transpose() * env.input_map(env.x0);
  for (int j = 0; j < env.control_dim; ++j) {
    u_adv[j] = dir[j] >= 0.0 ? env.bounds.lower[j] : env.bounds.upper[j];
  }

  double worst = std::numeric_limits<double>::infinity();
  long infeasible = 0;
  long below = 0;
  const double bound = -b.lipschitz * eps / b.eta;
  for (int k = 0; k < s.trials; ++k) {
    Rng rng = seeded_rng(s.seed, "depth-start", static_cast<std::uint64_t>(k));
    StateVector x = StateVector::Constant(1, rng.uniform(s.x0_low, s.x0_high));
    double traj_min = b.value(x);
    for (int h = 0; h < s.horizon; ++h) {
      const LinearConstraint c = linearize(b, env, x, u_adv, feats, w, 0.0);
      const FilterResult fr = project_safe(u_adv, {c}, env.bounds);
      infeasible += fr.status == FilterStatus::infeasible_fallback ? 1 : 0;
      x = step_true(env, x, fr.u, rng);
      traj_min = std::min(traj_min, b.value(x));
    }
    worst = std::min(worst, traj_min);
    below += traj_min < bound - 1e-8 ? 1 : 0;
  }

  VerifyReport r;
  r.name = "depth_bound";
  r.hits = below;
  r.trials = s.trials;
  r.rate = static_cast<double>(below) / s.trials;
  wilson_interval(below, s.trials, r.ci_low, r.ci_high);
  r.value = worst;
  r.bound = bound - 1e-8;
  r.passed = worst >= r.bound;
  r.detail["epsilon"] = eps;
  r.detail["eta"] = b.eta;
  r.detail["lipschitz"] = b.lipschitz;
  r.detail["infeasible_steps"] = infeasible;
  r.detail["seed"] = s.seed;
  return r;
}

// ---------------------------------------------------------------------------
// Noise envelope
// ---------------------------------------------------------------------------

/// p = sigma_bar sqrt(2 ln(H n / delta_s)).
inline double envelope_threshold(double sigma_bar, int horizon, int n, double delta_s) {
  if (!(delta_s > 0.0 && delta_s < 1.0)) throw Fault("envelope: delta_s must lie in (0,1)");
  if (horizon < 1 || n < 1) throw Fault("envelope: horizon and n must be >= 1");
  return sigma_bar * std::sqrt(2.0 * std::log(horizon * static_cast<double>(n) / delta_s));
}

/// Exact probability that some of H n iid N(0, 1) draws exceed
/// sqrt(2 ln(H n / delta_s)) in magnitude.
inline double envelope_exceedance_exact(int horizon, int n, double delta_s) {
  const double z = envelope_threshold(1.0, horizon, n, delta_s);
  const double tail = std::erfc(z / std::sqrt(2.0));  // 2 * upper tail
  return 1.0 - std::pow(1.0 - tail, horizon * static_cast<double>(n));
}

struct EnvelopeSetup {
  int horizon = 100;
  double delta_s = 0.05;
  int trials = 5000;
  std::uint64_t seed = 0;
  double threshold_scale = 1.0;  // 0 disables the margin
};

/// Fraction of H-step noise sequences in which any coordinate leaves [-p, p].
inline VerifyReport verify_noise_envelope(const NoiseSpec& noise, const EnvelopeSetup& s) {
  noise.validate();
  const int n = static_cast<int>(noise.sigmas.size());
  if (n < 1) throw Fault("envelope: empty noise spec");
  if (s.trials < 1) throw Fault("envelope: trials must be >= 1");
  const double p = s.threshold_scale * envelope_threshold(noise.sigma_bar(), s.horizon, n, s.delta_s);
  long hits = 0;
  for (int k = 0; k < s.trials; ++k) {
    Rng rng = seeded_rng(s.seed, "envelope", static_cast<std::uint64_t>(k));
    bool out = false;
    for (int h = 0; h < s.horizon; ++h) {
      const StateVector e = sample_gaussian_noise(noise, rng);
      if (e.cwiseAbs().maxCoeff() > p) out = true;
    }
    hits += out ? 1 : 0;
  }
  VerifyReport r;
  r.name = s.threshold_scale == 1.0 ? "noise_envelope" : "noise_envelope_scaled";
  r.hits = hits;
  r.trials = s.trials;
  r.rate = static_cast<double>(hits) / s.trials;
  wilson_interval(hits, s.trials, r.ci_low, r.ci_high);
  r.bound = binomial_tolerance(s.delta_s, s.trials);
  r.passed = r.rate <= r.bound;
  r.detail["threshold"] = p;
  r.detail["horizon"] = s.horizon;
  r.detail["n"] = n;
  r.detail["delta_s"] = s.delta_s;
  r.detail["exact_rate_unit_sigma"] = envelope_exceedance_exact(s.horizon, n, s.delta_s);
  r.detail["seed"] = s.seed;
  return r;
}

}  // namespace safe_ctrl
