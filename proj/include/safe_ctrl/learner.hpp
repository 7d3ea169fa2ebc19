#pragma once

#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/cbf.hpp"
#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/features.hpp"
#include "safe_ctrl/filter.hpp"
#include "safe_ctrl/model.hpp"
#include "safe_ctrl/planner.hpp"

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace safe_ctrl {

enum class Method {
  algorithm1,
  gt_mppi,
  nom_mppi,
  nom_mppi_cbf,
  exploitation,
  unconstrained_ts,
  gt_mppi_cbf,  // reference controller for J*
};

inline constexpr std::array<Method, 6> kAllMethods = {
    Method::algorithm1,   Method::gt_mppi,          Method::nom_mppi,
    Method::nom_mppi_cbf, Method::exploitation,     Method::unconstrained_ts};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::algorithm1: return "algorithm1";
    case Method::gt_mppi: return "gt-mppi";
    case Method::nom_mppi: return "nom-mppi";
    case Method::nom_mppi_cbf: return "nom-mppi-cbf";
    case Method::exploitation: return "exploitation";
    case Method::unconstrained_ts: return "unconstrained-ts";
    case Method::gt_mppi_cbf: return "gt-mppi-cbf";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::algorithm1, Method::gt_mppi, Method::nom_mppi, Method::nom_mppi_cbf,
                   Method::exploitation, Method::unconstrained_ts, Method::gt_mppi_cbf}) {
    if (method_name(m) == s) return m;
  }
  return std::nullopt;
}

inline bool method_learns(Method m) {
  return m == Method::algorithm1 || m == Method::exploitation || m == Method::unconstrained_ts;
}

struct LearnerConfig {
  int episodes = 50;
  int horizon = 200;
  RadiusParams radius;  // sigma_bar is taken from the environment
  double nu = 1.0;      // Thompson scale
  int thompson_max_attempts = 50;
  int test_trials = 20;
  int init_samples = 200;
  int reference_episodes = 100;
  double violation_tolerance = 0.05;
  bool random_init = false;
  double margin_scale = 1.0;  // 0 disables the noise margin
  MppiConfig mppi;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Single episode
// ---------------------------------------------------------------------------

enum class FilterMode { none, learned, known };

/// Everything a closed-loop episode needs besides its random streams.
struct Controller {
  const Environment* env = nullptr;
  PlanningModel plan;
  FilterMode filter = FilterMode::none;
  const FeatureMap* features = nullptr;  // for FilterMode::learned
  Eigen::MatrixXd w_filter;              // empty: nominal model in the filter
  std::vector<double> margins;           // one per barrier
};

inline std::vector<double> barrier_margins(const Environment& env, int horizon, double scale) {
  std::vector<double> out;
  const double sb = env.noise.sigma_bar();
  for (const auto& b : env.barriers) out.push_back(scale * noise_margin(b, env.state_dim, horizon, sb));
  return out;
}

/// Safety filter on the executed control only.
inline FilterResult filter_control(const Controller& c, const StateVector& x,
                                   const ControlVector& u_star) {
  const Environment& env = *c.env;
  if (c.filter == FilterMode::none || env.barriers.empty()) return {u_star, FilterStatus::unmodified};
  std::vector<LinearConstraint> cons;
  cons.reserve(env.barriers.size());
  for (std::size_t i = 0; i < env.barriers.size(); ++i) {
    const BarrierSpec& b = env.barriers[i];
    if (c.filter == FilterMode::known) {
      cons.push_back(linearize_known(b, env, x, c.margins[i]));
    } else {
      static const FeatureMap empty{};
      const FeatureMap& f = c.features ? *c.features : empty;
      cons.push_back(linearize(b, env, x, u_star, f, c.w_filter, c.margins[i]));
    }
  }
  return project_safe(u_star, cons, env.bounds);
}

/// Plans, filters and executes H steps on the true system from x0.
inline EpisodeTrace run_episode(const Controller& c, const MppiConfig& mppi, const StateVector& x0,
                                int horizon, Rng& noise_rng, Rng& plan_rng) {
  const Environment& env = *c.env;
  MppiPlanner planner(mppi, env.bounds);
  EpisodeTrace trace;
  trace.steps.reserve(static_cast<std::size_t>(horizon));
  StateVector x = x0;
  for (int h = 0; h < horizon; ++h) {
    const ControlVector u_star = planner.plan_step(x, c.plan, env.cost, plan_rng);
    const FilterResult fr = filter_control(c, x, u_star);
    StepRecord s;
    s.step = h;
    s.x = x;
    s.u = env.bounds.clip(fr.u);
    s.cost = env.cost(x, s.u);
    s.barrier = env.min_barrier(x);
    s.constraint_active = fr.status != FilterStatus::unmodified;
    s.qp_infeasible = fr.status == FilterStatus::infeasible_fallback;
    s.x_next = step_true(env, x, s.u, noise_rng);
    x = s.x_next;
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

/// Minimum barrier value over every visited state, including the last.
inline double trace_min_barrier(const Environment& env, const EpisodeTrace& t) {
  double h = std::numeric_limits<double>::infinity();
  for (const auto& s : t.steps) h = std::min({h, s.barrier, env.min_barrier(s.x_next)});
  return h;
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

/// N one-step transitions from states drawn uniformly over the initial-data
/// box; the uniform random control passes through the nominal-model filter
/// with a one-step noise margin before the step.
inline std::vector<Transition> collect_initial_data(const Environment& env, int count, Rng& rng) {
  if (count < 0) throw Fault("collect_initial_data: negative count");
  Controller guard;
  guard.env = &env;
  guard.filter = FilterMode::learned;
  guard.margins = barrier_margins(env, 1, 1.0);
  std::vector<Transition> data;
  data.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Transition t;
    t.x = StateVector(env.state_dim);
    for (int k = 0; k < env.state_dim; ++k) t.x[k] = rng.uniform(env.init_box.lower[k], env.init_box.upper[k]);
    t.u = ControlVector(env.control_dim);
    for (int j = 0; j < env.control_dim; ++j) t.u[j] = rng.uniform(env.bounds.lower[j], env.bounds.upper[j]);
    t.u = filter_control(guard, t.x, t.u).u;
    t.x_next = step_true(env, t.x, t.u, rng);
    data.push_back(std::move(t));
  }
  return data;
}

inline ResidualModel initial_model(const Environment& env, const FeatureMap& features,
                                   const LearnerConfig& cfg) {
  Rng rng = seeded_rng(cfg.seed, "initial-data");
  const auto data = collect_initial_data(env, cfg.init_samples, rng);
  RadiusParams rp = cfg.radius;
  rp.sigma_bar = env.noise.sigma_bar();
  ResidualModel model = fit_initial(data, env, features, rp);
  model.set_beta(beta_t(0, cfg.episodes, cfg.horizon, cfg.init_samples, rp, env.state_dim, features.dim()));
  return model;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct EpisodeRecord {
  int episode = 0;
  EpisodeTrace train;
  double train_cost = 0.0;
  std::vector<double> test_rewards;  // reward = -episode cost
  double test_reward_mean = 0.0;
  double test_reward_std = 0.0;
  double min_angle = std::numeric_limits<double>::infinity();
  double max_angle = -std::numeric_limits<double>::infinity();
  double min_barrier = std::numeric_limits<double>::infinity();  // over test trials
  int unsafe_trials = 0;        // test trials with some h < 0
  int tolerance_violations = 0; // test trials with some h < -tolerance
  int infeasible_count = 0;     // training steps with an infeasible filter
  double beta = 0.0;
  double regret = std::numeric_limits<double>::quiet_NaN();
  int thompson_attempts = 0;
  bool thompson_fallback = false;
};

struct RunRecord {
  Method method = Method::algorithm1;
  bool has_model = false;
  ResidualModel initial_model;
  ResidualModel final_model;
  std::vector<ResidualModel> snapshots;  // after each episode's update
  std::vector<EpisodeRecord> episodes;
  std::string error;  // set when a fault aborted the run
};

inline StateVector episode_start(const Environment& env, const LearnerConfig& cfg,
                                 std::string_view stream, int episode, int trial) {
  if (!cfg.random_init) return env.x0;
  Rng rng = seeded_rng(cfg.seed, stream, static_cast<std::uint64_t>(episode),
                       static_cast<std::uint64_t>(trial));
  StateVector x(env.state_dim);
  for (int k = 0; k < env.state_dim; ++k) x[k] = rng.uniform(env.init_box.lower[k], env.init_box.upper[k]);
  return x;
}

/// Planning model and filter of a method, given the matrix in use this episode.
inline Controller make_controller(Method m, const Environment& env, const FeatureMap& features,
                                  const Eigen::MatrixXd& w, const std::vector<double>& margins) {
  Controller c;
  c.env = &env;
  c.margins = margins;
  c.features = &features;
  switch (m) {
    case Method::gt_mppi:
      c.plan = PlanningModel::truth(env);
      break;
    case Method::gt_mppi_cbf:
      c.plan = PlanningModel::truth(env);
      c.filter = FilterMode::known;
      break;
    case Method::nom_mppi:
      c.plan = PlanningModel::nominal(env);
      break;
    case Method::nom_mppi_cbf:
      c.plan = PlanningModel::nominal(env);
      c.filter = FilterMode::learned;
      break;
    case Method::algorithm1:
    case Method::exploitation:
      c.plan = PlanningModel::learned(env, features, w);
      c.filter = FilterMode::learned;
      c.w_filter = w;
      break;
    case Method::unconstrained_ts:
      c.plan = PlanningModel::learned(env, features, w);
      break;
  }
  return c;
}

/// Frozen-policy evaluation after episode t; fills the test fields of rec.
inline void run_tests(const Controller& c, const LearnerConfig& cfg, EpisodeRecord& rec) {
  const Environment& env = *c.env;
  rec.test_rewards.clear();
  for (int k = 0; k < cfg.test_trials; ++k) {
    Rng noise = seeded_rng(cfg.seed, "test-noise", static_cast<std::uint64_t>(rec.episode),
                           static_cast<std::uint64_t>(k));
    Rng plan = seeded_rng(cfg.seed, "test-mppi", static_cast<std::uint64_t>(rec.episode),
                          static_cast<std::uint64_t>(k));
    const StateVector x0 = episode_start(env, cfg, "test-start", rec.episode, k);
    const EpisodeTrace t = run_episode(c, cfg.mppi, x0, cfg.horizon, noise, plan);
    rec.test_rewards.push_back(-t.cost());
    const double hmin = trace_min_barrier(env, t);
    rec.min_barrier = std::min(rec.min_barrier, hmin);
    rec.unsafe_trials += hmin < 0.0 ? 1 : 0;
    rec.tolerance_violations += hmin < -cfg.violation_tolerance ? 1 : 0;
    if (env.angle_index >= 0) {
      for (const auto& s : t.steps) {
        for (double a : {s.x[env.angle_index], s.x_next[env.angle_index]}) {
          rec.min_angle = std::min(rec.min_angle, a);
          rec.max_angle = std::max(rec.max_angle, a);
        }
      }
    }
  }
  const double n = static_cast<double>(rec.test_rewards.size());
  if (n > 0) {
    double sum = 0.0;
    for (double r : rec.test_rewards) sum += r;
    rec.test_reward_mean = sum / n;
    double ss = 0.0;
    for (double r : rec.test_rewards) ss += (r - rec.test_reward_mean) * (r - rec.test_reward_mean);
    rec.test_reward_std = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  }
}

/// Episodic loop shared by Algorithm 1 and all baselines. For learning
/// methods `model0` must come from fit_initial; others ignore it.
inline RunRecord run_method(Method method, const LearnerConfig& cfg, const Environment& env,
                            const FeatureMap& features, const ResidualModel* model0) {
  if (cfg.episodes < 0 || cfg.horizon < 1) throw Fault("run: episodes >= 0 and horizon >= 1 required");
  cfg.mppi.validate(env.control_dim);
  RunRecord rec;
  rec.method = method;
  const bool learns = method_learns(method);
  if (learns && model0 == nullptr) throw Fault("run: learning method needs an initial model");
  ResidualModel model;
  if (model0) {
    model = *model0;
    rec.has_model = true;
    rec.initial_model = model;
  }
  const auto margins = barrier_margins(env, cfg.horizon, cfg.margin_scale);

  try {
    for (int t = 0; t < cfg.episodes; ++t) {
      EpisodeRecord ep;
      ep.episode = t;
      Eigen::MatrixXd w;
      if (learns) {
        if (method == Method::exploitation) {
          w = model.w_bar();
        } else {
          Rng ts = seeded_rng(cfg.seed, "thompson", static_cast<std::uint64_t>(t));
          ThompsonDraw draw = thompson_sample(model, cfg.nu, ts, cfg.thompson_max_attempts);
          ep.thompson_attempts = draw.attempts;
          ep.thompson_fallback = draw.fallback;
          w = std::move(draw.w);
        }
        ep.beta = model.beta();
      }
      const Controller train = make_controller(method, env, features, w, margins);
      Rng noise = seeded_rng(cfg.seed, "noise", static_cast<std::uint64_t>(t));
      Rng plan = seeded_rng(cfg.seed, "mppi", static_cast<std::uint64_t>(t));
      const StateVector x0 = episode_start(env, cfg, "train-start", t, 0);
      ep.train = run_episode(train, cfg.mppi, x0, cfg.horizon, noise, plan);
      ep.train_cost = ep.train.cost();
      ep.infeasible_count = ep.train.infeasible_count();

      if (learns) {
        update(model, ep.train, env, features);
        rec.snapshots.push_back(model);
      }
      const Eigen::MatrixXd w_test = learns ? model.w_bar() : Eigen::MatrixXd();
      const Controller test = make_controller(method, env, features, w_test, margins);
      run_tests(test, cfg, ep);
      rec.episodes.push_back(std::move(ep));
    }
  } catch (const Fault& f) {
    rec.error = f.what();
  }
  if (model0) rec.final_model = model;
  return rec;
}

inline RunRecord run_algorithm1(const LearnerConfig& cfg, const Environment& env,
                                const FeatureMap& features, const ResidualModel& model0) {
  return run_method(Method::algorithm1, cfg, env, features, &model0);
}

inline RunRecord run_baseline(Method kind, const LearnerConfig& cfg, const Environment& env,
                              const FeatureMap& features, const ResidualModel* model0) {
  if (kind == Method::algorithm1) throw Fault("run_baseline: algorithm1 is not a baseline");
  return run_method(kind, cfg, env, features, model0);
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

/// J*: mean training cost of ground-truth planning with the exact filter.
inline double reference_cost(const LearnerConfig& cfg, const Environment& env) {
  if (cfg.reference_episodes < 1) throw Fault("reference_cost: need at least one episode");
  const FeatureMap none{};
  const Controller c = make_controller(Method::gt_mppi_cbf, env, none, Eigen::MatrixXd(),
                                       barrier_margins(env, cfg.horizon, cfg.margin_scale));
  double sum = 0.0;
  for (int i = 0; i < cfg.reference_episodes; ++i) {
    Rng noise = seeded_rng(cfg.seed, "reference-noise", static_cast<std::uint64_t>(i));
    Rng plan = seeded_rng(cfg.seed, "reference-mppi", static_cast<std::uint64_t>(i));
    const StateVector x0 = episode_start(env, cfg, "reference-start", i, 0);
    sum += run_episode(c, cfg.mppi, x0, cfg.horizon, noise, plan).cost();
  }
  return sum / cfg.reference_episodes;
}

/// Cumulative sum of (episode cost - J*).
inline std::vector<double> regret_curve(const std::vector<double>& episode_costs, double j_star) {
  std::vector<double> out;
  out.reserve(episode_costs.size());
  double acc = 0.0;
  for (double c : episode_costs) {
    acc += c - j_star;
    out.push_back(acc);
  }
  return out;
}

inline std::vector<double> regret_curve(RunRecord& rec, double j_star) {
  std::vector<double> costs;
  for (const auto& e : rec.episodes) costs.push_back(e.train_cost);
  auto out = regret_curve(costs, j_star);
  for (std::size_t i = 0; i < out.size(); ++i) rec.episodes[i].regret = out[i];
  return out;
}

struct SlopeStat {
  double slope = 0.0;
  double std_error = 0.0;
  int points = 0;
  /// Non-positive within one standard error.
  bool sublinear() const { return slope <= std_error; }
};

/// Least-squares slope of Regret_t / t against t for t in [t_from, t_to]
/// (t counts completed episodes, so Regret_t is regret[t - 1]).
inline SlopeStat average_regret_slope(const std::vector<double>& regret, int t_from, int t_to) {
  if (t_from < 1 || t_to > static_cast<int>(regret.size()) || t_to - t_from < 2) {
    throw Fault("average_regret_slope: need at least three points inside the series");
  }
  std::vector<double> xs, ys;
  for (int t = t_from; t <= t_to; ++t) {
    xs.push_back(t);
    ys.push_back(regret[static_cast<std::size_t>(t - 1)] / t);
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  SlopeStat s;
  s.points = static_cast<int>(n);
  s.slope = sxy / sxx;
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - my - s.slope * (xs[i] - mx);
    sse += e * e;
  }
  s.std_error = std::sqrt(sse / (n - 2.0) / sxx);
  return s;
}

}  // namespace safe_ctrl
