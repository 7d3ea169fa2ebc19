#pragma once

#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/features.hpp"
#include "safe_ctrl/learner.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace safe_ctrl {

/// Invalid or missing configuration entry; `key` names the offending field.
class ConfigError : public Fault {
 public:
  ConfigError(std::string key, const std::string& what)
      : Fault("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

enum class KeyType { integer, real, boolean, text, list };

struct KeyInfo {
  KeyType type;
  bool required;
};

// Every accepted key. Lists are comma separated reals.
inline const std::map<std::string, KeyInfo>& key_table() {
  using K = KeyType;
  static const std::map<std::string, KeyInfo> t = {
      {"env", {K::text, true}},
      {"episodes", {K::integer, true}},
      {"horizon", {K::integer, true}},
      {"seed", {K::integer, true}},
      {"lambda", {K::real, false}},
      {"c1", {K::real, false}},
      {"delta", {K::real, false}},
      {"delta_s", {K::real, false}},
      {"eta", {K::real, false}},
      {"epsilon", {K::real, false}},
      {"nu", {K::real, false}},
      {"margin_scale", {K::real, false}},
      {"thompson.max_attempts", {K::integer, false}},
      {"test_trials", {K::integer, false}},
      {"init_samples", {K::integer, false}},
      {"reference_episodes", {K::integer, false}},
      {"violation_tolerance", {K::real, false}},
      {"random_init", {K::boolean, false}},
      {"noise.sigma", {K::list, false}},
      {"features.kind", {K::text, false}},
      {"features.count", {K::integer, false}},
      {"features.bandwidth", {K::real, false}},
      {"features.state_scale", {K::list, false}},
      {"features.control_scale", {K::list, false}},
      {"mppi.rollouts", {K::integer, false}},
      {"mppi.horizon", {K::integer, false}},
      {"mppi.temperature", {K::real, false}},
      {"mppi.exploration", {K::list, false}},
      {"mppi.terminal_weight", {K::real, false}},
      {"init.lower", {K::list, false}},
      {"init.upper", {K::list, false}},
      {"x0", {K::list, false}},
      {"pendulum.gravity", {K::real, false}},
      {"pendulum.dt", {K::real, false}},
      {"pendulum.mass", {K::real, false}},
      {"pendulum.length", {K::real, false}},
      {"pendulum.nominal_mass", {K::real, false}},
      {"pendulum.nominal_length", {K::real, false}},
      {"pendulum.max_torque", {K::real, false}},
      {"pendulum.disturbance", {K::real, false}},
      {"pendulum.theta_min", {K::real, false}},
      {"pendulum.theta_max", {K::real, false}},
      {"unicycle.dt", {K::real, false}},
      {"unicycle.rect_wind", {K::real, false}},
      {"unicycle.wind_gain", {K::real, false}},
      {"unicycle.v_min", {K::real, false}},
      {"unicycle.v_max", {K::real, false}},
      {"unicycle.omega_max", {K::real, false}},
      {"unicycle.goal", {K::list, false}},
      {"unicycle.q", {K::list, false}},
      {"unicycle.r", {K::list, false}},
      {"obstacle.enabled", {K::boolean, false}},
      {"obstacle.center", {K::list, false}},
      {"obstacle.radius", {K::real, false}},
      {"synthetic.u_max", {K::real, false}},
      {"synthetic.w_star", {K::list, false}},
  };
  return t;
}

}  // namespace detail

/// Flat key = value experiment description. Lines starting with '#' are
/// comments. Serialization is canonical (sorted keys), so the hash identifies
/// the run.
class ExperimentConfig {
 public:
  static ExperimentConfig parse(std::istream& is) {
    ExperimentConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(lineno), "expected key = value");
      }
      c.set(detail::trim(std::string_view(t).substr(0, eq)),
            detail::trim(std::string_view(t).substr(eq + 1)));
    }
    return c;
  }

  static ExperimentConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config", "cannot open " + path);
    return parse(is);
  }

  static ExperimentConfig parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  /// Applies "key=value".
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override must be key=value");
    set(detail::trim(std::string_view(kv).substr(0, eq)),
        detail::trim(std::string_view(kv).substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (!detail::key_table().count(key)) throw ConfigError(key, "unknown key");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "missing");
    return it->second;
  }

  std::string text_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  long long integer(const std::string& key) const {
    const std::string& s = text(key);
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key, "not an integer: " + s);
    return v;
  }

  long long integer_or(const std::string& key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  double real(const std::string& key) const { return parse_real(key, text(key)); }

  double real_or(const std::string& key, double fallback) const {
    return has(key) ? real(key) : fallback;
  }

  bool boolean_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = text(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key, "not a boolean: " + s);
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(text(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_real(key, detail::trim(item)));
    if (out.empty()) throw ConfigError(key, "empty list");
    return out;
  }

  Eigen::VectorXd vector(const std::string& key, int expected) const {
    const auto v = list(key);
    if (static_cast<int>(v.size()) != expected) {
      throw ConfigError(key, "expected " + std::to_string(expected) + " entries, got " +
                                 std::to_string(v.size()));
    }
    return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
  }

  /// Type and presence checks for every key.
  void validate() const {
    for (const auto& [key, info] : detail::key_table()) {
      if (info.required && !has(key)) throw ConfigError(key, "missing required key");
      if (!has(key)) continue;
      switch (info.type) {
        case detail::KeyType::integer: integer(key); break;
        case detail::KeyType::real: real(key); break;
        case detail::KeyType::boolean: boolean_or(key, false); break;
        case detail::KeyType::list: list(key); break;
        case detail::KeyType::text: break;
      }
    }
    auto positive_int = [&](const std::string& k) {
      if (has(k) && integer(k) < 1) throw ConfigError(k, "must be >= 1");
    };
    auto probability = [&](const std::string& k) {
      if (has(k) && !(real(k) > 0.0 && real(k) < 1.0)) throw ConfigError(k, "must lie in (0,1)");
    };
    auto positive = [&](const std::string& k) {
      if (has(k) && !(real(k) > 0.0)) throw ConfigError(k, "must be positive");
    };
    auto nonnegative = [&](const std::string& k) {
      if (has(k) && !(real(k) >= 0.0)) throw ConfigError(k, "must be nonnegative");
    };
    if (integer("episodes") < 0) throw ConfigError("episodes", "must be >= 0");
    positive_int("horizon");
    positive_int("mppi.rollouts");
    positive_int("mppi.horizon");
    positive_int("features.count");
    positive_int("thompson.max_attempts");
    positive_int("reference_episodes");
    probability("delta");
    probability("delta_s");
    probability("eta");
    positive("lambda");
    positive("c1");
    positive("epsilon");
    positive("mppi.temperature");
    positive("features.bandwidth");
    nonnegative("nu");
    nonnegative("margin_scale");
    nonnegative("violation_tolerance");
    if (has("test_trials") && integer("test_trials") < 0) throw ConfigError("test_trials", "must be >= 0");
    if (has("init_samples") && integer("init_samples") < 0) throw ConfigError("init_samples", "must be >= 0");
    const std::string& e = text("env");
    if (e != "pendulum" && e != "unicycle" && e != "synthetic") {
      throw ConfigError("env", "unknown environment '" + e + "'");
    }
    if (has("features.kind")) {
      const std::string& k = text("features.kind");
      if (k != "control_affine" && k != "rff_state" && k != "rff_state_control" && k != "exact") {
        throw ConfigError("features.kind", "unknown feature kind '" + k + "'");
      }
    }
  }

  /// Canonical "key = value" lines in key order.
  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

  std::uint64_t hash() const { return detail::fnv1a(serialize()); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static double parse_real(const std::string& key, const std::string& s) {
    if (s.empty()) throw ConfigError(key, "empty value");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) throw ConfigError(key, "not a finite number: " + s);
    return v;
  }

  std::map<std::string, std::string> values_;
};

/// Everything a run needs, built from a validated config.
struct Experiment {
  Environment env;
  FeatureMap features;
  LearnerConfig learner;
  double epsilon = 0.1;
};

inline Experiment build_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment ex;
  const std::string env_id = cfg.text("env");
  const double eta = cfg.real_or("eta", 0.1);
  const double delta_s = cfg.real_or("delta_s", 0.05);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed"));

  std::string default_kind;
  if (env_id == "pendulum") {
    PendulumParams p;
    p.gravity = cfg.real_or("pendulum.gravity", p.gravity);
    p.dt = cfg.real_or("pendulum.dt", p.dt);
    p.mass = cfg.real_or("pendulum.mass", p.mass);
    p.length = cfg.real_or("pendulum.length", p.length);
    p.nominal_mass = cfg.real_or("pendulum.nominal_mass", p.nominal_mass);
    p.nominal_length = cfg.real_or("pendulum.nominal_length", p.nominal_length);
    p.max_torque = cfg.real_or("pendulum.max_torque", p.max_torque);
    p.disturbance = cfg.real_or("pendulum.disturbance", p.disturbance);
    p.theta_min = cfg.real_or("pendulum.theta_min", p.theta_min);
    p.theta_max = cfg.real_or("pendulum.theta_max", p.theta_max);
    if (cfg.has("noise.sigma")) {
      const Eigen::VectorXd s = cfg.vector("noise.sigma", 2);
      p.sigma_theta = s[0];
      p.sigma_rate = s[1];
    }
    if (cfg.has("x0")) {
      const Eigen::VectorXd x = cfg.vector("x0", 2);
      p.x0_theta = x[0];
      p.x0_rate = x[1];
    }
    ex.env = make_pendulum(p, eta, delta_s);
    default_kind = "control_affine";
  } else if (env_id == "unicycle") {
    UnicycleParams p;
    p.dt = cfg.real_or("unicycle.dt", p.dt);
    p.rect_wind = cfg.real_or("unicycle.rect_wind", p.rect_wind);
    p.wind_gain = cfg.real_or("unicycle.wind_gain", p.wind_gain);
    p.v_min = cfg.real_or("unicycle.v_min", p.v_min);
    p.v_max = cfg.real_or("unicycle.v_max", p.v_max);
    p.omega_max = cfg.real_or("unicycle.omega_max", p.omega_max);
    if (cfg.has("x0")) p.start = cfg.vector("x0", 3);
    if (cfg.has("unicycle.goal")) p.goal = cfg.vector("unicycle.goal", 2);
    if (cfg.has("unicycle.q")) p.q_diag = cfg.vector("unicycle.q", 2);
    if (cfg.has("unicycle.r")) p.r_diag = cfg.vector("unicycle.r", 2);
    if (cfg.has("noise.sigma")) {
      const Eigen::VectorXd s = cfg.vector("noise.sigma", 1);
      p.sigma = s[0];
    }
    p.obstacle = cfg.boolean_or("obstacle.enabled", false);
    if (cfg.has("obstacle.center")) p.obstacle_center = cfg.vector("obstacle.center", 2);
    p.obstacle_radius = cfg.real_or("obstacle.radius", p.obstacle_radius);
    if (cfg.has("init.lower")) p.init_lower = cfg.vector("init.lower", 2);
    if (cfg.has("init.upper")) p.init_upper = cfg.vector("init.upper", 2);
    ex.env = make_unicycle(p, eta, delta_s);
    default_kind = "rff_state";
  } else {
    SyntheticParams p;
    p.u_max = cfg.real_or("synthetic.u_max", p.u_max);
    if (cfg.has("noise.sigma")) p.sigma = cfg.vector("noise.sigma", 1)[0];
    if (cfg.has("x0")) p.x0 = cfg.vector("x0", 1)[0];
    if (cfg.has("synthetic.w_star")) p.w_star = cfg.vector("synthetic.w_star", 3);
    ex.env = make_synthetic_linear(p, eta, delta_s);
    default_kind = "exact";
  }
  Environment& env = ex.env;
  if (env_id == "pendulum") {
    if (cfg.has("init.lower")) env.init_box.lower = cfg.vector("init.lower", 2);
    if (cfg.has("init.upper")) env.init_box.upper = cfg.vector("init.upper", 2);
  }
  if ((env.init_box.upper.array() < env.init_box.lower.array()).any()) {
    throw ConfigError("init.upper", "must be >= init.lower");
  }
  if (ex.env.min_barrier(env.x0) < 0.0) throw ConfigError("x0", "initial state lies outside the safe set");

  // Features
  const std::string kind = cfg.text_or("features.kind", default_kind);
  const int count = static_cast<int>(cfg.integer_or("features.count", 20));
  const double bw = cfg.real_or("features.bandwidth", 1.0);
  Rng frng = seeded_rng(seed, "features");
  Eigen::VectorXd state_scale = Eigen::VectorXd::Ones(env.state_dim);
  if (cfg.has("features.state_scale")) state_scale = cfg.vector("features.state_scale", env.state_dim);
  if (kind == "exact") {
    if (!env.exact_features) throw ConfigError("features.kind", "environment has no exact features");
    ex.features = *env.exact_features;
  } else if (kind == "rff_state") {
    ex.features = build_rff(count, env.state_dim, env.control_dim, FeatureInput::state_only, bw, frng,
                            state_scale);
  } else if (kind == "rff_state_control") {
    Eigen::VectorXd scale(env.state_dim + env.control_dim);
    scale.head(env.state_dim) = state_scale;
    scale.tail(env.control_dim) = cfg.has("features.control_scale")
                                      ? cfg.vector("features.control_scale", env.control_dim)
                                      : Eigen::VectorXd(env.bounds.upper.cwiseAbs().cwiseMax(
                                                            env.bounds.lower.cwiseAbs()).cwiseInverse());
    ex.features = build_rff(count, env.state_dim, env.control_dim, FeatureInput::state_control, bw, frng,
                            scale);
  } else {
    ControlAffineFeatures f;
    f.state_part = build_rff(count, env.state_dim, env.control_dim, FeatureInput::state_only, bw, frng,
                             state_scale);
    f.control_scale = cfg.has("features.control_scale")
                          ? cfg.vector("features.control_scale", env.control_dim)
                          : Eigen::VectorXd(env.bounds.upper.cwiseAbs().cwiseMax(
                                                env.bounds.lower.cwiseAbs()).cwiseInverse());
    ex.features = f;
  }

  // Learner
  LearnerConfig& l = ex.learner;
  l.episodes = static_cast<int>(cfg.integer("episodes"));
  l.horizon = static_cast<int>(cfg.integer("horizon"));
  l.seed = seed;
  l.radius.lambda = cfg.real_or("lambda", 1.0);
  l.radius.c1 = cfg.real_or("c1", 10.0);
  l.radius.delta = cfg.real_or("delta", 0.05);
  l.radius.sigma_bar = env.noise.sigma_bar();
  l.nu = cfg.real_or("nu", 1.0);
  l.thompson_max_attempts = static_cast<int>(cfg.integer_or("thompson.max_attempts", 50));
  l.test_trials = static_cast<int>(cfg.integer_or("test_trials", 20));
  l.init_samples = static_cast<int>(cfg.integer_or("init_samples", 200));
  l.reference_episodes = static_cast<int>(cfg.integer_or("reference_episodes", 100));
  l.violation_tolerance = cfg.real_or("violation_tolerance", 0.05);
  l.random_init = cfg.boolean_or("random_init", false);
  l.margin_scale = cfg.real_or("margin_scale", 1.0);
  l.mppi.rollouts = static_cast<int>(cfg.integer_or("mppi.rollouts", 512));
  l.mppi.horizon = static_cast<int>(cfg.integer_or("mppi.horizon", std::min(l.horizon, 30)));
  l.mppi.temperature = cfg.real_or("mppi.temperature", 1.0);
  l.mppi.terminal_weight = cfg.real_or("mppi.terminal_weight", 1.0);
  l.mppi.exploration_std = cfg.has("mppi.exploration")
                               ? cfg.vector("mppi.exploration", env.control_dim)
                               : Eigen::VectorXd(0.3 * env.bounds.range() / 2.0);
  if ((l.mppi.exploration_std.array() <= 0.0).any()) {
    throw ConfigError("mppi.exploration", "must be positive");
  }
  ex.epsilon = cfg.real_or("epsilon", 0.1);
  return ex;
}

}  // namespace safe_ctrl
