#pragma once

#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/features.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace safe_ctrl {

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  double w = std::fmod(a + pi, 2.0 * pi);
  if (w <= 0.0) w += 2.0 * pi;
  return w - pi;
}

/// Immediate cost c(x, u) >= 0.
struct CostFunction {
  enum class Kind { zero, quadratic, pendulum };

  Kind kind = Kind::zero;
  // quadratic: (x[idx] - goal)^T diag(q) (x[idx] - goal) + u^T diag(r) u
  std::vector<int> state_index;
  SmallVector goal;
  SmallVector q_diag;
  SmallVector r_diag;
  // pendulum: wrap(theta)^2 + w_rate thetadot^2 + w_u u^2
  double rate_weight = 0.1;
  double control_weight = 0.001;

  double operator()(const StateVector& x, const ControlVector& u) const {
    switch (kind) {
      case Kind::zero:
        return 0.0;
      case Kind::quadratic: {
        double c = 0.0;
        for (std::size_t k = 0; k < state_index.size(); ++k) {
          const int kk = static_cast<int>(k);
          const double e = x[state_index[k]] - goal[kk];
          c += q_diag[kk] * e * e;
        }
        for (int j = 0; j < u.size(); ++j) c += r_diag[j] * u[j] * u[j];
        return c;
      }
      case Kind::pendulum: {
        const double th = wrap_angle(x[0]);
        return th * th + rate_weight * x[1] * x[1] + control_weight * u[0] * u[0];
      }
    }
    return 0.0;
  }
};

/// Known control-affine nominal model x' = F(x) + G(x) u, the hidden residual
/// d*(x, u), noise, cost and safe set of one task.
struct Environment {
  std::string id;
  int state_dim = 0;
  int control_dim = 0;
  double dt = 0.0;
  ControlBounds bounds;
  NoiseSpec noise;
  StateBox box;       // domain for Lipschitz estimates
  StateBox init_box;  // initial-data and random-start region
  StateVector x0;
  int angle_index = -1;  // coordinate reported as theta in summaries

  std::function<StateVector(const StateVector&)> drift;
  std::function<InputMatrix(const StateVector&)> input_map;
  std::function<StateVector(const StateVector&, const ControlVector&)> residual;  // d*
  /// Exact feature representation of d*, when one exists.
  std::optional<FeatureMap> exact_features;
  Eigen::MatrixXd exact_weights;

  CostFunction cost;
  std::vector<BarrierSpec> barriers;

  StateVector true_residual(const StateVector& x, const ControlVector& u) const {
    if (!residual) return StateVector::Zero(state_dim);
    return residual(x, u);
  }

  double min_barrier(const StateVector& x) const {
    double h = std::numeric_limits<double>::infinity();
    for (const auto& b : barriers) h = std::min(h, b.value(x));
    return h;
  }
};

namespace detail {

inline void check_state(const Environment& env, const StateVector& x, const ControlVector& u,
                        const char* where) {
  if (x.size() != env.state_dim || u.size() != env.control_dim) {
    throw Fault(std::string(where) + ": dimension mismatch");
  }
}

inline void check_finite(const StateVector& x, const char* where) {
  if (!x.allFinite()) {
    std::ostringstream os;
    os << where << ": non-finite state [" << x.transpose() << "]";
    throw Fault(os.str());
  }
}

}  // namespace detail

/// F(x) + G(x) u + d_pred. Deterministic.
inline StateVector step_nominal(const Environment& env, const StateVector& x,
                                const ControlVector& u, const StateVector& d_pred) {
  detail::check_state(env, x, u, "step_nominal");
  StateVector next = env.drift(x) + env.input_map(x) * u + d_pred;
  detail::check_finite(next, "step_nominal");
  return next;
}

inline StateVector step_nominal(const Environment& env, const StateVector& x,
                                const ControlVector& u) {
  return step_nominal(env, x, u, StateVector::Zero(env.state_dim));
}

/// F(x) + G(x) u + d*(x, u) + eps with eps ~ N(0, diag(sigma^2)).
inline StateVector step_true(const Environment& env, const StateVector& x,
                             const ControlVector& u, Rng& rng) {
  detail::check_state(env, x, u, "step_true");
  StateVector next = env.drift(x) + env.input_map(x) * u + env.true_residual(x, u);
  if (env.noise.sigma_bar() > 0.0) next += sample_gaussian_noise(env.noise, rng);
  detail::check_finite(next, "step_true");
  return next;
}

inline double immediate_cost(const Environment& env, const StateVector& x, const ControlVector& u) {
  return env.cost(x, u);
}

inline const std::vector<BarrierSpec>& safe_set_spec(const Environment& env) {
  return env.barriers;
}

// ---------------------------------------------------------------------------
// Inverted pendulum
// ---------------------------------------------------------------------------

struct PendulumParams {
  double gravity = 10.0;
  double dt = 0.05;
  double mass = 1.0;
  double length = 1.0;
  double nominal_mass = 1.8;
  double nominal_length = 1.8;
  double max_torque = 15.0;
  double disturbance = 0.05;  // amplitude of the additive cos(theta - 3) term
  double theta_min = -std::numbers::pi / 8.0;
  double theta_max = 5.0 * std::numbers::pi / 4.0;
  double sigma_theta = 0.005;
  double sigma_rate = 0.005;
  double x0_theta = std::numbers::pi;
  double x0_rate = 0.0;
  double max_rate = 8.0;  // state box half-width in theta-dot
};

/// Pendulum with theta = 0 upright:
///   thetadot' = thetadot + (3g / 2l) sin(theta) dt + 3 / (m l^2) u dt
///   theta'    = theta + thetadot' dt + a cos(theta - 3)
/// The learner's nominal model uses (m', l') in place of (m, l) in the
/// gravity term and m' in the input gain, and knows nothing of the cos term.
/// Safety is theta in [theta_min, theta_max], enforced as two affine barriers.
/// The barriers have relative degree one in both models (u moves theta' through
/// thetadot'), which discharges the nominal-to-true validity requirement.
inline Environment make_pendulum(const PendulumParams& p, double eta, double delta_s) {
  Environment env;
  env.id = "pendulum";
  env.state_dim = 2;
  env.control_dim = 1;
  env.dt = p.dt;
  env.bounds.lower = ControlVector::Constant(1, -p.max_torque);
  env.bounds.upper = ControlVector::Constant(1, p.max_torque);
  env.noise.sigmas = Eigen::Vector2d(p.sigma_theta, p.sigma_rate);
  env.box.lower = StateVector(2);
  env.box.lower << p.theta_min - 0.5, -p.max_rate;
  env.box.upper = StateVector(2);
  env.box.upper << p.theta_max + 0.5, p.max_rate;
  env.init_box.lower = StateVector(2);
  env.init_box.lower << p.theta_min, -p.max_rate / 2;
  env.init_box.upper = StateVector(2);
  env.init_box.upper << p.theta_max, p.max_rate / 2;
  env.x0 = StateVector(2);
  env.x0 << p.x0_theta, p.x0_rate;
  env.angle_index = 0;

  const double dt = p.dt;
  const double grav_nom = 3.0 * p.gravity / (2.0 * p.nominal_length);
  const double gain_nom = 3.0 / (p.nominal_mass * p.length * p.length);
  const double grav_true = 3.0 * p.gravity / (2.0 * p.length);
  const double gain_true = 3.0 / (p.mass * p.length * p.length);
  const double dist = p.disturbance;

  env.drift = [=](const StateVector& x) {
    StateVector f(2);
    const double rate = x[1] + grav_nom * std::sin(x[0]) * dt;
    f << x[0] + rate * dt, rate;
    return f;
  };
  env.input_map = [=](const StateVector&) {
    InputMatrix g(2, 1);
    g << gain_nom * dt * dt, gain_nom * dt;
    return g;
  };
  env.residual = [=](const StateVector& x, const ControlVector& u) {
    const double d_rate =
        (grav_true - grav_nom) * std::sin(x[0]) * dt + (gain_true - gain_nom) * u[0] * dt;
    StateVector d(2);
    d << d_rate * dt + dist * std::cos(x[0] - 3.0), d_rate;
    return d;
  };

  env.cost.kind = CostFunction::Kind::pendulum;

  StateVector lo(2), hi(2);
  lo << 1.0, 0.0;
  hi << -1.0, 0.0;
  env.barriers.push_back(affine_barrier("theta_min", lo, -p.theta_min, eta, delta_s));
  env.barriers.push_back(affine_barrier("theta_max", hi, p.theta_max, eta, delta_s));
  return env;
}

// ---------------------------------------------------------------------------
// Unicycle in a wind field
// ---------------------------------------------------------------------------

struct UnicycleParams {
  double dt = 0.1;
  double rect_wind = 1.5;  // east-pointing wind speed inside the rectangle
  double wind_gain = 0.1;  // displacement per unit wind per step
  double v_min = -0.5;
  double v_max = 2.0;
  double omega_max = 2.0;
  SmallVector start = SmallVector::Zero(3);
  SmallVector goal = SmallVector::Zero(2);
  SmallVector q_diag = SmallVector::Ones(2);
  SmallVector r_diag = SmallVector::Constant(2, 0.01);
  double sigma = 0.002;
  bool obstacle = false;
  SmallVector obstacle_center = SmallVector::Zero(2);
  double obstacle_radius = 0.5;
  SmallVector box_lower = SmallVector::Constant(2, -6.0);
  SmallVector box_upper = SmallVector::Constant(2, 6.0);
  SmallVector init_lower = SmallVector::Constant(2, -4.0);
  SmallVector init_upper = SmallVector::Constant(2, 4.0);
};

/// d*(p) = [cos(p1 - 4)(p2 - 3), sin(p1 - 4)(p2 - 3)], replaced by a uniform
/// east wind of speed `rect_wind` on [-2, 3] x [-2.6, -0.2].
inline Eigen::Vector2d wind_field(const Eigen::Vector2d& p, double rect_wind = 1.5) {
  if (p[0] >= -2.0 && p[0] <= 3.0 && p[1] >= -2.6 && p[1] <= -0.2) {
    return {rect_wind, 0.0};
  }
  const double s = p[1] - 3.0;
  return {std::cos(p[0] - 4.0) * s, std::sin(p[0] - 4.0) * s};
}

/// State (p1, p2, heading), control (v, omega), forward Euler kinematics.
/// Wind displaces the position only, so d* depends on the state alone.
inline Environment make_unicycle(const UnicycleParams& p, double eta, double delta_s) {
  Environment env;
  env.id = p.obstacle ? "unicycle-obstacle" : "unicycle";
  env.state_dim = 3;
  env.control_dim = 2;
  env.dt = p.dt;
  env.bounds.lower = ControlVector(2);
  env.bounds.lower << p.v_min, -p.omega_max;
  env.bounds.upper = ControlVector(2);
  env.bounds.upper << p.v_max, p.omega_max;
  env.noise.sigmas = Eigen::Vector3d(p.sigma, p.sigma, p.sigma);
  env.box.lower = StateVector(3);
  env.box.lower << p.box_lower[0], p.box_lower[1], -std::numbers::pi;
  env.box.upper = StateVector(3);
  env.box.upper << p.box_upper[0], p.box_upper[1], std::numbers::pi;
  env.init_box.lower = StateVector(3);
  env.init_box.lower << p.init_lower[0], p.init_lower[1], -std::numbers::pi;
  env.init_box.upper = StateVector(3);
  env.init_box.upper << p.init_upper[0], p.init_upper[1], std::numbers::pi;
  env.x0 = p.start;
  env.angle_index = 2;

  const double dt = p.dt;
  const double gain = p.wind_gain;
  const double rect = p.rect_wind;
  env.drift = [](const StateVector& x) { return x; };
  env.input_map = [=](const StateVector& x) {
    InputMatrix g(3, 2);
    g << std::cos(x[2]) * dt, 0.0, std::sin(x[2]) * dt, 0.0, 0.0, dt;
    return g;
  };
  env.residual = [=](const StateVector& x, const ControlVector&) {
    const Eigen::Vector2d w = wind_field(Eigen::Vector2d(x[0], x[1]), rect);
    StateVector d(3);
    d << gain * w[0], gain * w[1], 0.0;
    return d;
  };

  env.cost.kind = CostFunction::Kind::quadratic;
  env.cost.state_index = {0, 1};
  env.cost.goal = p.goal;
  env.cost.q_diag = p.q_diag;
  env.cost.r_diag = p.r_diag;

  if (p.obstacle) {
    env.barriers.push_back(sphere_barrier("obstacle", {0, 1}, p.obstacle_center,
                                          p.obstacle_radius, env.box, eta, delta_s));
  }
  return env;
}

// ---------------------------------------------------------------------------
// Synthetic scalar system for oracle tests
// ---------------------------------------------------------------------------

struct SyntheticParams {
  double u_max = 1.0;
  double sigma = 0.1;
  double x0 = 1.0;
  double goal = 0.0;
  SmallVector w_star = (SmallVector(3) << -0.05, 0.1, 0.05).finished();
};

/// Dictionary [1, sin x, cos x] for the scalar synthetic system.
inline FeatureDictionary synthetic_dictionary() {
  FeatureDictionary d;
  d.size = 3;
  d.state_dim = 1;
  d.fn = [](const StateVector& x, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = 1.0;
    out[1] = std::sin(x[0]);
    out[2] = std::cos(x[0]);
  };
  return d;
}

/// x' = x + u + W* [1, sin x, cos x] + eps, safe set x >= 0 (h(x) = x, L = 1).
inline Environment make_synthetic_linear(const SyntheticParams& p, double eta, double delta_s) {
  Environment env;
  env.id = "synthetic-linear";
  env.state_dim = 1;
  env.control_dim = 1;
  env.dt = 1.0;
  env.bounds.lower = ControlVector::Constant(1, -p.u_max);
  env.bounds.upper = ControlVector::Constant(1, p.u_max);
  env.noise.sigmas = Eigen::VectorXd::Constant(1, p.sigma);
  env.box.lower = StateVector::Constant(1, -5.0);
  env.box.upper = StateVector::Constant(1, 5.0);
  env.init_box.lower = StateVector::Constant(1, 0.0);
  env.init_box.upper = StateVector::Constant(1, 3.0);
  env.x0 = StateVector::Constant(1, p.x0);

  env.drift = [](const StateVector& x) { return x; };
  env.input_map = [](const StateVector&) { return InputMatrix::Ones(1, 1); };
  FeatureMap dict(synthetic_dictionary());
  Eigen::MatrixXd w = p.w_star.transpose();
  env.exact_features = dict;
  env.exact_weights = w;
  env.residual = [dict, w](const StateVector& x, const ControlVector& u) {
    StateVector d = w * dict(x, u);
    return d;
  };

  env.cost.kind = CostFunction::Kind::quadratic;
  env.cost.state_index = {0};
  env.cost.goal = SmallVector::Constant(1, p.goal);
  env.cost.q_diag = SmallVector::Ones(1);
  env.cost.r_diag = SmallVector::Constant(1, 0.1);

  env.barriers.push_back(
      affine_barrier("x_nonneg", StateVector::Ones(1), 0.0, eta, delta_s));
  return env;
}

}  // namespace safe_ctrl
