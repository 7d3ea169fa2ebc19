#pragma once

#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/features.hpp"

#include <algorithm>
#include <limits>

namespace safe_ctrl {

inline constexpr double kRolloutSentinel = 1e12;

/// Deterministic mean dynamics used for planning: f(x, u) plus either nothing,
/// a learned W phi(x, u), or the true residual d*.
class PlanningModel {
 public:
  enum class Residual { none, learned, truth };

  PlanningModel() = default;

  static PlanningModel nominal(const Environment& env) { return PlanningModel(env, Residual::none); }
  static PlanningModel truth(const Environment& env) { return PlanningModel(env, Residual::truth); }
  static PlanningModel learned(const Environment& env, const FeatureMap& features,
                               Eigen::MatrixXd w) {
    PlanningModel m(env, Residual::learned);
    m.features_ = &features;
    m.w_ = std::move(w);
    m.phi_.resize(features.dim());
    return m;
  }

  const Environment& env() const { return *env_; }

  /// Next state; may be non-finite, callers check.
  StateVector next(const StateVector& x, const ControlVector& u) const {
    StateVector y = env_->drift(x) + env_->input_map(x) * u;
    switch (kind_) {
      case Residual::none:
        break;
      case Residual::truth:
        y += env_->true_residual(x, u);
        break;
      case Residual::learned:
        features_->eval_into(x, u, phi_);
        y.noalias() += w_ * phi_;
        break;
    }
    return y;
  }

 private:
  PlanningModel(const Environment& env, Residual kind) : env_(&env), kind_(kind) {}

  const Environment* env_ = nullptr;
  Residual kind_ = Residual::none;
  const FeatureMap* features_ = nullptr;
  Eigen::MatrixXd w_;
  mutable Eigen::VectorXd phi_;
};

struct RolloutResult {
  double cost = 0.0;
  bool finite = true;
};

/// sum_h c(x_h, u_h) + terminal_weight * c(x_H, 0) along the mean model.
/// `controls` is H_p x m. Non-finite states yield the sentinel cost.
inline RolloutResult rollout_cost(const PlanningModel& model, const CostFunction& cost,
                                  const StateVector& x0, const Eigen::MatrixXd& controls,
                                  double terminal_weight = 0.0) {
  RolloutResult res;
  StateVector x = x0;
  ControlVector u(controls.cols());
  for (int h = 0; h < controls.rows(); ++h) {
    u = controls.row(h).transpose();
    res.cost += cost(x, u);
    x = model.next(x, u);
    if (!x.allFinite()) return {kRolloutSentinel, false};
  }
  if (terminal_weight != 0.0) {
    res.cost += terminal_weight * cost(x, ControlVector::Zero(controls.cols()));
  }
  if (!std::isfinite(res.cost)) return {kRolloutSentinel, false};
  return res;
}

/// w_i proportional to exp(-(S_i - min S) / temperature), normalized.
inline Eigen::VectorXd mppi_weights(const Eigen::VectorXd& costs, double temperature) {
  if (costs.size() == 0) throw Fault("mppi_weights: empty cost vector");
  if (!(temperature > 0.0)) throw Fault("mppi_weights: temperature must be positive");
  const double lo = costs.minCoeff();
  // std::exp underflows to exactly 0; the vectorized exp clamps to a denormal.
  const Eigen::VectorXd w =
      costs.unaryExpr([&](double c) { return std::exp(-(c - lo) / temperature); });
  return w / w.sum();
}

struct MppiConfig {
  int rollouts = 512;
  int horizon = 30;
  double temperature = 1.0;
  Eigen::VectorXd exploration_std;  // per control dimension
  double terminal_weight = 1.0;

  void validate(int m) const {
    if (rollouts < 1) throw Fault("mppi: rollouts must be >= 1");
    if (horizon < 1) throw Fault("mppi: horizon must be >= 1");
    if (!(temperature > 0.0)) throw Fault("mppi: temperature must be positive");
    if (exploration_std.size() != m) throw Fault("mppi: exploration std has wrong length");
    if ((exploration_std.array() < 0.0).any()) throw Fault("mppi: exploration std must be >= 0");
  }
};

struct PlanStats {
  double best_cost = 0.0;
  double effective_samples = 0.0;
  bool all_nonfinite = false;
};

/// Sampling-based receding-horizon optimizer. Holds the warm-start sequence.
class MppiPlanner {
 public:
  MppiPlanner(MppiConfig cfg, ControlBounds bounds)
      : cfg_(std::move(cfg)), bounds_(std::move(bounds)) {
    cfg_.validate(bounds_.dim());
    reset();
  }

  /// Warm start back to zeros (clipped into the box).
  void reset() {
    nominal_ = Eigen::MatrixXd::Zero(cfg_.horizon, bounds_.dim());
    for (int h = 0; h < cfg_.horizon; ++h) {
      nominal_.row(h) = bounds_.clip(ControlVector::Zero(bounds_.dim())).transpose();
    }
  }

  const Eigen::MatrixXd& nominal() const { return nominal_; }
  const PlanStats& stats() const { return stats_; }
  const MppiConfig& config() const { return cfg_; }

  /// Perturbs the warm-start sequence with K clipped Gaussian rollouts,
  /// reweights, returns the first control and shifts the sequence by one.
  ControlVector plan_step(const StateVector& x, const PlanningModel& model,
                          const CostFunction& cost, Rng& rng) {
    const int k_roll = cfg_.rollouts;
    const int hp = cfg_.horizon;
    const int m = bounds_.dim();
    samples_.resize(static_cast<std::size_t>(k_roll));
    costs_.resize(k_roll);
    int finite = 0;
    for (int k = 0; k < k_roll; ++k) {
      Eigen::MatrixXd& seq = samples_[static_cast<std::size_t>(k)];
      seq.resize(hp, m);
      for (int h = 0; h < hp; ++h) {
        for (int j = 0; j < m; ++j) {
          const double v = nominal_(h, j) + cfg_.exploration_std[j] * rng.normal();
          seq(h, j) = std::clamp(v, bounds_.lower[j], bounds_.upper[j]);
        }
      }
      const RolloutResult r = rollout_cost(model, cost, x, seq, cfg_.terminal_weight);
      costs_[k] = r.cost;
      finite += r.finite ? 1 : 0;
    }
    stats_.all_nonfinite = finite == 0;
    if (stats_.all_nonfinite) {
      ControlVector u0 = nominal_.row(0).transpose();
      shift();
      return u0;
    }
    const Eigen::VectorXd w = mppi_weights(costs_, cfg_.temperature);
    stats_.best_cost = costs_.minCoeff();
    stats_.effective_samples = 1.0 / w.squaredNorm();
    nominal_.setZero();
    for (int k = 0; k < k_roll; ++k) nominal_ += w[k] * samples_[static_cast<std::size_t>(k)];
    ControlVector u0 = bounds_.clip(nominal_.row(0).transpose());
    shift();
    return u0;
  }

 private:
  void shift() {
    const int hp = cfg_.horizon;
    if (hp > 1) {
      nominal_.topRows(hp - 1) = nominal_.bottomRows(hp - 1).eval();
    }
  }

  MppiConfig cfg_;
  ControlBounds bounds_;
  Eigen::MatrixXd nominal_;
  std::vector<Eigen::MatrixXd> samples_;
  Eigen::VectorXd costs_;
  PlanStats stats_;
};

}  // namespace safe_ctrl
