#pragma once

#include "safe_ctrl/cbf.hpp"
#include "safe_ctrl/domain.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/features.hpp"

#include <Eigen/Eigenvalues>

#include <ostream>
#include <vector>

namespace safe_ctrl {

/// One observed transition (x, u, x').
struct Transition {
  StateVector x;
  ControlVector u;
  StateVector x_next;
};

/// Constants of the confidence radius
///   beta = sqrt(lambda) C1 + sigma_bar sqrt(8 n ln 5 + 8 r ln(1 + count/lambda) + 8 ln(1/delta)).
struct RadiusParams {
  double lambda = 1.0;
  double c1 = 1.0;
  double delta = 0.05;
  double sigma_bar = 0.0;
};

inline double confidence_radius(const RadiusParams& p, int n, int r, double count) {
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw Fault("beta: delta must lie in (0,1)");
  if (!(p.lambda > 0.0)) throw Fault("beta: lambda must be positive");
  const double inner = 8.0 * n * std::log(5.0) + 8.0 * r * std::log(1.0 + count / p.lambda) +
                       8.0 * std::log(1.0 / p.delta);
  return std::sqrt(p.lambda) * p.c1 + p.sigma_bar * std::sqrt(inner);
}

/// Episode-t radius; uses the total budget T H + N, so it is constant over t.
inline double beta_t(int /*t*/, int episodes, int horizon, int n_initial, const RadiusParams& p,
                     int n, int r) {
  return confidence_radius(p, n, r, static_cast<double>(episodes) * horizon + n_initial);
}

/// Spectral norm ||D S^{1/2}||_2 = sqrt(lambda_max(D S D^T)) for SPD S.
inline double weighted_spectral_norm(const Eigen::MatrixXd& d, const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd m = d * s * d.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

inline double spectral_norm(const Eigen::MatrixXd& w) {
  if (w.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w * w.transpose(), Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// {W : ||(W - center) S^{1/2}||_2 <= radius, ||W||_2 <= norm_cap}
struct ConfidenceBall {
  Eigen::MatrixXd center;
  Eigen::MatrixXd shape;
  double radius = 0.0;
  double norm_cap = std::numeric_limits<double>::infinity();

  bool in_ellipsoid(const Eigen::MatrixXd& w) const {
    return weighted_spectral_norm(w - center, shape) <= radius;
  }
  bool contains(const Eigen::MatrixXd& w) const {
    return spectral_norm(w) <= norm_cap && in_ellipsoid(w);
  }
};

/// Online ridge regression of the residual map W (n x r):
///   Sigma = lambda I + sum phi phi^T,  cross = sum y phi^T,  W_bar = cross Sigma^{-1}.
class ResidualModel {
 public:
  ResidualModel() = default;
  ResidualModel(int n, int r, double lambda) : n_(n), r_(r), lambda_(lambda) {
    if (!(lambda > 0.0)) throw Fault("ridge: lambda must be positive");
    sigma_ = lambda * Eigen::MatrixXd::Identity(r, r);
    cross_ = Eigen::MatrixXd::Zero(n, r);
    w_bar_ = Eigen::MatrixXd::Zero(n, r);
  }

  int state_dim() const { return n_; }
  int feature_dim() const { return r_; }
  double lambda() const { return lambda_; }
  long count() const { return count_; }
  const Eigen::MatrixXd& w_bar() const { return w_bar_; }
  const Eigen::MatrixXd& information() const { return sigma_; }
  const Eigen::MatrixXd& cross_moment() const { return cross_; }
  double beta() const { return beta_; }
  const ConfidenceBall& ball0() const { return ball0_; }

  /// Episode-t ellipsoid around the current estimate (without Ball_0).
  ConfidenceBall ellipsoid() const { return {w_bar_, sigma_, beta_, std::numeric_limits<double>::infinity()}; }

  /// Accumulates one regression pair without re-solving.
  void add(const Eigen::VectorXd& phi, const StateVector& y) {
    sigma_.noalias() += phi * phi.transpose();
    cross_.noalias() += y * phi.transpose();
    ++count_;
  }

  /// Re-solves the normal equations W Sigma = cross.
  void solve() {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
    if (llt.info() != Eigen::Success) throw Fault("ridge: information matrix not positive definite");
    w_bar_ = llt.solve(cross_.transpose()).transpose();
    sqrt_inv_valid_ = false;
  }

  void set_beta(double beta) { beta_ = beta; }

  /// Freezes the current estimate as Ball_0 with the given radius and norm cap.
  void freeze_ball0(double beta0, double c1) {
    ball0_ = {w_bar_, sigma_, beta0, c1};
    beta_ = beta0;
  }

  /// W in Ball_0 and in the episode-t ellipsoid.
  bool contains(const Eigen::MatrixXd& w) const {
    return ball0_.contains(w) && ellipsoid().in_ellipsoid(w);
  }

  /// Sigma^{-1/2} by symmetric eigendecomposition with eigenvalues floored at
  /// 1e-12 trace(Sigma).
  const Eigen::MatrixXd& inverse_sqrt_information() const {
    if (!sqrt_inv_valid_) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_);
      const double floor = 1e-12 * sigma_.trace();
      const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
      sqrt_inv_ = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      sqrt_inv_valid_ = true;
    }
    return sqrt_inv_;
  }

  void write(std::ostream& os) const {
    os.precision(17);
    os << "n " << n_ << "\nr " << r_ << "\nlambda " << lambda_ << "\ncount " << count_
       << "\nbeta " << beta_ << "\nbeta0 " << ball0_.radius << "\nc1 " << ball0_.norm_cap
       << "\nw_bar\n" << w_bar_ << "\ninformation\n" << sigma_ << "\n";
  }

 private:
  int n_ = 0;
  int r_ = 0;
  double lambda_ = 1.0;
  long count_ = 0;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd cross_;
  Eigen::MatrixXd w_bar_;
  double beta_ = 0.0;
  ConfidenceBall ball0_;
  mutable Eigen::MatrixXd sqrt_inv_;
  mutable bool sqrt_inv_valid_ = false;
};

/// Regression target y = x' - f(x, u).
inline StateVector residual_target(const Environment& env, const StateVector& x,
                                   const ControlVector& u, const StateVector& x_next) {
  return x_next - step_nominal(env, x, u);
}

/// Ridge fit on pre-collected data; records Ball_0 with radius computed from
/// the N initial samples.
inline ResidualModel fit_initial(const std::vector<Transition>& data, const Environment& env,
                                 const FeatureMap& features, const RadiusParams& radius) {
  if (!(radius.lambda > 0.0)) throw Fault("fit_initial: lambda must be positive");
  ResidualModel model(env.state_dim, features.dim(), radius.lambda);
  Eigen::VectorXd phi(features.dim());
  for (const auto& t : data) {
    features.eval_into(t.x, t.u, phi);
    model.add(phi, residual_target(env, t.x, t.u, t.x_next));
  }
  model.solve();
  const double beta0 = confidence_radius(radius, env.state_dim, features.dim(),
                                         static_cast<double>(data.size()));
  model.freeze_ball0(beta0, radius.c1);
  return model;
}

/// Adds one episode's transitions and re-solves.
inline void update(ResidualModel& model, const EpisodeTrace& trace, const Environment& env,
                   const FeatureMap& features) {
  if (trace.steps.empty()) return;
  Eigen::VectorXd phi(features.dim());
  for (const auto& s : trace.steps) {
    if (!s.x.allFinite() || !s.u.allFinite() || !s.x_next.allFinite()) {
      throw Fault("update: non-finite transition");
    }
    features.eval_into(s.x, s.u, phi);
    model.add(phi, residual_target(env, s.x, s.u, s.x_next));
  }
  model.solve();
}

inline bool ball_contains(const ResidualModel& model, const Eigen::MatrixXd& w) {
  if (!w.allFinite()) return false;
  return model.contains(w);
}

struct ThompsonDraw {
  Eigen::MatrixXd w;
  int attempts = 0;
  bool fallback = false;
};

/// Row-wise draws W[i] = W_bar[i] + scale Sigma^{-1/2} g, g ~ N(0, I), kept
/// only inside Ball_t. After max_attempts rejections returns W_bar scaled
/// into the Ball_0 norm cap and flags the fallback.
inline ThompsonDraw thompson_sample(const ResidualModel& model, double scale, Rng& rng,
                                    int max_attempts = 50) {
  if (max_attempts < 1) throw Fault("thompson_sample: max_attempts must be >= 1");
  const int n = model.state_dim();
  const int r = model.feature_dim();
  const Eigen::MatrixXd& root = model.inverse_sqrt_information();
  ThompsonDraw draw;
  Eigen::VectorXd g(r);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    Eigen::MatrixXd w = model.w_bar();
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < r; ++k) g[k] = rng.normal();
      if (scale != 0.0) w.row(i) += scale * (root * g).transpose();
    }
    draw.attempts = attempt;
    if (ball_contains(model, w)) {
      draw.w = std::move(w);
      return draw;
    }
  }
  draw.fallback = true;
  draw.w = model.w_bar();
  const double norm = spectral_norm(draw.w);
  const double cap = model.ball0().norm_cap;
  if (norm > cap && norm > 0.0) draw.w *= cap / norm;
  return draw;
}

}  // namespace safe_ctrl
