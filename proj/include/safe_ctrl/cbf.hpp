#pragma once

#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/envs.hpp"
#include "safe_ctrl/features.hpp"

#include <utility>

namespace safe_ctrl {

/// Predicted residual W phi(x, u). An empty W means "no residual".
inline StateVector predict_residual(const Eigen::MatrixXd& w, const FeatureMap& features,
                                    const StateVector& x, const ControlVector& u) {
  if (w.size() == 0) return StateVector::Zero(x.size());
  if (w.cols() != features.dim() || w.rows() != x.size()) {
    throw Fault("predict_residual: shape mismatch");
  }
  return w * features(x, u);
}

/// h(f(x, u) + d(x, u)) - margin >= (1 - eta) h(x), with the next-state
/// prediction supplied by the caller.
inline bool check_exact(const BarrierSpec& spec, const StateVector& x,
                        const StateVector& predicted_next, double margin) {
  return spec.value(predicted_next) - margin >= (1.0 - spec.eta) * spec.value(x);
}

inline bool check_exact(const BarrierSpec& spec, const Environment& env, const StateVector& x,
                        const ControlVector& u, const StateVector& d_pred, double margin) {
  return check_exact(spec, x, step_nominal(env, x, u, d_pred), margin);
}

/// Linear control constraint a.u >= b that implies the exact barrier
/// condition under the learned model W phi.
///
/// Lie derivatives are taken about the drift image y = F(x):
///   L_F h = h(y) - h(x),  L_G h = grad h(y)^T G(x),  Dh = grad h(y)^T.
/// The residual enters as the bound
///   |Dh W phi(x, u*)| + sum_i |(Dh W)_i| L_{x,phi,i} * sum_j (u+_j - u-_j)
/// which dominates -Dh W phi(x, u) for every u in the box. For control-affine
/// features phi = phi0(x) + J u the control part is folded into the row
/// (a = Dh (G + W J)) and only |Dh W phi0(x)| remains.
/// For convex h the expansion under-estimates h, so a.u >= b implies the
/// exact condition; for affine h and zero bound terms the two coincide.
inline LinearConstraint linearize(const BarrierSpec& spec, const Environment& env,
                                  const StateVector& x, const ControlVector& u_nominal,
                                  const FeatureMap& features, const Eigen::MatrixXd& w,
                                  double margin) {
  const StateVector y = env.drift(x);
  const StateVector grad = spec.gradient(y);
  const InputMatrix g = env.input_map(x);
  const double hx = spec.value(x);

  LinearConstraint c;
  c.a = (grad.transpose() * g).transpose();
  c.b = -spec.eta * hx + margin - (spec.value(y) - hx);
  if (w.size() == 0) return c;

  const Eigen::RowVectorXd coupling = grad.transpose() * w;  // Dh W, length r
  if (features.control_affine()) {
    const ControlVector zero = ControlVector::Zero(env.control_dim);
    const Eigen::VectorXd phi0 = features(x, zero);
    const Eigen::MatrixXd jac = features.control_jacobian(env.control_dim);
    c.a += (coupling * jac).transpose();
    c.b += std::abs(coupling.dot(phi0));
    return c;
  }

  const Eigen::VectorXd phi_nom = features(x, u_nominal);
  c.b += std::abs(coupling.dot(phi_nom));
  if (features.depends_on_control()) {
    const Eigen::VectorXd lphi = features.control_lipschitz(x);
    const double slope = coupling.cwiseAbs().dot(lphi);
    c.b += slope * env.bounds.range().sum();
  }
  return c;
}

/// Same construction with the true residual known exactly and assumed affine
/// in u: d(x, u) = d(x, 0) + D(x) u. Used by the ground-truth reference
/// controller.
inline LinearConstraint linearize_known(const BarrierSpec& spec, const Environment& env,
                                        const StateVector& x, double margin) {
  const StateVector y = env.drift(x);
  const StateVector grad = spec.gradient(y);
  InputMatrix g = env.input_map(x);
  const ControlVector zero = ControlVector::Zero(env.control_dim);
  const StateVector d0 = env.true_residual(x, zero);
  for (int j = 0; j < env.control_dim; ++j) {
    ControlVector e = zero;
    e[j] = 1.0;
    g.col(j) += env.true_residual(x, e) - d0;
  }
  const double hx = spec.value(x);
  LinearConstraint c;
  c.a = (grad.transpose() * g).transpose();
  c.b = -spec.eta * hx + margin - (spec.value(y) - hx) - grad.dot(d0);
  return c;
}

struct ImplicationResult {
  bool linear = false;
  bool exact = false;
};

/// Evaluates both the linearized and the exact condition at u under W.
inline ImplicationResult implication_check(const BarrierSpec& spec, const Environment& env,
                                           const StateVector& x, const ControlVector& u,
                                           const ControlVector& u_nominal,
                                           const FeatureMap& features,
                                           const Eigen::MatrixXd& w, double margin) {
  const LinearConstraint lin = linearize(spec, env, x, u_nominal, features, w, margin);
  const StateVector d = predict_residual(w, features, x, u);
  return {lin.satisfied(u), check_exact(spec, env, x, u, d, margin)};
}

}  // namespace safe_ctrl
