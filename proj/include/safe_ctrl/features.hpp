#pragma once

#include "safe_ctrl/domain.hpp"

#include <functional>
#include <memory>
#include <numbers>
#include <ostream>
#include <variant>

namespace safe_ctrl {

enum class FeatureInput { state_only, state_control };

/// Random Fourier features phi_i(z) = sqrt(2/r) cos(omega_i . (s o z) + b_i),
/// where z = x or z = (x, u) and s is a fixed per-input scale.
struct RffMap {
  Eigen::MatrixXd omega;  // r x d_in
  Eigen::VectorXd phase;  // r, in [0, 2 pi)
  Eigen::VectorXd input_scale;  // d_in
  double bandwidth = 1.0;
  FeatureInput input = FeatureInput::state_only;
  int state_dim = 0;
  int control_dim = 0;

  int dim() const { return static_cast<int>(omega.rows()); }
  int input_dim() const { return static_cast<int>(omega.cols()); }

  void eval_into(const StateVector& x, const ControlVector& u,
                 Eigen::Ref<Eigen::VectorXd> out) const {
    if (x.size() != state_dim ||
        (input == FeatureInput::state_control && u.size() != control_dim)) {
      throw Fault("rff: input dimension mismatch");
    }
    const double amp = std::sqrt(2.0 / dim());
    SmallVector z(input_dim());
    z.head(state_dim) = x.cwiseProduct(input_scale.head(state_dim));
    if (input == FeatureInput::state_control) {
      z.tail(control_dim) = u.cwiseProduct(input_scale.tail(control_dim));
    }
    out.noalias() = omega * z;
    out = amp * (out + phase).array().cos().matrix();
  }

  Eigen::VectorXd eval(const StateVector& x, const ControlVector& u) const {
    Eigen::VectorXd out(dim());
    eval_into(x, u, out);
    return out;
  }

  /// Per-feature bound on |d phi_i / d u| in the l1 sense over any control
  /// range: sqrt(2/r) * ||omega_{i,u} o s_u||_1. Zero for state-only maps.
  Eigen::VectorXd control_lipschitz() const {
    Eigen::VectorXd l = Eigen::VectorXd::Zero(dim());
    if (input != FeatureInput::state_control) return l;
    const double amp = std::sqrt(2.0 / dim());
    for (int i = 0; i < dim(); ++i) {
      double s = 0.0;
      for (int j = 0; j < control_dim; ++j) {
        s += std::abs(omega(i, state_dim + j) * input_scale[state_dim + j]);
      }
      l[i] = amp * s;
    }
    return l;
  }
};

/// Draws omega ~ N(0, 1/bandwidth^2) entrywise and phase ~ U[0, 2 pi).
inline RffMap build_rff(int r, int state_dim, int control_dim, FeatureInput input,
                        double bandwidth, Rng& rng, Eigen::VectorXd input_scale = {}) {
  if (r < 1) throw Fault("rff: feature count must be >= 1");
  if (!(bandwidth > 0.0)) throw Fault("rff: bandwidth must be positive");
  RffMap map;
  map.bandwidth = bandwidth;
  map.input = input;
  map.state_dim = state_dim;
  map.control_dim = control_dim;
  const int d_in = state_dim + (input == FeatureInput::state_control ? control_dim : 0);
  if (input_scale.size() == 0) input_scale = Eigen::VectorXd::Ones(d_in);
  if (input_scale.size() != d_in) throw Fault("rff: input scale has wrong length");
  map.input_scale = std::move(input_scale);
  map.omega.resize(r, d_in);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < d_in; ++j) map.omega(i, j) = rng.normal() / bandwidth;
  }
  map.phase.resize(r);
  for (int i = 0; i < r; ++i) map.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return map;
}

/// phi(x, u) = [rff(x); u o control_scale]. The residual W phi is then affine
/// in u, so the learned control gain enters the barrier constraint exactly.
struct ControlAffineFeatures {
  RffMap state_part;  // state_only
  Eigen::VectorXd control_scale;

  int dim() const { return state_part.dim() + static_cast<int>(control_scale.size()); }

  void eval_into(const StateVector& x, const ControlVector& u,
                 Eigen::Ref<Eigen::VectorXd> out) const {
    const int rs = state_part.dim();
    if (u.size() != control_scale.size()) throw Fault("features: control dimension mismatch");
    state_part.eval_into(x, u, out.head(rs));
    out.tail(control_scale.size()) = u.cwiseProduct(control_scale);
  }
};

/// Caller-supplied state-only dictionary (e.g. monomials) so that a synthetic
/// residual is exactly representable.
struct FeatureDictionary {
  int size = 0;
  int state_dim = 0;
  std::function<void(const StateVector&, Eigen::Ref<Eigen::VectorXd>)> fn;
};

/// Type-erased feature map used by the model, the barrier linearization and
/// the planner.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(RffMap m) : impl_(std::move(m)) {}
  FeatureMap(ControlAffineFeatures m) : impl_(std::move(m)) {}
  FeatureMap(FeatureDictionary m) : impl_(std::move(m)) {}

  int dim() const {
    return std::visit([](const auto& m) -> int {
      using T = std::decay_t<decltype(m)>;
      if constexpr (std::is_same_v<T, FeatureDictionary>) return m.size;
      else return m.dim();
    }, impl_);
  }

  void eval_into(const StateVector& x, const ControlVector& u,
                 Eigen::Ref<Eigen::VectorXd> out) const {
    std::visit([&](const auto& m) {
      using T = std::decay_t<decltype(m)>;
      if constexpr (std::is_same_v<T, FeatureDictionary>) {
        if (x.size() != m.state_dim) throw Fault("dictionary: state dimension mismatch");
        m.fn(x, out);
      } else {
        m.eval_into(x, u, out);
      }
    }, impl_);
  }

  Eigen::VectorXd operator()(const StateVector& x, const ControlVector& u) const {
    Eigen::VectorXd out(dim());
    eval_into(x, u, out);
    return out;
  }

  /// True when phi(x, u) = phi(x, 0) + J(x) u.
  bool control_affine() const { return std::holds_alternative<ControlAffineFeatures>(impl_); }

  bool depends_on_control() const {
    if (const auto* r = std::get_if<RffMap>(&impl_)) {
      return r->input == FeatureInput::state_control;
    }
    return control_affine();
  }

  /// d phi / d u, r x m. Only meaningful for control-affine maps.
  Eigen::MatrixXd control_jacobian(int control_dim) const {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(dim(), control_dim);
    if (const auto* c = std::get_if<ControlAffineFeatures>(&impl_)) {
      const int rs = c->state_part.dim();
      for (int k = 0; k < control_dim; ++k) j(rs + k, k) = c->control_scale[k];
    }
    return j;
  }

  /// Local Lipschitz vector L_{x,phi} w.r.t. u used by the barrier
  /// linearization. Zero for state-only and control-affine maps (the latter
  /// are handled exactly through control_jacobian).
  Eigen::VectorXd control_lipschitz(const StateVector& /*x*/) const {
    if (const auto* r = std::get_if<RffMap>(&impl_)) return r->control_lipschitz();
    return Eigen::VectorXd::Zero(dim());
  }

  const RffMap* rff() const {
    if (const auto* r = std::get_if<RffMap>(&impl_)) return r;
    if (const auto* c = std::get_if<ControlAffineFeatures>(&impl_)) return &c->state_part;
    return nullptr;
  }

 private:
  std::variant<RffMap, ControlAffineFeatures, FeatureDictionary> impl_;
};

/// Writes omega, phase and scales so a run can be replayed exactly.
inline void write_features(std::ostream& os, const FeatureMap& map) {
  os.precision(17);
  os << "dim " << map.dim() << "\n";
  if (const RffMap* r = map.rff()) {
    os << "rff_rows " << r->omega.rows() << " cols " << r->omega.cols() << "\n";
    os << "bandwidth " << r->bandwidth << "\n";
    os << "omega\n" << r->omega << "\n";
    os << "phase\n" << r->phase.transpose() << "\n";
    os << "input_scale\n" << r->input_scale.transpose() << "\n";
  }
}

}  // namespace safe_ctrl
