#pragma once

#include "safe_ctrl/domain.hpp"

#include <functional>
#include <string>
#include <vector>

namespace safe_ctrl {

/// Axis-aligned state box used for Lipschitz estimates and initial sampling.
struct StateBox {
  StateVector lower;
  StateVector upper;

  bool contains(const StateVector& x) const {
    for (int i = 0; i < x.size(); ++i) {
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    }
    return true;
  }
};

/// Safety function h with safe set {x : h(x) >= 0} plus the constants of the
/// stochastic discrete-time barrier condition.
struct BarrierSpec {
  enum class Kind { affine, sphere, custom };

  std::string name;
  Kind kind = Kind::affine;
  // affine: h(x) = normal . x + offset
  StateVector normal;
  double offset = 0.0;
  // sphere: h(x) = ||x[idx] - center||^2 - radius^2
  std::vector<int> position_index;
  SmallVector center;
  double radius = 0.0;
  // custom
  std::function<double(const StateVector&)> h_fn;
  std::function<StateVector(const StateVector&)> grad_fn;

  double lipschitz = 1.0;  // L on the configured state box
  double eta = 0.1;        // decay rate in (0, 1)
  double delta_s = 0.05;   // safety confidence in (0, 1)

  bool affine() const { return kind == Kind::affine; }
  /// Convex h makes the first-order expansion a global under-estimator.
  bool convex() const { return kind != Kind::custom; }

  double value(const StateVector& x) const {
    switch (kind) {
      case Kind::affine:
        return normal.dot(x) + offset;
      case Kind::sphere: {
        double s = 0.0;
        for (std::size_t k = 0; k < position_index.size(); ++k) {
          const double d = x[position_index[k]] - center[static_cast<int>(k)];
          s += d * d;
        }
        return s - radius * radius;
      }
      case Kind::custom:
        return h_fn(x);
    }
    return 0.0;
  }

  StateVector gradient(const StateVector& x) const {
    switch (kind) {
      case Kind::affine:
        return normal;
      case Kind::sphere: {
        StateVector g = StateVector::Zero(x.size());
        for (std::size_t k = 0; k < position_index.size(); ++k) {
          const int i = position_index[k];
          g[i] = 2.0 * (x[i] - center[static_cast<int>(k)]);
        }
        return g;
      }
      case Kind::custom:
        return grad_fn(x);
    }
    return StateVector::Zero(x.size());
  }
};

inline BarrierSpec affine_barrier(std::string name, StateVector normal, double offset,
                                  double eta, double delta_s) {
  BarrierSpec b;
  b.name = std::move(name);
  b.kind = BarrierSpec::Kind::affine;
  b.lipschitz = normal.norm();
  b.normal = std::move(normal);
  b.offset = offset;
  b.eta = eta;
  b.delta_s = delta_s;
  return b;
}

/// Obstacle barrier ||p - c||^2 - r^2 over the listed position coordinates.
/// L is twice the largest gradient norm found on a grid over the box.
inline BarrierSpec sphere_barrier(std::string name, std::vector<int> position_index,
                                  SmallVector center, double radius, const StateBox& box,
                                  double eta, double delta_s, int grid = 41) {
  BarrierSpec b;
  b.name = std::move(name);
  b.kind = BarrierSpec::Kind::sphere;
  b.position_index = std::move(position_index);
  b.center = std::move(center);
  b.radius = radius;
  b.eta = eta;
  b.delta_s = delta_s;
  // Gradient norm is 2 ||p - c||, maximized at a box corner; the grid walk
  // keeps the estimate honest for any index set.
  double sup = 0.0;
  const int k = static_cast<int>(b.position_index.size());
  std::vector<int> idx(k, 0);
  while (true) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      const int i = b.position_index[j];
      const double p = box.lower[i] + (box.upper[i] - box.lower[i]) * idx[j] / (grid - 1);
      const double d = p - b.center[j];
      s += d * d;
    }
    sup = std::max(sup, 2.0 * std::sqrt(s));
    int j = 0;
    while (j < k && ++idx[j] == grid) idx[j++] = 0;
    if (j == k) break;
  }
  b.lipschitz = 2.0 * sup;
  return b;
}

/// a . u >= b
struct LinearConstraint {
  ControlVector a;
  double b = 0.0;

  double slack(const ControlVector& u) const { return a.dot(u) - b; }
  bool satisfied(const ControlVector& u, double tol = 0.0) const { return slack(u) >= -tol; }
};

/// L sigma_bar sqrt(2 n ln(H n / delta_s)): the amount h may lose to process
/// noise over an H-step episode with probability at most delta_s.
inline double noise_margin(double lipschitz, int n, int horizon, double sigma_bar,
                           double delta_s) {
  if (!(delta_s > 0.0 && delta_s < 1.0)) throw Fault("noise_margin: delta_s must lie in (0,1)");
  if (n < 1 || horizon < 1) throw Fault("noise_margin: n and H must be >= 1");
  if (sigma_bar == 0.0) return 0.0;
  const double hn = static_cast<double>(horizon) * n;
  return lipschitz * sigma_bar * std::sqrt(2.0 * n * std::log(hn / delta_s));
}

inline double noise_margin(const BarrierSpec& spec, int n, int horizon, double sigma_bar) {
  return noise_margin(spec.lipschitz, n, horizon, sigma_bar, spec.delta_s);
}

}  // namespace safe_ctrl
