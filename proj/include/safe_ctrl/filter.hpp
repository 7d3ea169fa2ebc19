#pragma once

#include "safe_ctrl/barrier.hpp"
#include "safe_ctrl/domain.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace safe_ctrl {

enum class FilterStatus { unmodified, projected, infeasible_fallback };

struct FilterResult {
  ControlVector u;
  FilterStatus status = FilterStatus::unmodified;
};

inline constexpr double kFeasibilityTol = 1e-9;

namespace detail {

// Half-space rows g.u >= c covering the linear constraints and the box faces.
struct HalfSpaces {
  std::vector<ControlVector> normal;
  std::vector<double> rhs;
};

inline HalfSpaces collect(const std::vector<LinearConstraint>& cons, const ControlBounds& box) {
  HalfSpaces hs;
  const int m = box.dim();
  for (const auto& c : cons) {
    hs.normal.push_back(c.a);
    hs.rhs.push_back(c.b);
  }
  for (int j = 0; j < m; ++j) {
    ControlVector e = ControlVector::Zero(m);
    e[j] = 1.0;
    hs.normal.push_back(e);
    hs.rhs.push_back(box.lower[j]);
    hs.normal.push_back(-e);
    hs.rhs.push_back(-box.upper[j]);
  }
  return hs;
}

inline bool feasible(const HalfSpaces& hs, const ControlVector& u, double tol) {
  for (std::size_t i = 0; i < hs.normal.size(); ++i) {
    if (hs.normal[i].dot(u) - hs.rhs[i] < -tol) return false;
  }
  return true;
}

inline bool lex_less(const ControlVector& a, const ControlVector& b) {
  for (int j = 0; j < a.size(); ++j) {
    if (a[j] != b[j]) return a[j] < b[j];
  }
  return false;
}

// Calls fn(subset) for every subset of {0..n-1} with size <= k.
template <typename Fn>
void for_each_subset(int n, int k, Fn&& fn) {
  std::vector<int> subset;
  auto rec = [&](auto&& self, int start) -> void {
    fn(subset);
    if (static_cast<int>(subset.size()) == k) return;
    for (int i = start; i < n; ++i) {
      subset.push_back(i);
      self(self, i + 1);
      subset.pop_back();
    }
  };
  rec(rec, 0);
}

}  // namespace detail

/// argmin ||u - u*||^2 s.t. a_i.u >= b_i and lower <= u <= upper, by
/// enumerating active sets of linearly independent rows (at most m of them).
/// Exact for the handful of constraints a barrier filter produces. Returns
/// nullopt when no feasible point exists.
inline std::optional<ControlVector> solve_projection(const ControlVector& u_star,
                                                     const std::vector<LinearConstraint>& cons,
                                                     const ControlBounds& box,
                                                     double tol = kFeasibilityTol) {
  const auto hs = detail::collect(cons, box);
  const int m = box.dim();
  const int rows = static_cast<int>(hs.normal.size());
  std::optional<ControlVector> best;
  double best_d = std::numeric_limits<double>::infinity();

  detail::for_each_subset(rows, m, [&](const std::vector<int>& act) {
    ControlVector u = u_star;
    if (!act.empty()) {
      const int k = static_cast<int>(act.size());
      Eigen::MatrixXd a(k, m);
      Eigen::VectorXd r(k);
      for (int i = 0; i < k; ++i) {
        a.row(i) = hs.normal[act[i]].transpose();
        r[i] = hs.rhs[act[i]];
      }
      const Eigen::MatrixXd gram = a * a.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      lu.setThreshold(1e-12);
      if (lu.rank() < k) return;
      const Eigen::VectorXd mult = lu.solve(r - a * u_star);
      u = u_star + a.transpose() * mult;
    }
    if (!detail::feasible(hs, u, tol)) return;
    const double d = (u - u_star).squaredNorm();
    if (!best || d < best_d - 1e-15 || (std::abs(d - best_d) <= 1e-15 && detail::lex_less(u, *best))) {
      best = u;
      best_d = d;
    }
  });
  return best;
}

/// argmax over the box of min_i (a_i.u - b_i); the maximizer closest to the
/// box-clipped u* is returned. Vertex enumeration of the LP in (u, t).
inline ControlVector fallback_safest(const std::vector<LinearConstraint>& cons,
                                     const ControlBounds& box,
                                     const std::optional<ControlVector>& u_star = std::nullopt) {
  const int m = box.dim();
  const ControlVector anchor = box.clip(u_star.value_or(ControlVector::Zero(m)));
  if (cons.empty()) return anchor;

  // Rows over (u, t): a_i.u - t >= b_i, u_j >= lo_j, -u_j >= -hi_j.
  std::vector<Eigen::VectorXd> g;
  std::vector<double> c;
  for (const auto& con : cons) {
    Eigen::VectorXd row(m + 1);
    row.head(m) = con.a;
    row[m] = -1.0;
    g.push_back(row);
    c.push_back(con.b);
  }
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(m + 1);
    row[j] = 1.0;
    g.push_back(row);
    c.push_back(box.lower[j]);
    row[j] = -1.0;
    g.push_back(row);
    c.push_back(-box.upper[j]);
  }
  const int rows = static_cast<int>(g.size());
  double best_t = -std::numeric_limits<double>::infinity();
  std::vector<int> subset;
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(subset.size()) == m + 1) {
      Eigen::MatrixXd a(m + 1, m + 1);
      Eigen::VectorXd r(m + 1);
      for (int i = 0; i <= m; ++i) {
        a.row(i) = g[subset[i]].transpose();
        r[i] = c[subset[i]];
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      lu.setThreshold(1e-12);
      if (!lu.isInvertible()) return;
      const Eigen::VectorXd z = lu.solve(r);
      for (int i = 0; i < rows; ++i) {
        if (g[i].dot(z) - c[i] < -kFeasibilityTol) return;
      }
      best_t = std::max(best_t, z[m]);
      return;
    }
    for (int i = start; i < rows; ++i) {
      subset.push_back(i);
      self(self, i + 1);
      subset.pop_back();
    }
  };
  rec(rec, 0);

  if (!std::isfinite(best_t)) {
    // Degenerate rows (all a_i = 0): every box point attains the same margin.
    best_t = std::numeric_limits<double>::infinity();
    for (const auto& con : cons) best_t = std::min(best_t, -con.b);
  }
  // Project onto the optimal face {a_i.u - b_i >= t*}.
  std::vector<LinearConstraint> face = cons;
  for (auto& f : face) f.b += best_t - 1e-9;
  if (auto u = solve_projection(anchor, face, box, 1e-8)) return box.clip(*u);
  return anchor;
}

/// Minimally invasive safety projection of a nominal control.
inline FilterResult project_safe(const ControlVector& u_star,
                                 const std::vector<LinearConstraint>& cons,
                                 const ControlBounds& box) {
  const auto hs = detail::collect(cons, box);
  if (detail::feasible(hs, u_star, 1e-12)) return {u_star, FilterStatus::unmodified};
  if (auto u = solve_projection(u_star, cons, box)) {
    return {box.clip(*u), FilterStatus::projected};
  }
  return {fallback_safest(cons, box, u_star), FilterStatus::infeasible_fallback};
}

/// Exhaustive grid search used as an independent check of project_safe (m <= 2).
inline std::optional<ControlVector> brute_force_qp(const ControlVector& u_star,
                                                   const std::vector<LinearConstraint>& cons,
                                                   const ControlBounds& box, double step) {
  const int m = box.dim();
  if (m > 2) throw Fault("brute_force_qp: oracle supports m <= 2");
  std::vector<int> counts(m);
  for (int j = 0; j < m; ++j) {
    counts[j] = static_cast<int>(std::floor((box.upper[j] - box.lower[j]) / step + 1e-9)) + 1;
  }
  std::optional<ControlVector> best;
  double best_d = std::numeric_limits<double>::infinity();
  const int n1 = m == 2 ? counts[1] : 1;
  ControlVector u(m);
  for (int i0 = 0; i0 < counts[0]; ++i0) {
    for (int i1 = 0; i1 < n1; ++i1) {
      u[0] = std::min(box.lower[0] + i0 * step, box.upper[0]);
      if (m == 2) u[1] = std::min(box.lower[1] + i1 * step, box.upper[1]);
      bool ok = true;
      for (const auto& c : cons) {
        if (!c.satisfied(u, 1e-12)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      const double d = (u - u_star).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = u;
      }
    }
  }
  return best;
}

}  // namespace safe_ctrl
