#include "safe_ctrl/filter.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace safe_ctrl;

namespace {

ControlBounds box1(double lo, double hi) {
  return {ControlVector::Constant(1, lo), ControlVector::Constant(1, hi)};
}

ControlBounds box2() {
  return {Eigen::Vector2d(-1.0, -2.0), Eigen::Vector2d(1.0, 1.0)};
}

LinearConstraint con(const ControlVector& a, double b) { return {a, b}; }

std::vector<LinearConstraint> random_constraints(Rng& rng, int m, int count) {
  std::vector<LinearConstraint> cons;
  for (int i = 0; i < count; ++i) {
    ControlVector a(m);
    for (int j = 0; j < m; ++j) a[j] = rng.uniform(-2.0, 2.0);
    cons.push_back({a, rng.uniform(-1.5, 1.5)});
  }
  return cons;
}

}  // namespace

TEST(ProjectSafe, FeasiblePointIsUnmodified) {
  const auto r = project_safe(ControlVector::Constant(1, 0.8), {con(ControlVector::Constant(1, 2.0), 1.0)},
                              box1(-1, 1));
  EXPECT_EQ(r.status, FilterStatus::unmodified);
  EXPECT_EQ(r.u[0], 0.8);
}

TEST(ProjectSafe, OneDimensionalKkt) {
  const auto r = project_safe(ControlVector::Constant(1, 0.0), {con(ControlVector::Constant(1, 2.0), 1.0)},
                              box1(-1, 1));
  EXPECT_EQ(r.status, FilterStatus::projected);
  EXPECT_NEAR(r.u[0], 0.5, 1e-15);
}

TEST(ProjectSafe, ImpossibleConstraintFallsBack) {
  const auto r = project_safe(ControlVector::Constant(1, 0.2), {con(ControlVector::Constant(1, 0.0), 1.0)},
                              box1(-1, 1));
  EXPECT_EQ(r.status, FilterStatus::infeasible_fallback);
  EXPECT_TRUE(box1(-1, 1).contains(r.u));
}

TEST(ProjectSafe, OutOfBoxNominalIsClipped) {
  const auto r = project_safe(ControlVector::Constant(1, 3.0), {}, box1(-1, 1));
  EXPECT_EQ(r.status, FilterStatus::projected);
  EXPECT_EQ(r.u[0], 1.0);
}

TEST(ProjectSafe, TwoDimensionalCornerCase) {
  // u1 + u2 >= 1.5 from the origin projects onto (0.75, 0.75), then the box
  // caps u2 at 0.5, so the optimum is (1, 0.5).
  ControlBounds b{Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(1.0, 0.5)};
  const auto r = project_safe(Eigen::Vector2d(0.0, 0.0), {con(Eigen::Vector2d(1.0, 1.0), 1.5)}, b);
  EXPECT_EQ(r.status, FilterStatus::projected);
  EXPECT_NEAR(r.u[0], 1.0, 1e-12);
  EXPECT_NEAR(r.u[1], 0.5, 1e-12);
}

TEST(Fallback, MonotoneMarginPicksBoxEnd) {
  EXPECT_NEAR(fallback_safest({con(ControlVector::Constant(1, 1.0), 5.0)}, box1(-1, 1))[0], 1.0, 1e-8);
  EXPECT_NEAR(fallback_safest({con(ControlVector::Constant(1, -1.0), 5.0)}, box1(-1, 1))[0], -1.0, 1e-8);
}

TEST(Fallback, SymmetricOpposingConstraints) {
  const ControlVector u = fallback_safest(
      {con(ControlVector::Constant(1, 1.0), 2.0), con(ControlVector::Constant(1, -1.0), 2.0)}, box1(-1, 1));
  EXPECT_NEAR(u[0], 0.0, 1e-8);
}

TEST(Fallback, MaximizesWorstMarginIn2d) {
  Rng rng = seeded_rng(0, "fallback");
  const ControlBounds b = box2();
  for (int t = 0; t < 200; ++t) {
    auto cons = random_constraints(rng, 2, 3);
    for (auto& c : cons) c.b += 3.0;  // mostly infeasible
    const ControlVector u = fallback_safest(cons, b);
    ASSERT_TRUE(b.contains(u, 1e-12));
    auto worst = [&](const ControlVector& v) {
      double w = 1e300;
      for (const auto& c : cons) w = std::min(w, c.slack(v));
      return w;
    };
    const double got = worst(u);
    for (int i = 0; i <= 40; ++i) {
      for (int j = 0; j <= 60; ++j) {
        const ControlVector v = Eigen::Vector2d(-1.0 + i * 0.05, -2.0 + j * 0.05);
        EXPECT_LE(worst(v), got + 1e-6);
      }
    }
  }
}

TEST(BruteForce, FeasibleNominalReturnsItself) {
  const auto u = brute_force_qp(ControlVector::Constant(1, 0.3), {}, box1(-1, 1), 0.1);
  ASSERT_TRUE(u.has_value());
  EXPECT_NEAR((*u)[0], 0.3, 1e-12);
}

TEST(BruteForce, InfeasibleAgreesWithSolver) {
  const std::vector<LinearConstraint> cons = {con(ControlVector::Constant(1, 1.0), 2.0)};
  EXPECT_FALSE(brute_force_qp(ControlVector::Zero(1), cons, box1(-1, 1), 0.01).has_value());
  EXPECT_FALSE(solve_projection(ControlVector::Zero(1), cons, box1(-1, 1)).has_value());
}

TEST(BruteForce, OracleMatchesSolverIn1d) {
  Rng rng = seeded_rng(1, "qp1");
  const ControlBounds b = box1(-1, 1);
  const double step = 1e-3;
  for (int t = 0; t < 1000; ++t) {
    const auto cons = random_constraints(rng, 1, 1 + t % 3);
    const ControlVector u_star = ControlVector::Constant(1, rng.uniform(-1.5, 1.5));
    const auto exact = solve_projection(u_star, cons, b);
    const auto grid = brute_force_qp(u_star, cons, b, step);
    if (!exact) {
      // An empty feasible set is empty on the grid too; a sliver thinner than
      // the step may be missed by the grid only.
      EXPECT_FALSE(grid.has_value());
      continue;
    }
    const auto r = project_safe(u_star, cons, b);
    EXPECT_NE(r.status, FilterStatus::infeasible_fallback);
    for (const auto& c : cons) EXPECT_GE(c.slack(r.u), -1e-9);
    if (grid) {
      EXPECT_NEAR(r.u[0], (*grid)[0], step);
      EXPECT_LE((r.u - u_star).norm(), (*grid - u_star).norm() + 1e-6);
    }
  }
}

TEST(BruteForce, OracleOptimalityIn2d) {
  Rng rng = seeded_rng(2, "qp2");
  const ControlBounds b = box2();
  const double step = 0.01;
  for (int t = 0; t < 300; ++t) {
    const auto cons = random_constraints(rng, 2, 1 + t % 3);
    const ControlVector u_star = Eigen::Vector2d(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 2.0));
    const auto r = project_safe(u_star, cons, b);
    const auto grid = brute_force_qp(u_star, cons, b, step);
    EXPECT_TRUE(b.contains(r.u, 1e-12));
    if (r.status == FilterStatus::infeasible_fallback) {
      EXPECT_FALSE(grid.has_value());
      continue;
    }
    for (const auto& c : cons) EXPECT_GE(c.slack(r.u), -1e-9);
    if (grid) { EXPECT_LE((r.u - u_star).norm(), (*grid - u_star).norm() + 1e-6); }
  }
}

TEST(ProjectSafe, Idempotent) {
  Rng rng = seeded_rng(3, "idem");
  const ControlBounds b = box2();
  for (int t = 0; t < 500; ++t) {
    const auto cons = random_constraints(rng, 2, 2);
    const ControlVector u_star = Eigen::Vector2d(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 2.0));
    const auto first = project_safe(u_star, cons, b);
    if (first.status == FilterStatus::infeasible_fallback) continue;
    const auto second = project_safe(first.u, cons, b);
    EXPECT_NEAR((second.u - first.u).norm(), 0.0, 1e-9);
  }
}

TEST(ProjectSafe, OutputAlwaysInsideBox) {
  Rng rng = seeded_rng(4, "box");
  const ControlBounds b = box2();
  for (int t = 0; t < 1000; ++t) {
    const auto cons = random_constraints(rng, 2, 1 + t % 4);
    const ControlVector u_star = Eigen::Vector2d(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
    EXPECT_TRUE(b.contains(project_safe(u_star, cons, b).u, 1e-12));
  }
}

TEST(ProjectSafe, DeterministicAcrossCalls) {
  Rng rng = seeded_rng(5, "det");
  const ControlBounds b = box2();
  for (int t = 0; t < 200; ++t) {
    const auto cons = random_constraints(rng, 2, 3);
    const ControlVector u_star = Eigen::Vector2d(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 2.0));
    const auto a = project_safe(u_star, cons, b);
    const auto c = project_safe(u_star, cons, b);
    EXPECT_EQ(a.u, c.u);
    EXPECT_EQ(a.status, c.status);
  }
}

TEST(ProjectSafe, SymmetricProjectionOntoDiagonal) {
  ControlBounds b{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 1.0)};
  const auto r = project_safe(Eigen::Vector2d(0.0, 0.0), {con(Eigen::Vector2d(1.0, 1.0), 1.0)}, b);
  EXPECT_NEAR(r.u[0], 0.5, 1e-12);
  EXPECT_NEAR(r.u[1], 0.5, 1e-12);
}
