#include "safe_ctrl/cbf.hpp"
#include "safe_ctrl/filter.hpp"
#include "safe_ctrl/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace safe_ctrl;

namespace {

// x' = x + u, h(x) = x.
Environment integrator(double eta, double sigma = 0.0) {
  SyntheticParams p;
  p.sigma = sigma;
  p.w_star = SmallVector::Zero(3);
  return make_synthetic_linear(p, eta, 0.05);
}

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale) {
  Eigen::MatrixXd w(rows, cols);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-scale, scale);
  return w;
}

}  // namespace

TEST(NoiseMargin, ZeroNoiseGivesZero) {
  EXPECT_EQ(noise_margin(1.0, 2, 100, 0.0, 0.05), 0.0);
}

TEST(NoiseMargin, ClosedFormExample) {
  EXPECT_NEAR(noise_margin(1.0, 2, 100, 0.1, 0.05), 0.1 * std::sqrt(4.0 * std::log(4000.0)), 1e-15);
  EXPECT_NEAR(noise_margin(1.0, 2, 100, 0.1, 0.05), 0.57599, 1e-5);
}

TEST(NoiseMargin, LinearInLipschitz) {
  EXPECT_DOUBLE_EQ(noise_margin(2.0, 2, 100, 0.1, 0.05), 2.0 * noise_margin(1.0, 2, 100, 0.1, 0.05));
}

TEST(NoiseMargin, MonotoneOnGrid) {
  const double ls[] = {0.5, 1.0, 2.0};
  const int ns[] = {1, 2, 3};
  const int hs[] = {1, 10, 100};
  const double sigmas[] = {0.01, 0.1, 1.0};
  const double deltas[] = {0.2, 0.05, 0.01};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d)
          for (int e = 0; e < 3; ++e) {
            const double m = noise_margin(ls[a], ns[b], hs[c], sigmas[d], deltas[e]);
            if (a < 2) { EXPECT_LE(m, noise_margin(ls[a + 1], ns[b], hs[c], sigmas[d], deltas[e])); }
            if (b < 2) { EXPECT_LE(m, noise_margin(ls[a], ns[b + 1], hs[c], sigmas[d], deltas[e])); }
            if (c < 2) { EXPECT_LE(m, noise_margin(ls[a], ns[b], hs[c + 1], sigmas[d], deltas[e])); }
            if (d < 2) { EXPECT_LE(m, noise_margin(ls[a], ns[b], hs[c], sigmas[d + 1], deltas[e])); }
            if (e < 2) { EXPECT_LE(m, noise_margin(ls[a], ns[b], hs[c], sigmas[d], deltas[e + 1])); }
          }
}

TEST(NoiseMargin, InvalidArgumentsFault) {
  EXPECT_THROW(noise_margin(1.0, 1, 10, 0.1, 1.0), Fault);
  EXPECT_THROW(noise_margin(1.0, 0, 10, 0.1, 0.05), Fault);
}

TEST(CheckExact, IntegratorExamples) {
  const Environment env = integrator(0.5);
  const BarrierSpec& b = env.barriers.front();
  const StateVector x = StateVector::Constant(1, 1.0);
  const StateVector zero = StateVector::Zero(1);
  EXPECT_TRUE(check_exact(b, env, x, ControlVector::Constant(1, -0.4), zero, 0.0));
  EXPECT_FALSE(check_exact(b, env, x, ControlVector::Constant(1, -0.6), zero, 0.0));
}

TEST(CheckExact, StationaryControlAlwaysPasses) {
  for (double eta : {0.01, 0.3, 0.99}) {
    const Environment env = integrator(eta);
    for (double x0 : {0.0, 0.5, 3.0}) {
      EXPECT_TRUE(check_exact(env.barriers.front(), env, StateVector::Constant(1, x0),
                              ControlVector::Zero(1), StateVector::Zero(1), 0.0));
    }
  }
}

TEST(Linearize, IntegratorExample) {
  const Environment env = integrator(0.5);
  const FeatureMap none{};
  const LinearConstraint c = linearize(env.barriers.front(), env, StateVector::Constant(1, 1.0),
                                       ControlVector::Zero(1), none, Eigen::MatrixXd(), 0.0);
  EXPECT_DOUBLE_EQ(c.a[0], 1.0);
  EXPECT_DOUBLE_EQ(c.b, -0.5);
}

TEST(Linearize, ZeroResidualIsNominalForm) {
  PendulumParams p;
  const Environment env = make_pendulum(p, 0.1, 0.05);
  Rng rng = seeded_rng(0, "f");
  const FeatureMap f = build_rff(10, 2, 1, FeatureInput::state_control, 1.0, rng);
  const Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(2, 10);
  for (const auto& b : env.barriers) {
    const StateVector x = Eigen::Vector2d(1.0, 0.5);
    const LinearConstraint with_zero = linearize(b, env, x, ControlVector::Constant(1, 2.0), f, w0, 0.3);
    const LinearConstraint empty = linearize(b, env, x, ControlVector::Constant(1, 2.0), f, Eigen::MatrixXd(), 0.3);
    EXPECT_EQ(with_zero.a, empty.a);
    EXPECT_EQ(with_zero.b, empty.b);
    const StateVector y = env.drift(x);
    EXPECT_NEAR(empty.b, -b.eta * b.value(x) + 0.3 - (b.value(y) - b.value(x)), 1e-15);
    EXPECT_NEAR(empty.a[0], b.gradient(y).dot(env.input_map(x).col(0)), 1e-15);
  }
}

TEST(Linearize, StateOnlyFeaturesAddNoControlSlack) {
  UnicycleParams p;
  p.obstacle = true;
  p.obstacle_center = Eigen::Vector2d(0.5, -1.2);
  const Environment env = make_unicycle(p, 0.2, 0.05);
  Rng rng = seeded_rng(0, "f");
  const FeatureMap f = build_rff(8, 3, 2, FeatureInput::state_only, 1.0, rng);
  const Eigen::MatrixXd w = random_matrix(rng, 3, 8, 0.5);
  const BarrierSpec& b = env.barriers.front();
  const StateVector x = Eigen::Vector3d(-0.5, -1.0, 0.2);
  const ControlVector u = Eigen::Vector2d(1.0, 0.3);
  const LinearConstraint c = linearize(b, env, x, u, f, w, 0.0);
  const StateVector y = env.drift(x);
  const StateVector g = b.gradient(y);
  const double expected = -b.eta * b.value(x) - (b.value(y) - b.value(x)) + std::abs(g.dot(w * f(x, u)));
  EXPECT_NEAR(c.b, expected, 1e-12);
}

TEST(Linearize, KnownResidualMatchesTruthForAffineBarrier) {
  PendulumParams p;
  p.sigma_theta = p.sigma_rate = 0.0;
  const Environment env = make_pendulum(p, 0.1, 0.05);
  Rng rng = seeded_rng(2, "known");
  Rng unused = seeded_rng(2, "noise");
  for (int i = 0; i < 1000; ++i) {
    const StateVector x = Eigen::Vector2d(rng.uniform(-0.3, 3.9), rng.uniform(-8.0, 8.0));
    const ControlVector u = ControlVector::Constant(1, rng.uniform(-15.0, 15.0));
    const StateVector next = step_true(env, x, u, unused);
    for (const auto& b : env.barriers) {
      const LinearConstraint c = linearize_known(b, env, x, 0.0);
      EXPECT_NEAR(c.slack(u), b.value(next) - (1.0 - b.eta) * b.value(x), 1e-9);
    }
  }
}

TEST(Implication, ZeroResidualAgreesExactly) {
  const Environment env = integrator(0.3);
  const FeatureMap none{};
  Rng rng = seeded_rng(0, "agree");
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const StateVector x = StateVector::Constant(1, rng.uniform(0.0, 3.0));
    const ControlVector u = ControlVector::Constant(1, rng.uniform(-1.0, 1.0));
    const auto r = implication_check(env.barriers.front(), env, x, u, u, none, Eigen::MatrixXd(), 0.1);
    // Skip points within rounding of the boundary.
    const LinearConstraint c = linearize(env.barriers.front(), env, x, u, none, Eigen::MatrixXd(), 0.1);
    if (std::abs(c.slack(u)) < 1e-12) continue;
    EXPECT_EQ(r.linear, r.exact);
    ++checked;
  }
  EXPECT_GT(checked, 9900);
}

TEST(Implication, LinearImpliesExactOnPendulumWithControlFeatures) {
  PendulumParams p;
  const Environment env = make_pendulum(p, 0.1, 0.05);
  Rng rng = seeded_rng(3, "impl");
  const FeatureMap f = build_rff(12, 2, 1, FeatureInput::state_control, 1.0, rng,
                                 Eigen::Vector3d(1.0, 0.2, 1.0 / 15.0));
  int linear = 0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::MatrixXd w = random_matrix(rng, 2, 12, 0.02);
    const StateVector x = Eigen::Vector2d(rng.uniform(-0.39, 3.92), rng.uniform(-8.0, 8.0));
    const ControlVector u_nom = ControlVector::Constant(1, rng.uniform(-15.0, 15.0));
    const ControlVector u = ControlVector::Constant(1, rng.uniform(-15.0, 15.0));
    for (const auto& b : env.barriers) {
      const auto r = implication_check(b, env, x, u, u_nom, f, w, 0.05);
      linear += r.linear ? 1 : 0;
      if (r.linear) { EXPECT_TRUE(r.exact); }
    }
  }
  EXPECT_GT(linear, 100);
}

TEST(Implication, LinearImpliesExactForObstacleBarrier) {
  UnicycleParams p;
  p.obstacle = true;
  p.obstacle_center = Eigen::Vector2d(0.5, -1.2);
  const Environment env = make_unicycle(p, 0.2, 0.05);
  Rng rng = seeded_rng(4, "impl");
  const FeatureMap f = build_rff(10, 3, 2, FeatureInput::state_only, 1.0, rng);
  const BarrierSpec& b = env.barriers.front();
  int linear = 0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::MatrixXd w = random_matrix(rng, 3, 10, 0.3);
    const StateVector x = Eigen::Vector3d(rng.uniform(-1.5, 2.5), rng.uniform(-3.2, 0.8),
                                          rng.uniform(-3.1, 3.1));
    const ControlVector u = Eigen::Vector2d(rng.uniform(-0.5, 2.0), rng.uniform(-2.0, 2.0));
    const auto r = implication_check(b, env, x, u, u, f, w, 0.01);
    linear += r.linear ? 1 : 0;
    if (r.linear) { EXPECT_TRUE(r.exact); }
  }
  EXPECT_GT(linear, 100);
}

// Trajectories filtered with an imperfect model obey
// h(x') >= (1 - eta) h(x) - L eps while the noise stays inside the envelope.
TEST(SafetyRecursion, HoldsStepByStep) {
  SyntheticParams sp;
  sp.sigma = 0.05;
  const double eta = 0.2;
  const int horizon = 60;
  const Environment env = make_synthetic_linear(sp, eta, 0.05);
  const BarrierSpec& b = env.barriers.front();
  const FeatureMap& f = *env.exact_features;
  Eigen::MatrixXd w = env.exact_weights;
  w(0, 0) += 0.02;
  w(0, 2) -= 0.01;
  double eps = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const StateVector x = StateVector::Constant(1, -5.0 + 10.0 * i / 400.0);
    eps = std::max(eps, ((w - env.exact_weights) * f(x, ControlVector::Zero(1))).norm());
  }
  const double margin = noise_margin(b, 1, horizon, sp.sigma);
  const double p_env = sp.sigma * std::sqrt(2.0 * std::log(horizon / b.delta_s));
  int audited = 0;
  for (int k = 0; k < 200; ++k) {
    Rng rng = seeded_rng(k, "recursion");
    StateVector x = StateVector::Constant(1, rng.uniform(0.2, 2.0));
    for (int h = 0; h < horizon; ++h) {
      const ControlVector u_adv = ControlVector::Constant(1, -1.0);
      const LinearConstraint c = linearize(b, env, x, u_adv, f, w, margin);
      const FilterResult fr = project_safe(u_adv, {c}, env.bounds);
      const StateVector next = step_true(env, x, fr.u, rng);
      const StateVector mean = step_nominal(env, x, fr.u, env.true_residual(x, fr.u));
      const bool in_envelope = (next - mean).cwiseAbs().maxCoeff() <= p_env;
      if (fr.status != FilterStatus::infeasible_fallback && in_envelope) {
        EXPECT_GE(b.value(next), (1.0 - eta) * b.value(x) - b.lipschitz * eps - 1e-8);
        ++audited;
      }
      x = next;
    }
  }
  EXPECT_GT(audited, 10000);
}
