#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gradphi/exponents.hpp"
#include "gradphi/moderation.hpp"

using namespace gradphi;
using boost::math::quadrature::gauss_kronrod;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

EnvironmentTrajectory constant_environment(const Torus& t, double a, double node_dt, std::int64_t nodes) {
  EnvironmentTrajectory traj(t, node_dt);
  const std::vector<double> slice(static_cast<std::size_t>(t.edge_count()), a);
  for (std::int64_t k = 0; k < nodes; ++k) traj.push(slice);
  return traj;
}

}  // namespace

TEST(Weights, Examples) {
  const ModerationWeights w(3, 1.0);
  EXPECT_DOUBLE_EQ(w.k(0.0), 1.0);
  EXPECT_DOUBLE_EQ(w.k(1.0), 1.0 / 64.0);
  EXPECT_NEAR(w.K(0.0), 1.0 + 1.0 / 4.0 - 1.0 / 5.0, 1e-15);
  EXPECT_DOUBLE_EQ(w.integral_k(), 0.2);
  EXPECT_THROW(ModerationWeights(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(ModerationWeights(3.0, 0.0), std::invalid_argument);
}

TEST(Weights, ClosedFormsMatchQuadrature) {
  for (const double p : {2.0, 3.0, 4.0})
    for (const double delta : {1.0, 0.25}) {
      const ModerationWeights w(p, delta);
      const double ik = gauss_kronrod<double, 61>::integrate([&](double s) { return w.k(s); }, 0.0, kInf, 15, 1e-14);
      EXPECT_NEAR(ik, delta / (p + 2.0), 1e-10);
      for (const double t : {0.0, 0.5, 3.0, 40.0}) {
        const double tail = gauss_kronrod<double, 61>::integrate([&](double s) { return s * w.k(s); }, t, kInf, 15, 1e-14);
        EXPECT_NEAR(w.K(t), w.k(t) + tail, 1e-10 * w.K(t));
        const double tK = gauss_kronrod<double, 61>::integrate([&](double s) { return w.K(s); }, t, kInf, 15, 1e-14);
        EXPECT_NEAR(w.tail_K(t), tK, 1e-10 * std::max(tK, 1e-6));
      }
    }
}

TEST(Weights, KIsDecreasingAndKernelPropertiesHold) {
  for (const double p : {2.0, 3.0}) {
    const double delta = calibrate_delta(p);
    EXPECT_EQ(delta, 1.0) << p;
    const ModerationWeights w(p, delta);
    for (double t = 0.0; t < 100.0; t += 0.37) EXPECT_GT(w.K(t), w.K(t + 0.37));
    EXPECT_LE(w.integral_K(), 1.0);
    for (const double tau : {0.01, 0.3, 1.0, 10.0, 1000.0}) EXPECT_LE(detail::k_convolution(w, tau), w.K(tau));
  }
}

TEST(ModeratedEnvironment, ConstantEnvironmentClosedForm) {
  const Torus t(2, 2);
  const ModerationWeights w(3, 1.0);
  const double H = 10.0;
  for (const double a : {0.5, 1.0, 2.0}) {
    const auto traj = constant_environment(t, a, 0.05, 300);
    const ModeratedEnvironment env(traj, w, {H, 0.0, false});
    const double w2 = std::min(a, 1.0) / (7.0 * std::max(a, 1.0)) * (w.integral_k() - w.tail_k(H));
    for (const std::int64_t node : {std::int64_t{0}, std::int64_t{50}, env.last_node()})
      for (const Index e : {0, 7, 49}) EXPECT_NEAR(env.at(node, e).w, std::sqrt(w2), 1e-12);
    EXPECT_NEAR(env.at(0, 0).truncation_bound, w.tail_k(H) / 7.0, 1e-15);
  }
}

TEST(ModeratedEnvironment, SketchVariantClosedForm) {
  const Torus t(1, 3);
  const auto traj = constant_environment(t, 1.0, 0.1, 60);
  const ModeratedEnvironment env(traj, ModerationWeights(2, 1.0), {4.0, 0.0, true});
  EXPECT_NEAR(env.at(3, 2).w, (1.0 - std::pow(5.0, -3.0)) / 3.0, 1e-12);
}

TEST(ModeratedEnvironment, HorizonChecks) {
  const Torus t(1, 2);
  const auto traj = constant_environment(t, 1.0, 0.1, 31);
  const ModeratedEnvironment env(traj, ModerationWeights(2, 1.0), {2.0, 0.0, false});
  EXPECT_EQ(env.last_node(), 10);
  EXPECT_NO_THROW(env.at(10, 0));
  EXPECT_THROW(env.at(11, 0), std::invalid_argument);
  const ModeratedEnvironment strict(traj, ModerationWeights(2, 1.0), {2.0, 1e-6, false});
  EXPECT_THROW(strict.at(0, 0), std::invalid_argument);
  EXPECT_THROW(ModeratedEnvironment(traj, ModerationWeights(2, 1.0), {0.01, 0.0, false}), std::invalid_argument);
}

TEST(ModeratedEnvironment, LocalityOfTheClosureSum) {
  // Raising a far edge leaves w on edge 0 unchanged; raising a closure edge does not.
  const Torus t(2, 3);
  auto base = constant_environment(t, 0.5, 0.1, 40);
  const ModerationWeights w(3, 1.0);
  const double w0 = ModeratedEnvironment(base, w, {2.0, 0.0, false}).at(0, 0).w;
  auto far = EnvironmentTrajectory(t, 0.1);
  auto near = EnvironmentTrajectory(t, 0.1);
  const auto closure = t.edge_closure(0);
  const Index near_edge = closure.back() == 0 ? closure.front() : closure.back();
  const std::vector<int> corner{3, 3};
  const Index far_edge = t.edge(t.vertex(corner), 0);
  for (std::int64_t k = 0; k < base.node_count(); ++k) {
    std::vector<double> s(base.slice(k).begin(), base.slice(k).end());
    auto sf = s, sn = s;
    sf[far_edge] = 5.0;
    sn[near_edge] = 5.0;
    far.push(sf);
    near.push(sn);
  }
  EXPECT_EQ(ModeratedEnvironment(far, w, {2.0, 0.0, false}).at(0, 0).w, w0);
  EXPECT_LT(ModeratedEnvironment(near, w, {2.0, 0.0, false}).at(0, 0).w, w0);
}

TEST(Smoothing, ConstantFunctionGivesIntegralOfK) {
  const ModerationWeights w(3, 1.0);
  const std::vector<double> f(101, 2.0);
  const auto s = smoothed_functionals(f, 0.1, w);
  for (const std::size_t i : {std::size_t{0}, std::size_t{40}, std::size_t{100}})
    EXPECT_NEAR(s[i].value, 2.0 * w.integral_K(), 1e-10);
  EXPECT_NEAR(s[0].truncation_bound, 2.0 * w.tail_K(10.0), 1e-15);
}

TEST(Maximal, ConstantEnvironmentHasConstantProfiles) {
  const Torus t(2, 2);
  const auto traj = constant_environment(t, 1.0, 0.05, 201);
  const ModerationWeights w(3, 1.0);
  const ModeratedEnvironment env(traj, w, {2.0, 0.0, false});
  const auto grid = sample_w_grid(env, 5, env.last_node());
  const auto ex = exponent_table(2, 3, 3);
  const auto m = maximal_quantities(traj, grid, w, ex, 3.0);
  ASSERT_EQ(m.t.size(), grid.slices.size());
  for (std::size_t i = 1; i < m.t.size(); ++i) {
    EXPECT_NEAR(m.m0[i], m.m0[0], 1e-12);
    EXPECT_NEAR(m.m2[i], m.m2[0], 1e-12);
    EXPECT_NEAR(m.m_pp[i], m.m_pp[0], 1e-12);
    EXPECT_NEAR(m.m4[i], m.m4[0], 1e-12);
  }
  // a == 1: rows are 2d at every vertex, largest at the origin where |x|_* = 1.
  EXPECT_NEAR(m.m2[0], 1.0 + 4.0, 1e-12);
  EXPECT_NEAR(m.scr4, m.m4[0], 1e-12);
  EXPECT_NEAR(m.scr2, std::pow(5.0, ex.p - 1.0), 1e-9);
  EXPECT_GE(m.scr, 1.0);
  EXPECT_THROW(maximal_quantities(traj, grid, w, ex, 100.0), std::invalid_argument);
}
