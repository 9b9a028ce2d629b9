#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adanode/errors.hpp"
#include "adanode/model.hpp"
#include "adanode/ode.hpp"

namespace adanode {
namespace {

DynamicsSpec linear_dynamics() {
  DynamicsSpec dyn;
  dyn.dim = 1;
  dyn.graph_fn = [](Graph&, Var u, double, const ParamVars&) { return u; };
  return dyn;
}

DynamicsSpec damped_oscillator() {
  DynamicsSpec dyn;
  dyn.dim = 2;
  dyn.plain_fn = [](const Tensor& u, double, const ParameterSet&) {
    return Tensor::vector({u[1], -u[0] - 0.2 * u[1]});
  };
  return dyn;
}

const ParameterSet kNone;

TEST(Rk4, ExponentialGrowth) {
  std::vector<double> times{0.0, 1.0};
  auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({1.0}), times, 1.0, 0.0, 0.01);
  EXPECT_NEAR(traj.states.back()[0], std::exp(1.0), 1e-6);
}

TEST(Rk4, SingleStepMatchesTaylorPolynomial) {
  // For dz/dt = z one RK4 step multiplies by 1 + h + h^2/2 + h^3/6 + h^4/24.
  const double h = 0.3;
  std::vector<double> times{0.0, h};
  auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({2.0}), times, h);
  EXPECT_NEAR(traj.states[1][0], 2.0 * (1 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24), 1e-14);
}

TEST(Rk4, AlphaZeroGivesConstantDerivativeGamma) {
  std::vector<double> times{0.0, 2.0};
  auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({0.0}), times, 0.0, 3.0, 0.1);
  EXPECT_NEAR(traj.states.back()[0], 6.0, 1e-12);
}

TEST(Rk4, AlphaScalesRate) {
  std::vector<double> times{0.0, 0.5};
  auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({1.0}), times, 2.0, 0.0, 0.001);
  EXPECT_NEAR(traj.states.back()[0], std::exp(1.0), 1e-9);
}

TEST(Rk4, IdentityHookIsBitIdenticalToNoHook) {
  Architecture arch;
  arch.d_lat = 3;
  arch.dynamics_hidden = {5, 5};
  auto model = LatentOdeModel::initialize(arch, 9);
  auto dyn = model.dynamics_spec();
  std::vector<double> times{0.0, 0.25, 0.6, 1.3};
  Tensor z0 = Tensor::vector({0.2, -0.7, 1.1});
  auto a = solve_fixed_rk4(dyn, model.parameters(), z0, times, 1.0, 0.0, 0.05);
  auto b = solve_fixed_rk4(dyn, model.parameters(), z0, times, 0.05);
  for (std::size_t i = 0; i < times.size(); ++i) EXPECT_EQ(a.states[i], b.states[i]);
}

TEST(Rk4, ReturnsStateAtEveryRequestedTime) {
  std::vector<double> times{0.0, 0.1, 0.35, 0.4};
  auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({1.0}), times, 0.02);
  ASSERT_EQ(traj.states.size(), times.size());
  EXPECT_EQ(traj.times, times);
  EXPECT_EQ(traj.states[0][0], 1.0);
  for (std::size_t i = 0; i < times.size(); ++i) EXPECT_NEAR(traj.states[i][0], std::exp(times[i]), 1e-8);
}

TEST(Rk4, RejectsBadGrids) {
  std::vector<double> decreasing{0.0, 1.0, 0.5};
  EXPECT_THROW(solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({1.0}), decreasing), UsageError);
  std::vector<double> empty;
  EXPECT_THROW(solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({1.0}), empty), UsageError);
}

TEST(Rk4, DivergenceReportsLastValidTime) {
  DynamicsSpec blowup;
  blowup.dim = 1;
  blowup.graph_fn = [](Graph&, Var u, double, const ParamVars&) { return exp(scale(square(u), 50.0)); };
  std::vector<double> times{0.0, 0.5, 1.0, 2.0};
  try {
    solve_fixed_rk4(blowup, kNone, Tensor::vector({1.0}), times, 0.1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.last_valid_time(), 0.0);
    EXPECT_LT(e.last_valid_time(), 2.0);
  }
}

TEST(Dopri45, ExponentialWithinTolerance) {
  SolveConfig cfg;
  cfg.method = SolverMethod::dopri45_adaptive;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-8;
  std::vector<double> outs{0.0, 0.33, 0.5, 1.0};
  auto traj = solve_adaptive_dopri45(linear_dynamics(), kNone, Tensor::vector({1.0}), 0.0, 1.0, outs, cfg);
  for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_NEAR(traj.states[i][0], std::exp(outs[i]), 1e-6);
}

TEST(Dopri45, ZeroDynamicsStaysPut) {
  DynamicsSpec zero;
  zero.dim = 2;
  zero.plain_fn = [](const Tensor& u, double, const ParameterSet&) { return Tensor::zeros(u.shape()); };
  SolveConfig cfg;
  std::vector<double> outs{0.0, 1.0, 5.0};
  auto traj = solve_adaptive_dopri45(zero, kNone, Tensor::vector({0.3, -2}), 0.0, 5.0, outs, cfg);
  for (const auto& s : traj.states) EXPECT_EQ(s, Tensor::vector({0.3, -2}));
}

TEST(Dopri45, MatchesFineRk4OnDampedOscillator) {
  std::vector<double> outs;
  for (int i = 0; i <= 20; ++i) outs.push_back(0.5 * i);
  SolveConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-10;
  Tensor z0 = Tensor::vector({1.0, 0.0});
  auto dp = solve_adaptive_dopri45(damped_oscillator(), kNone, z0, 0.0, 10.0, outs, cfg);
  auto rk = solve_fixed_rk4(damped_oscillator(), kNone, z0, outs, 1e-4);
  double worst = 0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (int j = 0; j < 2; ++j) worst = std::max(worst, std::abs(dp.states[i][j] - rk.states[i][j]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Dopri45, StepLimitAndConfigErrors) {
  SolveConfig cfg;
  cfg.max_steps = 2;
  cfg.rtol = 1e-12;
  cfg.atol = 1e-12;
  std::vector<double> outs{10.0};
  EXPECT_THROW(solve_adaptive_dopri45(damped_oscillator(), kNone, Tensor::vector({1, 0}), 0.0, 10.0, outs, cfg),
               StepLimitError);
  SolveConfig bad;
  bad.rtol = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  std::vector<double> outside{11.0};
  EXPECT_THROW(solve_adaptive_dopri45(damped_oscillator(), kNone, Tensor::vector({1, 0}), 0.0, 10.0, outside,
                                      SolveConfig{}),
               UsageError);
}

TEST(SolveWithGrad, AnalyticSensitivities) {
  auto dyn = linear_dynamics();
  std::vector<double> times{0.0, 1.0};
  std::vector<Tensor> cot{Tensor::vector({0.0}), Tensor::vector({1.0})};
  {
    // z(1) = e^alpha, so dz/dalpha = e at alpha = 1.
    auto s = solve_with_grad(dyn, kNone, Tensor::vector({1.0}), times, 1.0, 0.0, 0.001);
    auto sens = s.pullback(cot);
    EXPECT_NEAR(sens.alpha, std::exp(1.0), 1e-4);
    EXPECT_NEAR(sens.z0[0], std::exp(1.0), 1e-4);
  }
  {
    std::vector<double> t2{0.0, 2.0};
    auto s = solve_with_grad(dyn, kNone, Tensor::vector({0.5}), t2, 0.0, 0.7, 0.1);
    auto sens = s.pullback(cot);
    EXPECT_NEAR(sens.gamma, 2.0, 1e-12);
  }
}

TEST(SolveWithGrad, PullbackCanRepeatAndChecksCotangents) {
  std::vector<double> times{0.0, 0.5, 1.0};
  auto s = solve_with_grad(linear_dynamics(), kNone, Tensor::vector({1.0}), times, 1.2, 0.1, 0.01);
  std::vector<Tensor> cot{Tensor::vector({0.0}), Tensor::vector({1.0}), Tensor::vector({2.0})};
  auto a = s.pullback(cot);
  auto b = s.pullback(cot);
  EXPECT_EQ(a.alpha, b.alpha);
  std::vector<Tensor> wrong{Tensor::vector({1.0})};
  EXPECT_THROW(s.pullback(wrong), DimensionError);
  DynamicsSpec plain_only;
  plain_only.dim = 1;
  plain_only.plain_fn = [](const Tensor& u, double, const ParameterSet&) { return u; };
  EXPECT_THROW(solve_with_grad(plain_only, kNone, Tensor::vector({1.0}), times, 1, 0), UsageError);
}

// Property: for linear dynamics the adapted flow is z(t) = (z0 + g/a) e^{a t} - g/a.
TEST(Property, AdaptedLinearFlowMatchesClosedForm) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ua(0.3, 2.0), ug(-1, 1), uz(-2, 2);
  for (int trial = 0; trial < 30; ++trial) {
    double a = ua(rng), g = ug(rng), z0 = uz(rng);
    std::vector<double> times{0.0, 0.4, 1.0};
    auto traj = solve_fixed_rk4(linear_dynamics(), kNone, Tensor::vector({z0}), times, a, g, 0.001);
    for (std::size_t i = 0; i < times.size(); ++i) {
      double expect = (z0 + g / a) * std::exp(a * times[i]) - g / a;
      EXPECT_NEAR(traj.states[i][0], expect, 1e-9);
    }
  }
}

}  // namespace
}  // namespace adanode
