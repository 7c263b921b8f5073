#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qsmp/families.hpp"
#include "qsmp/smp.hpp"

namespace qsmp {
namespace {

TEST(Cost, EqualsTheStateBsdeValue) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(20, 1.0);
  const auto noise = simulate_brownian(grid, 3000, 1, 1);
  const ConstantControl u({0.3});
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, u);
  const BackwardSolution b = solve_quadratic_bsde(spec, grid, noise, f);
  const Estimate J = cost_functional(spec, grid, noise, u);
  EXPECT_EQ(J.value, b.y0);
  EXPECT_EQ(J.std_error, b.y0_stderr);
}

TEST(GateauxCheck, DifferenceQuotientsApproachTheAuxiliaryValue) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(50, 1.0);
  const auto noise = simulate_brownian(grid, 20000, 1, 7);
  const GradientCheckReport r =
      gateaux_check(spec, grid, noise, ConstantControl({0.0}), ConstantControl({0.5}), default_epsilons());
  ASSERT_EQ(r.fd_slopes.size(), 5u);
  EXPECT_FALSE(r.inconclusive);
  EXPECT_LT(std::abs(r.intercept_z()), 3.0);
  EXPECT_LT(std::abs(r.representation_z()), 3.0);
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(r.fd_slopes[j], (r.costs[j] - r.cost_bar) / r.epsilons[j], 1e-12);
}

TEST(GateauxCheck, RejectsASingleEpsilon) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(5, 1.0);
  const auto noise = simulate_brownian(grid, 100, 1, 7);
  EXPECT_ANY_THROW(gateaux_check(spec, grid, noise, ConstantControl({0.0}), ConstantControl({0.5}), {0.1}));
}

TEST(Descent, ReachesTheRiccatiCostOnLinearQuadratic) {
  const LinearQuadraticParams lp;
  const ProblemSpec spec = linear_quadratic_family(lp);
  const std::size_t N = 50;
  const TimeGrid grid(N, lp.T);
  const auto noise = simulate_brownian(grid, 20000, 1, 11);
  DescentOptions o;
  o.step = 0.7;
  const AffineFeedback init = random_affine_feedback(N, 1, spec.domain, 5, 1.0);
  const DescentResult res = projected_gradient_descent(spec, grid, noise, init, o);
  ASSERT_FALSE(res.trace.empty());
  EXPECT_NE(res.stop_reason, "diverged");
  for (std::size_t j = 1; j < res.trace.size(); ++j)
    EXPECT_LE(res.trace[j].cost, res.trace[j - 1].cost + 0.01 * res.trace[j - 1].std_error);
  const RiccatiSolution rd = riccati_discrete(lp, N);
  EXPECT_NEAR(res.trace.back().cost, rd.cost, 0.01 * rd.cost);
  AffineFeedback opt(N, 1, spec.domain);
  for (std::size_t i = 0; i <= N; ++i) opt.gain(i, 0, 0) = rd.K[i];
  const Estimate Jopt = cost_functional(spec, grid, noise, opt);
  EXPECT_GE(res.trace.back().cost, Jopt.value - 4.0 * Jopt.std_error);
}

TEST(Riccati, DiscreteApproachesContinuous) {
  const LinearQuadraticParams lp;
  const double c = riccati_continuous(lp, 400).cost;
  double last = std::abs(riccati_discrete(lp, 25).cost - c);
  for (std::size_t N : {50u, 100u, 200u}) {
    const double gap = std::abs(riccati_discrete(lp, N).cost - c);
    EXPECT_LT(gap, 0.6 * last) << N;
    last = gap;
  }
  EXPECT_NEAR(riccati_continuous(lp, 50).cost, c, 1e-9);
}

TEST(MaximumPrinciple, SeparatesOptimalFromPerturbedFeedback) {
  const LinearQuadraticParams lp;
  const ProblemSpec spec = linear_quadratic_family(lp);
  const std::size_t N = 50;
  const TimeGrid grid(N, lp.T);
  const auto noise = simulate_brownian(grid, 20000, 1, 12);
  const RiccatiSolution rd = riccati_discrete(lp, N);
  AffineFeedback opt(N, 1, spec.domain);
  for (std::size_t i = 0; i <= N; ++i) opt.gain(i, 0, 0) = rd.K[i];
  AffineFeedback bad = opt;
  for (std::size_t i = 0; i <= N; ++i) bad.gain(i, 0, 0) *= 1.5;
  const CandidateSampler sampler(spec.domain);
  const MpCheckReport good = check_maximum_principle(spec, grid, noise, opt, sampler);
  const MpCheckReport wrong = check_maximum_principle(spec, grid, noise, bad, sampler);
  EXPECT_EQ(good.evaluations, 20u * 250u * 8u);
  EXPECT_LT(good.violation_fraction, 0.01);
  EXPECT_GT(wrong.violation_fraction, 0.1);
  EXPECT_LT(wrong.min_normalized, -5.0);
}

TEST(CandidateSampler, StaysInTheDomainAndReachesTheBoundary) {
  const std::vector<ControlDomain> domains = {
      ControlDomain::box({-1.0, 0.0}, {1.0, 2.0}),
      ControlDomain::ball({0.5, -0.5}, 0.75),
      ControlDomain::halfspaces({{1.0, 1.0}, {-1.0, 0.0}}, {1.0, 2.0}),
  };
  std::mt19937_64 rng(3);
  for (const ControlDomain& dom : domains) {
    const CandidateSampler s(dom, 0.5, 2.0);
    std::vector<double> ub(2), out(2);
    dom.project(std::vector<double>{0.1, 0.1}, ub);
    std::size_t on_boundary = 0;
    for (int j = 0; j < 2000; ++j) {
      s.sample(rng, ub, out);
      ASSERT_TRUE(dom.contains(out, 1e-9)) << static_cast<int>(dom.kind());
      std::vector<double> moved{out[0] * 1.01 + 1e-3, out[1] * 1.01 + 1e-3};
      std::vector<double> back(2);
      dom.project(moved, back);
      if (back != moved) ++on_boundary;
    }
    EXPECT_GT(on_boundary, 100u) << static_cast<int>(dom.kind());
  }
}

TEST(AffineFeedback, RandomInitialFeedbackIsWithinScaleAndProjected) {
  const ControlDomain dom = ControlDomain::box({-0.2}, {0.2});
  const AffineFeedback a = random_affine_feedback(30, 2, dom, 9, 0.5);
  for (double v : a.parameters()) EXPECT_LE(std::abs(v), 0.5);
  EXPECT_TRUE(a.path_dependent());
  std::vector<double> x{3.0, -1.0}, u(1);
  for (std::size_t i = 0; i <= 30; ++i) {
    a.value(i, 0.0, 0, x, u);
    EXPECT_TRUE(dom.contains(u));
  }
  const AffineFeedback b = random_affine_feedback(30, 2, dom, 9, 0.5);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
}

}  // namespace
}  // namespace qsmp
