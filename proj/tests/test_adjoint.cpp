#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qsmp/adjoint.hpp"
#include "qsmp/families.hpp"

namespace qsmp {
namespace {

void expect_hamiltonian_gradient(const ProblemSpec& spec, std::uint64_t seed) {
  const std::size_t n = spec.n, d = spec.d, k = spec.k;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(n), z(d), u(k), p(n), q(n * d), xr(n), ur(k), hu(k);
    for (auto* v : {&x, &z, &u, &p, &q, &xr, &ur})
      for (double& e : *v) e = 0.5 * g(rng);
    HamiltonianInputs in{0.3, x, 0.2 * g(rng), z, u, p, q, xr, ur};
    hamiltonian_u(in, spec, hu);
    for (std::size_t c = 0; c < k; ++c) {
      const double h = 1e-5, u0 = u[c];
      u[c] = u0 + h;
      const double up = hamiltonian(in, spec);
      u[c] = u0 - h;
      const double dn = hamiltonian(in, spec);
      u[c] = u0;
      EXPECT_NEAR(hu[c], (up - dn) / (2.0 * h), 1e-7 * (1.0 + std::abs(hu[c]))) << spec.name << " " << c;
    }
  }
}

TEST(Hamiltonian, ControlGradientMatchesFiniteDifferences) {
  expect_hamiltonian_gradient(tanh_family(), 1);
  expect_hamiltonian_gradient(exponential_utility_family({.dim = 2, .kappa = 0.5}), 2);
  expect_hamiltonian_gradient(linear_quadratic_family({.D = 0.4}), 3);
}

TEST(Hamiltonian, ShiftVanishesAtTheReference) {
  const ProblemSpec spec = tanh_family();
  std::vector<double> x{0.3}, z{0.1}, u{0.4}, p{0.7}, q{0.2}, delta(1);
  hamiltonian_shift({0.0, x, 0.0, z, u, p, q, x, u}, spec, delta);
  EXPECT_EQ(delta[0], 0.0);
  std::vector<double> ur{-0.1};
  hamiltonian_shift({0.0, x, 0.0, z, u, p, q, x, ur}, spec, delta);
  // sigma = s0 + s1 tanh x + s2 u with s2 = 0.2.
  EXPECT_NEAR(delta[0], 0.2 * 0.5 * 0.7, 1e-15);
}

TEST(Adjoint, TerminalValueIsTheTerminalGradient) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(20, 1.0);
  const auto noise = simulate_brownian(grid, 2000, 1, 3);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.2}));
  const BackwardSolution b = solve_quadratic_bsde(spec, grid, noise, f);
  const AdjointSolution a = solve_adjoint(spec, grid, noise, f, b);
  for (std::size_t m = 0; m < 2000; m += 97) {
    const double th = std::tanh(f.states.at(20, 0, m));
    EXPECT_NEAR(a.p.at(20, 0, m), 1.0 - th * th, 1e-14);
    EXPECT_EQ(a.p_mean.at(20, 0, m), a.p.at(20, 0, m));
  }
}

TEST(Adjoint, GammaHasTheExpectedMean) {
  // f_y = r is constant for the tanh family, so E[Gamma_T] = e^{r T} up to the step discretization.
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(50, 1.0);
  const std::size_t M = 40000;
  const auto noise = simulate_brownian(grid, M, 1, 4);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  const BackwardSolution b = solve_quadratic_bsde(spec, grid, noise, f);
  const PathArray gamma = gamma_process(spec, grid, noise, f, b);
  double s = 0.0, s2 = 0.0;
  for (double v : gamma.slice(50, 0)) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / M, se = std::sqrt((s2 / M - mean * mean) / M);
  EXPECT_NEAR(mean, std::exp(0.1), 4.0 * se + 1e-3);
  for (double v : gamma.slice(0, 0)) EXPECT_EQ(v, 1.0);
}

struct Pieces {
  ForwardBatch fbar;
  BackwardSolution bbar;
  AdjointSolution adj;
  PathArray uhat;
  VariationalForwardBatch var;
  BackwardSolution aux;
};

Pieces solve_pieces(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise, double ub, double u) {
  Pieces p;
  p.fbar = solve_forward_sde(spec, grid, noise, ConstantControl({ub}));
  p.bbar = solve_quadratic_bsde(spec, grid, noise, p.fbar);
  AdjointOptions ao;
  ao.compute_stderr = true;
  p.adj = solve_adjoint(spec, grid, noise, p.fbar, p.bbar, ao);
  p.uhat = control_difference(realize_control(spec, grid, noise, ConstantControl({u})), p.fbar.controls);
  p.var = solve_variational_sde(spec, grid, noise, p.fbar, p.uhat);
  p.aux = solve_auxiliary(spec, grid, noise, p.fbar, p.bbar, p.adj, p.uhat);
  return p;
}

TEST(Adjoint, DecouplingHoldsAtTheInitialTime) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(50, 1.0);
  const auto noise = simulate_brownian(grid, 20000, 1, 5);
  const Pieces p = solve_pieces(spec, grid, noise, 0.0, 0.5);
  BackwardOptions vo;
  vo.basis.cross_degree = 1;
  vo.conditioning.augment.push_back(&p.var.states);
  const BackwardSolution y1 = solve_variational_bsde(spec, grid, noise, p.fbar, p.bbar, p.var, vo);
  const RelationReport r = check_decoupling(spec, grid, noise, p.fbar, p.bbar, p.adj, p.var, y1, p.aux);
  EXPECT_LT(r.t0_residual, 4.0 * r.t0_stderr + 1e-3);
  ASSERT_EQ(r.z_residual.size(), 1u);
  EXPECT_LE(r.y_residual.q50, r.y_residual.q90);
  EXPECT_LE(r.y_residual.q90, r.y_residual.max);
}

TEST(Adjoint, GammaRepresentationMatchesTheAuxiliaryBsde) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(50, 1.0);
  const auto noise = simulate_brownian(grid, 20000, 1, 6);
  const Pieces p = solve_pieces(spec, grid, noise, 0.0, 0.5);
  const PathArray gamma = gamma_process(spec, grid, noise, p.fbar, p.bbar);
  const Estimate e = yhat0_via_gamma(spec, grid, noise, p.fbar, p.bbar, p.adj, gamma, p.uhat);
  EXPECT_NEAR(e.value, p.aux.y0, 4.0 * std::hypot(e.std_error, p.aux.y0_stderr));
  EXPECT_EQ(e.pathwise.size(), 20000u);
}

TEST(Adjoint, StandardErrorsAreRequestedOnly) {
  const ProblemSpec spec = tanh_family();
  const TimeGrid grid(10, 1.0);
  const auto noise = simulate_brownian(grid, 1000, 1, 7);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  const BackwardSolution b = solve_quadratic_bsde(spec, grid, noise, f);
  EXPECT_TRUE(solve_adjoint(spec, grid, noise, f, b).p_stderr.raw().empty());
  AdjointOptions ao;
  ao.compute_stderr = true;
  const AdjointSolution a = solve_adjoint(spec, grid, noise, f, b, ao);
  ASSERT_EQ(a.p_stderr.steps(), 11u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_GT(a.p_stderr.at(i, 0, 0), 0.0) << i;
    EXPECT_TRUE(std::isfinite(a.p_stderr.at(i, 0, 0))) << i;
  }
}

TEST(ResidualStats, Quantiles) {
  std::vector<double> v(101);
  for (int i = 0; i <= 100; ++i) v[i] = i;
  const ResidualStats s = residual_stats(v);
  EXPECT_EQ(s.max, 100.0);
  EXPECT_EQ(s.mean, 50.0);
  EXPECT_NEAR(s.q50, 50.0, 1.0);
  EXPECT_NEAR(s.q90, 90.0, 1.0);
  EXPECT_NEAR(s.q99, 99.0, 1.0);
}

}  // namespace
}  // namespace qsmp
