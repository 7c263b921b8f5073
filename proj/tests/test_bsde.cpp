#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "qsmp/bsde.hpp"
#include "qsmp/error.hpp"
#include "qsmp/families.hpp"

namespace qsmp {
namespace {

TEST(GaussHermite, IntegratesPolynomialMoments) {
  EXPECT_NEAR(testing::gauss_hermite_expectation([](double x) { return 1.0; }), 1.0, 1e-13);
  EXPECT_NEAR(testing::gauss_hermite_expectation([](double x) { return x * x; }), 1.0, 1e-12);
  EXPECT_NEAR(testing::gauss_hermite_expectation([](double x) { return std::pow(x, 6); }), 15.0, 1e-10);
  EXPECT_NEAR(testing::gauss_hermite_expectation([](double x) { return std::exp(x); }), std::exp(0.5), 1e-12);
}

TEST(QuadraticBsde, ExponentialUtilityMatchesQuadrature) {
  const ProblemSpec spec = exponential_utility_family();
  const TimeGrid grid(50, 1.0);
  const auto noise = simulate_brownian(grid, 40000, 1, 21);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  const BackwardSolution s = solve_quadratic_bsde(spec, grid, noise, f);
  const double exact = testing::exponential_utility_y0(1.0, 1.0, 1.0, 0.0, 1.0);
  // Time-discretization bias is O(dt); allow it on top of the sampling error.
  EXPECT_NEAR(s.y0, exact, 4.0 * s.y0_stderr + 2e-3);
  EXPECT_GT(s.y0_stderr, 0.0);
  EXPECT_EQ(s.Y.steps(), 51u);
  EXPECT_EQ(s.Z.components(), 1u);
  for (std::size_t m = 0; m < 100; ++m) EXPECT_EQ(s.Y.at(50, 0, m), std::tanh(f.states.at(50, 0, m)));
}

TEST(QuadraticBsde, ZIsTruncatedAtTheRadius) {
  const ProblemSpec spec = exponential_utility_family({.gamma = 1.0, .a = 3.0});
  const TimeGrid grid(20, 1.0);
  const auto noise = simulate_brownian(grid, 5000, 1, 22);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  BackwardOptions o;
  o.truncation_radius = 0.5;
  const BackwardSolution s = solve_quadratic_bsde(spec, grid, noise, f, o);
  EXPECT_EQ(s.truncation_radius, 0.5);
  for (double z : s.Z.raw()) EXPECT_LE(std::abs(z), 0.5 + 1e-15);
  const BackwardSolution d = solve_quadratic_bsde(spec, grid, noise, f);
  EXPECT_NEAR(d.truncation_radius, 10.0 * std::sqrt(derive_constants(spec).A / 1.0), 1e-12);
}

TEST(QuadraticBsde, AprioriBoundHolds) {
  const ProblemSpec spec = exponential_utility_family();
  const TimeGrid grid(50, 1.0);
  const auto noise = simulate_brownian(grid, 20000, 1, 23);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  const BackwardSolution s = solve_quadratic_bsde(spec, grid, noise, f);
  const DerivedConstants c = derive_constants(spec);
  const BoundReport r = estimate_apriori_bound(s, c, grid, &f.states);
  EXPECT_TRUE(r.passed());
  EXPECT_GT(r.margin(), 0.0);
  EXPECT_NEAR(r.combined, r.sup_abs_y + r.bmo2.value * r.bmo2.value, 1e-12);
}

class ConstantDriver final : public LinearDriver {
 public:
  ConstantDriver(double lambda, double mu, double phi) : lambda_(lambda), mu_(mu), phi_(phi) {}
  void coefficients(std::size_t, std::span<double> lambda, std::span<double> mu,
                    std::span<double> phi) const override {
    std::fill(lambda.begin(), lambda.end(), lambda_);
    std::fill(mu.begin(), mu.end(), mu_);
    std::fill(phi.begin(), phi.end(), phi_);
  }

 private:
  double lambda_, mu_, phi_;
};

TEST(LinearBsde, KnownSolutionWithTerminalBrownianValue) {
  // xi = W_T, generator lambda Y + mu Z + phi:
  // Z_t = e^{lambda (T-t)}, Y_t = e^{lambda (T-t)} (W_t + mu (T-t)) + phi (e^{lambda (T-t)} - 1) / lambda.
  const double lambda = 0.3, mu = 0.5, phi = 0.2, T = 1.0;
  const std::size_t N = 100, M = 40000;
  const TimeGrid grid(N, T);
  const auto noise = simulate_brownian(grid, M, 1, 24);
  PathArray w(N + 1, 1, M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < N; ++i) w.at(i + 1, 0, m) = w.at(i, 0, m) + noise.increments.at(i, 0, m);
  std::vector<double> xi(M);
  for (std::size_t m = 0; m < M; ++m) xi[m] = w.at(N, 0, m);
  const BackwardSolution s = solve_linear_bsde(xi, ConstantDriver(lambda, mu, phi), grid, noise, w);
  auto y = [&](double t, double wt) {
    const double e = std::exp(lambda * (T - t));
    return e * (wt + mu * (T - t)) + phi * (e - 1.0) / lambda;
  };
  EXPECT_NEAR(s.y0, y(0.0, 0.0), 4.0 * s.y0_stderr + 5e-3);
  for (std::size_t i : {25u, 50u, 75u}) {
    const double t = grid.time(i);
    double ey = 0.0, ez = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      ey += std::abs(s.Y.at(i, 0, m) - y(t, w.at(i, 0, m)));
      ez += s.Z.at(i, 0, m);
    }
    EXPECT_LT(ey / M, 0.03) << i;
    EXPECT_NEAR(ez / M, std::exp(lambda * (T - t)), 0.03) << i;
  }
}

TEST(LinearBsde, StoredDataMatchesDriver) {
  const std::size_t N = 20, M = 500;
  const TimeGrid grid(N, 1.0);
  const auto noise = simulate_brownian(grid, M, 1, 25);
  const ProblemSpec spec = exponential_utility_family();
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  LinearBSDEData data;
  data.xi.resize(M);
  for (std::size_t m = 0; m < M; ++m) data.xi[m] = std::sin(f.states.at(N, 0, m));
  data.lambda = PathArray(N, 1, M, -0.4);
  data.mu = PathArray(N, 1, M, 0.25);
  data.phi = PathArray(N, 1, M, 1.0);
  const BackwardSolution a = solve_linear_bsde(data, grid, noise, f);
  const BackwardSolution b = solve_linear_bsde(data.xi, ConstantDriver(-0.4, 0.25, 1.0), grid, noise, f.states);
  EXPECT_NEAR(a.y0, b.y0, 1e-12);
  for (std::size_t j = 0; j < a.Y.raw().size(); ++j) EXPECT_NEAR(a.Y.raw()[j], b.Y.raw()[j], 1e-12);
}

}  // namespace
}  // namespace qsmp
