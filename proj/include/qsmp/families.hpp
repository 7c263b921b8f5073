#pragma once

// Built-in problem families, registered by name.

#include <map>
#include <string>
#include <vector>

#include "qsmp/model.hpp"

namespace qsmp {

/// b = u, sigma = s I, f = (gamma/2)|z|^2 + (kappa/2)|u|^2, Phi = tanh(a sum_j x_j),
/// with n = d = k = dim and U = [-u_max, u_max]^dim.
struct ExponentialUtilityParams {
  int dim = 1;
  double gamma = 1.0;
  double kappa = 0.0;
  double sigma = 1.0;
  double a = 1.0;
  double T = 1.0;
  double x0 = 0.0;
  double u_max = 1.0;
};

/// Scalar b = A x + B u, sigma = C x + D u, f = (Q x^2 + R u^2) / 2,
/// Phi = G x^2 / 2, U = [-u_max, u_max]. Bounds that are unbounded in x are
/// declared over |x| <= x_radius.
struct LinearQuadraticParams {
  double A = 0.5;
  double B = 1.0;
  double C = 0.3;
  double D = 0.0;
  double Q = 1.0;
  double R = 1.0;
  double G = 1.0;
  double T = 1.0;
  double x0 = 1.0;
  double u_max = 10.0;
  double x_radius = 10.0;
};

/// Scalar b = a tanh x + u, sigma = s0 + s1 tanh x + s2 u,
/// f = r y + (gamma/2)(1 + h tanh x) z^2 + m tanh x + (kappa/2) u^2,
/// Phi = tanh x, U = [-u_max, u_max].
struct TanhParams {
  double a = 0.5;
  double s0 = 0.6;
  double s1 = 0.2;
  double s2 = 0.2;
  double r = 0.1;
  double gamma = 0.5;
  double h = 0.5;
  double m = 0.2;
  double kappa = 0.5;
  double T = 1.0;
  double x0 = 0.0;
  double u_max = 1.0;
};

ProblemSpec exponential_utility_family(const ExponentialUtilityParams& p = {});
ProblemSpec linear_quadratic_family(const LinearQuadraticParams& p = {});
ProblemSpec tanh_family(const TanhParams& p = {});

/// Names accepted by make_family.
std::vector<std::string> family_names();

/// Builds a registered family; parameters not given keep their defaults.
/// Throws SpecError for an unknown name or parameter.
ProblemSpec make_family(const std::string& name, const std::map<std::string, double>& params = {});

/// linear-quadratic parameters from name/value pairs; throws SpecError on an unknown name.
LinearQuadraticParams linear_quadratic_params(const std::map<std::string, double>& params);

/// Riccati feedback u = K(t) x for the unconstrained LQ problem.
struct RiccatiSolution {
  std::vector<double> P;  ///< P at the grid times
  std::vector<double> K;  ///< gain at the grid times
  double cost = 0.0;      ///< optimal J = P(0) x0^2 / 2
};

/// Continuous-time Riccati ODE integrated by RK4 with `substeps` per grid step.
RiccatiSolution riccati_continuous(const LinearQuadraticParams& p, std::size_t steps, std::size_t substeps = 64);

/// Exact optimum of the Euler-discretized LQ problem over per-step linear feedback.
RiccatiSolution riccati_discrete(const LinearQuadraticParams& p, std::size_t steps);

}  // namespace qsmp
