#pragma once

// BMO-martingale utilities: the critical-exponent function Psi and its
// inverse, grid estimators of the BMO_2 norm of H.W, the energy inequality,
// the reverse Hoelder constant, and stochastic exponentials.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "qsmp/path_array.hpp"
#include "qsmp/regression.hpp"

namespace qsmp {

/// Psi(x) = sqrt(1 + x^-2 ln((2x-1)/(2(x-1)))) - 1 for x > 1. Throws DomainError otherwise.
double psi(double x);

/// Psi evaluated at x = 1 + exp(log_excess); usable when x - 1 is below double resolution.
double psi_from_log_excess(double log_excess);

/// A conjugate exponent pair (p, p*) with 1/p + 1/p* = 1.
struct ExponentPair {
  bool infinite = false;      ///< p = +inf, p* = 1 exactly
  double p = 0.0;
  double log_excess = 0.0;    ///< ln(p - 1)
  double p_star = 0.0;        ///< p / (p - 1), +inf if p - 1 underflows
};

/// Solves Psi(p) = nu. nu = 0 yields the infinite marker. Throws DomainError
/// for negative or non-finite nu.
ExponentPair psi_inverse(double nu);

/// K(p, m) = (1 - 2(p-1)/(2p-1) exp{p^2 (m^2 + 2m)})^{-1}; nullopt when the
/// bracket is not positive. Throws DomainError for p < 1 or m < 0.
std::optional<double> reverse_holder_K(double p, double bmo2);

/// Regression basis used to approximate conditional expectations given F_t.
/// When state is null only the constant feature is used.
struct ConditioningFeatures {
  const PathArray* state = nullptr;  ///< grid process whose current value conditions
  RegressionBasis basis{};
};

struct Bmo2Estimate {
  double value = 0.0;           ///< sqrt of max over grid times of ess sup (empirical max)
  double quantile_value = 0.0;  ///< same with the 99.9% path quantile instead of the max
  std::size_t argmax_step = 0;
};

/// Lower-bound estimator of ||H.W||_{BMO_2}. integrand has at least N steps
/// and d components (H_i on [t_i, t_{i+1})); extra trailing steps are ignored.
Bmo2Estimate estimate_bmo2(const PathArray& integrand, const TimeGrid& grid,
                           const ConditioningFeatures& features = {});

struct EnergyRow {
  int n = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_stderr = 0.0;
  bool pass = false;
  double margin() const { return rhs - lhs; }
};

/// E[<M>_T^n] against n! ||M||_{BMO_2}^{2n} for n = 1..n_max (n_max <= 6).
std::vector<EnergyRow> energy_check(const PathArray& integrand, const TimeGrid& grid, int n_max,
                                    const ConditioningFeatures& features = {});

/// Same, with a supplied BMO_2 value for the right-hand side.
std::vector<EnergyRow> energy_check(const PathArray& integrand, const TimeGrid& grid, int n_max, double bmo2);

/// E(H.W) on the grid by exact exponential stepping. Result has N+1 steps, 1 component.
PathArray stochastic_exponential(const PathArray& integrand, const TimeGrid& grid, const PathArray& increments);

struct BmoReport {
  Bmo2Estimate bmo2;
  ExponentPair p_M;
  std::vector<EnergyRow> energy;
  std::optional<double> reverse_holder_K;  ///< at p = reverse_holder_p
  double reverse_holder_p = 0.0;
};

/// Assembles the full diagnostic report for one integrand.
BmoReport bmo_report(const PathArray& integrand, const TimeGrid& grid, int energy_n_max,
                     const ConditioningFeatures& features = {}, double holder_fraction = 0.9);

}  // namespace qsmp
