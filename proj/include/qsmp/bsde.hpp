#pragma once

// Regression-based backward Euler solvers for the quadratic state BSDE and
// for scalar linear BSDEs.

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "qsmp/bmo.hpp"
#include "qsmp/model.hpp"
#include "qsmp/path_array.hpp"
#include "qsmp/paths.hpp"
#include "qsmp/regression.hpp"

namespace qsmp {

/// Grid processes whose current values condition E[. | F_t]. The forward
/// state is always included unless include_state is false.
struct ConditioningSet {
  bool include_state = true;
  std::vector<const PathArray*> primary;
  std::vector<const PathArray*> augment;
};

/// Regressor for step `step` built from the state and the conditioning set.
Regressor step_regressor(const PathArray& state, const ConditioningSet& conditioning, std::size_t step,
                         const RegressionBasis& basis, double ridge_per_path);

struct BackwardOptions {
  RegressionBasis basis{};
  double ridge_per_path = kDefaultRidgePerPath;
  double truncation_radius = 0.0;  ///< <= 0 selects 10 sqrt(A / T)
  double bound_A = 0.0;            ///< <= 0 derives A from the declared constants
  int max_fixed_point_iterations = 50;
  double fixed_point_tolerance = 1e-14;
  ConditioningSet conditioning;
  bool record_coefficients = false;
};

struct BackwardSolution {
  PathArray Y;  ///< N+1 steps x 1
  PathArray Z;  ///< N+1 steps x d; the last step is zero
  double y0 = 0.0;
  double y0_stderr = 0.0;
  /// xi + sum_i g_i dt per path, where g is the generator along the
  /// solution. Its mean is y0 exactly because the regression preserves means.
  std::vector<double> pathwise;
  RegressionBasis basis;
  double truncation_radius = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> coefficients;  ///< per-step Y regression, when recorded
};

/// Backward induction: Z_i = E[(Y_{i+1} - E_i Y_{i+1}) dW_i | F_i] / dt, truncated
/// to |Z| <= R, then Y_i = E_i Y_{i+1} + f(t_i, X_i, Y_i, Z_i, u_i) dt solved
/// by fixed-point iteration. Throws SolverError when the iteration does not
/// converge or |Y| exceeds 10 A.
BackwardSolution solve_quadratic_bsde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                      const ForwardBatch& forward, const BackwardOptions& options = {});

/// Coefficients of the generator lambda Y + mu^T Z + phi, supplied one step at a time.
class LinearDriver {
 public:
  virtual ~LinearDriver() = default;
  /// lambda and phi have M entries; mu has d*M entries, component-major.
  virtual void coefficients(std::size_t step, std::span<double> lambda, std::span<double> mu,
                            std::span<double> phi) const = 0;
};

/// Stored linear data. Empty arrays stand for zero processes.
struct LinearBSDEData {
  std::vector<double> xi;
  PathArray lambda;  ///< N steps x 1
  PathArray mu;      ///< N steps x d
  PathArray phi;     ///< N steps x 1
};

/// Same backward scheme with an affine generator; Y_i is solved in closed form.
BackwardSolution solve_linear_bsde(const LinearBSDEData& data, const TimeGrid& grid, const BrownianBatch& noise,
                                   const ForwardBatch& forward, const BackwardOptions& options = {});

BackwardSolution solve_linear_bsde(std::span<const double> xi, const LinearDriver& driver, const TimeGrid& grid,
                                   const BrownianBatch& noise, const PathArray& state,
                                   const BackwardOptions& options = {});

struct MomentBound {
  int p = 0;
  double value = 0.0;  ///< E[(int |Z|^2 dt)^p]
  double std_error = 0.0;
  double bound = 0.0;  ///< ([p]+1)! A^{2p}
  bool pass = false;
};

struct BoundReport {
  double A = 0.0;
  double sup_abs_y = 0.0;
  Bmo2Estimate bmo2;
  double combined = 0.0;  ///< sup|Y| + bmo2^2
  bool combined_pass = false;
  std::vector<MomentBound> moments;

  double margin() const { return A - combined; }
  bool passed() const;
};

BoundReport estimate_apriori_bound(const BackwardSolution& solution, const DerivedConstants& constants,
                                   const TimeGrid& grid, const PathArray* state = nullptr,
                                   const RegressionBasis& basis = {});

}  // namespace qsmp
