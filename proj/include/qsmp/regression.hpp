#pragma once

// Least-squares Monte Carlo regression: the empirical conditional
// expectation E[target | F_t] is the projection of the target onto a
// finite basis of functions of the current grid state.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace qsmp {

struct RegressionBasis {
  enum class Kind { polynomial, none };
  Kind kind = Kind::polynomial;
  int degree = 3;        ///< total degree in the primary variables
  int cross_degree = 1;  ///< degree of the polynomial multiplying each augmentation variable

  /// Number of features for the given numbers of primary / augmentation variables.
  std::size_t feature_count(std::size_t primary, std::size_t augment = 0) const;
};

/// Default ridge is this factor times the path count, added to the Gram
/// diagonal of every non-constant feature.
inline constexpr double kDefaultRidgePerPath = 1e-8;

/// Inputs for one time step. Primary variables enter through all monomials
/// up to the basis degree; each augmentation variable enters linearly,
/// multiplied by the monomials up to cross_degree. Variables with zero
/// spread over the batch are dropped, and so is any feature that is
/// (numerically) a linear combination of the ones before it.
struct RegressionInputs {
  std::vector<std::span<const double>> primary;
  std::vector<std::span<const double>> augment;
};

/// Fitted projection operator for one time step.
class Regressor {
 public:
  Regressor(const RegressionInputs& inputs, const RegressionBasis& basis,
            double ridge_per_path = kDefaultRidgePerPath);

  /// Features are supplied directly as columns (each of length M). Column 0
  /// is treated as the intercept and is not penalised when intercept_first is set.
  Regressor(std::vector<std::vector<double>> columns, double ridge, bool intercept_first);

  std::size_t paths() const { return paths_; }
  std::size_t feature_count() const { return columns_.size(); }

  /// Writes the fitted values of target into fitted (may alias target) and
  /// returns the coefficient vector.
  std::vector<double> project(std::span<const double> target, std::span<double> fitted) const;

  /// Residual variance sum (target - fitted)^2 / (M - F).
  double residual_variance(std::span<const double> target, std::span<const double> fitted) const;

  /// Pointwise standard error sqrt(s^2 phi^T (Phi^T Phi)^{-1} phi) of the fitted values.
  void fitted_stderr(double residual_variance, std::span<double> out) const;

 private:
  void factorize(double ridge, bool intercept_first, bool drop_dependent);

  std::size_t paths_ = 0;
  std::vector<std::vector<double>> columns_;
  Eigen::MatrixXd gram_;
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

struct RegressionFit {
  std::vector<double> coefficients;
  std::vector<double> fitted;
};

/// Ridge least squares of targets on the given feature columns (M rows, F
/// columns, row-major). Throws IllConditionedError when ridge = 0 and the
/// design is rank deficient.
RegressionFit regress_conditional_expectation(std::span<const double> features, std::size_t feature_count,
                                              std::span<const double> targets, double ridge);

}  // namespace qsmp
