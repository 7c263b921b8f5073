#include "qsmp/regression.hpp"

#include <algorithm>
#include <cmath>

#include "qsmp/error.hpp"
#include "qsmp/simd.hpp"

namespace qsmp {
namespace {

std::size_t binomial(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Returns standardized copies of the variables with nonzero spread.
std::vector<std::vector<double>> standardize(const std::vector<std::span<const double>>& vars) {
  std::vector<std::vector<double>> out;
  for (const auto& v : vars) {
    const std::size_t m = v.size();
    if (m == 0) continue;
    const double mean = simd::sum(v) / static_cast<double>(m);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(m));
    if (!(sd > 1e-13 * (1.0 + std::abs(mean)))) continue;
    std::vector<double> z(m);
    const double inv = 1.0 / sd;
    for (std::size_t i = 0; i < m; ++i) z[i] = (v[i] - mean) * inv;
    out.push_back(std::move(z));
  }
  return out;
}

// Monomial columns of total degree <= degree, graded order, constant first.
std::vector<std::vector<double>> monomials(const std::vector<std::vector<double>>& vars, int degree,
                                           std::size_t paths) {
  std::vector<std::vector<double>> cols;
  cols.emplace_back(paths, 1.0);
  // Each monomial of degree g is a degree g-1 monomial times one variable
  // whose index is >= the largest index already present.
  struct Mono {
    std::size_t col;
    std::size_t last_var;
  };
  std::vector<Mono> frontier{{0, 0}};
  for (int g = 1; g <= degree; ++g) {
    std::vector<Mono> next;
    for (const Mono& parent : frontier) {
      for (std::size_t v = parent.last_var; v < vars.size(); ++v) {
        std::vector<double> col(paths);
        simd::multiply(cols[parent.col], vars[v], col);
        cols.push_back(std::move(col));
        next.push_back({cols.size() - 1, v});
      }
    }
    frontier = std::move(next);
  }
  return cols;
}

}  // namespace

std::size_t RegressionBasis::feature_count(std::size_t primary, std::size_t augment) const {
  if (kind == Kind::none) return 1;
  return binomial(primary + degree, degree) + augment * binomial(primary + cross_degree, cross_degree);
}

Regressor::Regressor(const RegressionInputs& inputs, const RegressionBasis& basis, double ridge_per_path) {
  paths_ = inputs.primary.empty() ? (inputs.augment.empty() ? 0 : inputs.augment.front().size())
                                  : inputs.primary.front().size();
  if (paths_ == 0) throw IllConditionedError("regression over an empty batch");
  for (const auto& s : inputs.primary)
    if (s.size() != paths_) throw IllConditionedError("regression inputs have inconsistent lengths");
  for (const auto& s : inputs.augment)
    if (s.size() != paths_) throw IllConditionedError("regression inputs have inconsistent lengths");

  if (basis.kind == RegressionBasis::Kind::none) {
    columns_.emplace_back(paths_, 1.0);
  } else {
    const auto prim = standardize(inputs.primary);
    columns_ = monomials(prim, basis.degree, paths_);
    const auto aug = standardize(inputs.augment);
    if (!aug.empty()) {
      const std::size_t cross = std::min(columns_.size(), binomial(prim.size() + basis.cross_degree,
                                                                   static_cast<std::size_t>(basis.cross_degree)));
      const std::size_t base = columns_.size();
      for (const auto& a : aug) {
        for (std::size_t j = 0; j < cross && j < base; ++j) {
          std::vector<double> col(paths_);
          simd::multiply(columns_[j], a, col);
          columns_.push_back(std::move(col));
        }
      }
    }
  }
  factorize(ridge_per_path * static_cast<double>(paths_), true, true);
}

Regressor::Regressor(std::vector<std::vector<double>> columns, double ridge, bool intercept_first)
    : columns_(std::move(columns)) {
  if (columns_.empty() || columns_.front().empty()) throw IllConditionedError("regression with no features");
  paths_ = columns_.front().size();
  for (const auto& c : columns_)
    if (c.size() != paths_) throw IllConditionedError("feature columns have inconsistent lengths");
  factorize(ridge, intercept_first, false);
}

void Regressor::factorize(double ridge, bool intercept_first, bool drop_dependent) {
  auto f = static_cast<Eigen::Index>(columns_.size());
  if (static_cast<std::size_t>(f) >= paths_)
    throw IllConditionedError("regression needs more paths than features");
  gram_.resize(f, f);
  for (Eigen::Index a = 0; a < f; ++a)
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double g = simd::dot(columns_[a], columns_[b]);
      gram_(a, b) = g;
      gram_(b, a) = g;
    }
  double max_diag = 0.0;
  for (Eigen::Index a = 0; a < f; ++a) max_diag = std::max(max_diag, gram_(a, a));
  for (Eigen::Index a = (intercept_first ? 1 : 0); a < f; ++a) gram_(a, a) += ridge;

  if (drop_dependent) {
    // Greedy Cholesky: a column whose residual against the kept ones is
    // negligible is removed instead of failing.
    std::vector<Eigen::Index> keep;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(f, f);
    for (Eigen::Index a = 0; a < f; ++a) {
      const auto r = static_cast<Eigen::Index>(keep.size());
      Eigen::VectorXd l(r);
      for (Eigen::Index i = 0; i < r; ++i) {
        double v = gram_(keep[static_cast<std::size_t>(i)], a);
        for (Eigen::Index j = 0; j < i; ++j) v -= L(i, j) * l(j);
        l(i) = v / L(i, i);
      }
      const double pivot = gram_(a, a) - l.squaredNorm();
      if (!(pivot > 1e-7 * gram_(a, a))) continue;
      L.row(r).head(r) = l.transpose();
      L(r, r) = std::sqrt(pivot);
      keep.push_back(a);
    }
    if (keep.size() < static_cast<std::size_t>(f)) {
      std::vector<std::vector<double>> cols;
      Eigen::MatrixXd g(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(keep.size()));
      for (std::size_t i = 0; i < keep.size(); ++i) {
        cols.push_back(std::move(columns_[static_cast<std::size_t>(keep[i])]));
        for (std::size_t j = 0; j < keep.size(); ++j)
          g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gram_(keep[i], keep[j]);
      }
      columns_ = std::move(cols);
      gram_ = std::move(g);
      f = static_cast<Eigen::Index>(columns_.size());
    }
  }

  factor_.compute(gram_);
  bool ok = factor_.info() == Eigen::Success;
  if (ok) {
    const Eigen::VectorXd diag = factor_.matrixLLT().diagonal();
    const double min_pivot = diag.cwiseAbs2().minCoeff();
    ok = std::isfinite(min_pivot) && min_pivot > 1e-12 * std::max(max_diag, 1e-300);
  }
  if (!ok) throw IllConditionedError("regression design is rank deficient; add ridge or reduce the basis");
}

std::vector<double> Regressor::project(std::span<const double> target, std::span<double> fitted) const {
  const auto f = static_cast<Eigen::Index>(columns_.size());
  Eigen::VectorXd rhs(f);
  for (Eigen::Index a = 0; a < f; ++a) rhs(a) = simd::dot(columns_[a], target);
  const Eigen::VectorXd coef = factor_.solve(rhs);
  std::fill(fitted.begin(), fitted.end(), 0.0);
  for (Eigen::Index a = 0; a < f; ++a) simd::axpy(coef(a), columns_[a], fitted);
  return {coef.data(), coef.data() + f};
}

double Regressor::residual_variance(std::span<const double> target, std::span<const double> fitted) const {
  double ss = 0.0;
  for (std::size_t i = 0; i < paths_; ++i) ss += (target[i] - fitted[i]) * (target[i] - fitted[i]);
  return ss / static_cast<double>(paths_ - columns_.size());
}

void Regressor::fitted_stderr(double residual_variance, std::span<double> out) const {
  // se^2 = s^2 |L^{-1} phi|^2, solved column-wise over all paths at once.
  const auto L = factor_.matrixL().toDenseMatrix();
  const std::size_t f = columns_.size();
  std::vector<std::vector<double>> w(f, std::vector<double>(paths_));
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> sq(paths_);
  for (std::size_t a = 0; a < f; ++a) {
    std::copy(columns_[a].begin(), columns_[a].end(), w[a].begin());
    for (std::size_t b = 0; b < a; ++b) simd::axpy(-L(a, b), w[b], w[a]);
    simd::scale(1.0 / L(a, a), w[a], w[a]);
    simd::multiply(w[a], w[a], sq);
    simd::axpy(1.0, sq, out);
  }
  for (double& v : out) v = std::sqrt(residual_variance * v);
}

RegressionFit regress_conditional_expectation(std::span<const double> features, std::size_t feature_count,
                                              std::span<const double> targets, double ridge) {
  if (feature_count == 0 || features.size() != targets.size() * feature_count)
    throw IllConditionedError("feature matrix shape does not match the targets");
  if (ridge < 0.0) throw DomainError("ridge parameter must be nonnegative");
  const std::size_t m = targets.size();
  std::vector<std::vector<double>> cols(feature_count, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < feature_count; ++a) cols[a][i] = features[i * feature_count + a];
  const Regressor reg(std::move(cols), ridge, false);
  RegressionFit fit;
  fit.fitted.resize(m);
  fit.coefficients = reg.project(targets, fit.fitted);
  return fit;
}

}  // namespace qsmp
