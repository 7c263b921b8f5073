#include "qsmp/bmo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qsmp/error.hpp"
#include "qsmp/simd.hpp"

namespace qsmp {
namespace {

constexpr double kLn2 = 0.69314718055994530942;

// sqrt(1 + a) - 1 without cancellation for small a.
double sqrt1pm1(double a) { return a / (std::sqrt(1.0 + a) + 1.0); }

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

std::vector<double> quadratic_variation(const PathArray& integrand, const TimeGrid& grid, std::size_t from_step) {
  const std::size_t m = integrand.paths();
  std::vector<double> qv(m, 0.0);
  std::vector<double> sq(m);
  const std::size_t n = std::min(integrand.steps(), grid.steps());
  for (std::size_t i = from_step; i < n; ++i)
    for (std::size_t j = 0; j < integrand.components(); ++j) {
      simd::multiply(integrand.slice(i, j), integrand.slice(i, j), sq);
      simd::axpy(grid.dt(), sq, qv);
    }
  return qv;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  const auto pos = std::min(idx, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(pos), v.end());
  return v[pos];
}

}  // namespace

double psi_from_log_excess(double log_excess) {
  if (std::isnan(log_excess)) throw DomainError("psi: NaN argument");
  if (log_excess == std::numeric_limits<double>::infinity()) return 0.0;
  const double excess = std::exp(log_excess);
  // ln((2x-1)/(2(x-1))) with x = 1 + excess
  const double log_ratio =
      excess > 1.0 ? std::log1p(0.5 / excess) : std::log1p(2.0 * excess) - kLn2 - log_excess;
  const double x = 1.0 + excess;
  return sqrt1pm1(log_ratio / (x * x));
}

double psi(double x) {
  if (!(x > 1.0)) throw DomainError("psi is defined for x > 1");
  if (std::isinf(x)) return 0.0;
  return psi_from_log_excess(std::log(x - 1.0));
}

ExponentPair psi_inverse(double nu) {
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw DomainError("psi_inverse needs a finite nu >= 0");
  ExponentPair out;
  if (nu == 0.0) {
    out.infinite = true;
    out.p = std::numeric_limits<double>::infinity();
    out.log_excess = std::numeric_limits<double>::infinity();
    out.p_star = 1.0;
    return out;
  }
  // Psi is strictly decreasing in ln(x - 1); bracket, then bisect.
  double hi = 0.0;
  while (psi_from_log_excess(hi) >= nu) hi += kLn2;
  double lo = -1.0;
  while (psi_from_log_excess(lo) <= nu) lo *= 2.0;
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (psi_from_log_excess(mid) > nu ? lo : hi) = mid;
  }
  const double le = std::abs(psi_from_log_excess(lo) - nu) < std::abs(psi_from_log_excess(hi) - nu) ? lo : hi;
  out.log_excess = le;
  out.p = 1.0 + std::exp(le);
  out.p_star = 1.0 + std::exp(-le);
  return out;
}

std::optional<double> reverse_holder_K(double p, double bmo2) {
  if (!(p >= 1.0)) throw DomainError("reverse Hoelder constant needs p >= 1");
  if (!(bmo2 >= 0.0)) throw DomainError("BMO norm must be nonnegative");
  const double growth = std::exp(p * p * (bmo2 * bmo2 + 2.0 * bmo2));
  // K = (2p-1) / ((2p-1) - 2(p-1) e)
  const double denom = (2.0 * p - 1.0) - 2.0 * (p - 1.0) * growth;
  if (!(denom > 0.0)) return std::nullopt;
  return (2.0 * p - 1.0) / denom;
}

Bmo2Estimate estimate_bmo2(const PathArray& integrand, const TimeGrid& grid, const ConditioningFeatures& features) {
  const std::size_t n = std::min(integrand.steps(), grid.steps());
  const std::size_t m = integrand.paths();
  Bmo2Estimate est;
  if (m == 0 || n == 0) return est;

  // tail[j] = sum_{i >= j} |H_i|^2 dt, accumulated backwards.
  std::vector<double> tail(m, 0.0), sq(m), fitted(m);
  double best = -1.0, best_q = 0.0;
  for (std::size_t jj = n; jj-- > 0;) {
    for (std::size_t c = 0; c < integrand.components(); ++c) {
      simd::multiply(integrand.slice(jj, c), integrand.slice(jj, c), sq);
      simd::axpy(grid.dt(), sq, tail);
    }
    if (features.state == nullptr || features.basis.kind == RegressionBasis::Kind::none) {
      std::fill(fitted.begin(), fitted.end(), simd::sum(tail) / static_cast<double>(m));
    } else {
      RegressionInputs in;
      for (std::size_t c = 0; c < features.state->components(); ++c) in.primary.push_back(features.state->slice(jj, c));
      Regressor(in, features.basis).project(tail, fitted);
    }
    for (double& v : fitted) v = std::max(v, 0.0);
    const double mx = *std::max_element(fitted.begin(), fitted.end());
    if (mx > best) {
      best = mx;
      est.argmax_step = jj;
    }
    best_q = std::max(best_q, quantile(fitted, 0.999));
  }
  est.value = std::sqrt(std::max(best, 0.0));
  est.quantile_value = std::sqrt(best_q);
  return est;
}

std::vector<EnergyRow> energy_check(const PathArray& integrand, const TimeGrid& grid, int n_max, double bmo2) {
  if (n_max < 1 || n_max > 6) throw DomainError("energy_check supports 1 <= n_max <= 6");
  const std::vector<double> qv = quadratic_variation(integrand, grid, 0);
  const auto m = static_cast<double>(qv.size());
  std::vector<EnergyRow> rows;
  for (int n = 1; n <= n_max; ++n) {
    // Compensated sum: with many equal terms plain accumulation drifts past the rounding allowance.
    double s = 0.0, c = 0.0, s2 = 0.0;
    for (double q : qv) {
      const double v = std::pow(q, n);
      const double t = s + v;
      c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
      s = t;
      s2 += v * v;
    }
    s += c;
    EnergyRow row;
    row.n = n;
    row.lhs = s / m;
    const double var = std::max(s2 / m - row.lhs * row.lhs, 0.0);
    row.rel_stderr = row.lhs > 0.0 ? std::sqrt(var / m) / row.lhs : 0.0;
    row.rhs = factorial(n) * std::pow(bmo2, 2 * n);
    // n = 1 holds with equality for deterministic integrands; allow rounding.
    row.pass = row.lhs <= row.rhs * (1.0 + 5.0 * row.rel_stderr + 1e-12);
    rows.push_back(row);
  }
  return rows;
}

std::vector<EnergyRow> energy_check(const PathArray& integrand, const TimeGrid& grid, int n_max,
                                    const ConditioningFeatures& features) {
  if (n_max < 1 || n_max > 6) throw DomainError("energy_check supports 1 <= n_max <= 6");
  return energy_check(integrand, grid, n_max, estimate_bmo2(integrand, grid, features).value);
}

PathArray stochastic_exponential(const PathArray& integrand, const TimeGrid& grid, const PathArray& increments) {
  const std::size_t n = grid.steps();
  const std::size_t m = integrand.paths();
  if (integrand.steps() < n || increments.steps() < n || integrand.components() != increments.components() ||
      increments.paths() != m)
    throw DomainError("stochastic_exponential: integrand and increments have inconsistent shapes");
  PathArray out(n + 1, 1, m, 1.0);
  std::vector<double> log_e(m, 0.0);
  const double dt = grid.dt();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < m; ++p) {
      double expo = 0.0;
      for (std::size_t j = 0; j < integrand.components(); ++j) {
        const double h = integrand.at(i, j, p);
        expo += h * increments.at(i, j, p) - 0.5 * h * h * dt;
      }
      log_e[p] += expo;
      if (!(std::abs(log_e[p]) <= 700.0)) throw SolverError("stochastic exponential overflow", i);
      out.at(i + 1, 0, p) = std::exp(log_e[p]);
    }
  }
  return out;
}

BmoReport bmo_report(const PathArray& integrand, const TimeGrid& grid, int energy_n_max,
                     const ConditioningFeatures& features, double holder_fraction) {
  BmoReport r;
  r.bmo2 = estimate_bmo2(integrand, grid, features);
  r.p_M = psi_inverse(r.bmo2.value);
  r.energy = energy_check(integrand, grid, energy_n_max, r.bmo2.value);
  if (!r.p_M.infinite) {
    r.reverse_holder_p = holder_fraction * r.p_M.p;
    if (r.reverse_holder_p >= 1.0) r.reverse_holder_K = reverse_holder_K(r.reverse_holder_p, r.bmo2.value);
  }
  return r;
}

}  // namespace qsmp
