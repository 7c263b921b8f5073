#include "qsmp/bsde.hpp"

#include <algorithm>
#include <cmath>

#include "qsmp/error.hpp"
#include "qsmp/parallel.hpp"
#include "qsmp/simd.hpp"

namespace qsmp {
namespace {

void check_inputs(const TimeGrid& grid, const BrownianBatch& noise, const PathArray& state) {
  if (noise.steps() != grid.steps()) throw DomainError("noise batch and time grid have different step counts");
  if (state.steps() != grid.steps() + 1 || state.paths() != noise.paths())
    throw DomainError("forward states do not match the grid and noise");
}

double mean_stderr(std::span<const double> v, double* mean_out) {
  const auto m = static_cast<double>(v.size());
  const double mean = simd::sum(v) / m;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  *mean_out = mean;
  return v.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
}

// Shared regression part of one backward step: conditional mean of the next
// Y and the martingale-increment estimate of Z.
struct StepProjection {
  std::vector<double> ey;     // E_i Y_{i+1}
  std::vector<double> z;      // d*M, component-major
  std::vector<double> coef;
};

void project_step(const Regressor& reg, std::span<const double> y_next, const BrownianBatch& noise, std::size_t step,
                  double dt, StepProjection& out) {
  const std::size_t M = y_next.size(), d = noise.dim();
  out.ey.resize(M);
  out.z.resize(d * M);
  out.coef = reg.project(y_next, out.ey);
  std::vector<double> target(M);
  for (std::size_t j = 0; j < d; ++j) {
    const auto dw = noise.increments.slice(step, j);
    for (std::size_t m = 0; m < M; ++m) target[m] = (y_next[m] - out.ey[m]) * dw[m];
    std::span<double> zj(out.z.data() + j * M, M);
    reg.project(target, zj);
    simd::scale(1.0 / dt, zj, zj);
  }
}

double default_A(const ProblemSpec& spec, const BackwardOptions& options) {
  if (options.bound_A > 0.0) return options.bound_A;
  return derive_constants(spec).A;
}

}  // namespace

Regressor step_regressor(const PathArray& state, const ConditioningSet& conditioning, std::size_t step,
                         const RegressionBasis& basis, double ridge_per_path) {
  RegressionInputs in;
  if (conditioning.include_state)
    for (std::size_t c = 0; c < state.components(); ++c) in.primary.push_back(state.slice(step, c));
  for (const PathArray* p : conditioning.primary)
    for (std::size_t c = 0; c < p->components(); ++c) in.primary.push_back(p->slice(step, c));
  for (const PathArray* p : conditioning.augment)
    for (std::size_t c = 0; c < p->components(); ++c) in.augment.push_back(p->slice(step, c));
  if (in.primary.empty() && in.augment.empty()) in.primary.push_back(state.slice(step, 0));
  return Regressor(in, basis, ridge_per_path);
}

BackwardSolution solve_quadratic_bsde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                      const ForwardBatch& forward, const BackwardOptions& options) {
  spec.check();
  check_inputs(grid, noise, forward.states);
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  const double dt = grid.dt();
  const double A = default_A(spec, options);
  const double radius = options.truncation_radius > 0.0 ? options.truncation_radius : 10.0 * std::sqrt(A / spec.T);
  const double y_cap = 10.0 * A;
  const auto& cf = *spec.coeffs;

  BackwardSolution sol;
  sol.Y = PathArray(N + 1, 1, M);
  sol.Z = PathArray(N + 1, d, M);
  sol.basis = options.basis;
  sol.truncation_radius = radius;
  sol.pathwise.assign(M, 0.0);
  if (options.record_coefficients) sol.coefficients.resize(N);

  {
    auto yN = sol.Y.slice(N, 0);
    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      std::vector<double> x(n);
      for (std::size_t m = begin; m < end; ++m) {
        forward.states.gather(N, m, x);
        yN[m] = cf.terminal(x);
        if (!std::isfinite(yN[m])) throw SolverError("terminal value is not finite", N);
      }
    });
    std::copy(yN.begin(), yN.end(), sol.pathwise.begin());
  }

  StepProjection proj;
  for (std::size_t i = N; i-- > 0;) {
    const Regressor reg = step_regressor(forward.states, options.conditioning, i, options.basis, options.ridge_per_path);
    project_step(reg, sol.Y.slice(i + 1, 0), noise, i, dt, proj);
    if (options.record_coefficients) sol.coefficients[i] = proj.coef;
    const double t = grid.time(i);
    auto yi = sol.Y.slice(i, 0);

    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      std::vector<double> x(n), u(k), z(d);
      for (std::size_t m = begin; m < end; ++m) {
        double zz = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          z[j] = proj.z[j * M + m];
          zz += z[j] * z[j];
        }
        if (zz > radius * radius) {
          const double s = radius / std::sqrt(zz);
          for (double& v : z) v *= s;
        }
        for (std::size_t j = 0; j < d; ++j) sol.Z.at(i, j, m) = z[j];
        forward.states.gather(i, m, x);
        forward.controls.gather(i, m, u);
        const double ey = proj.ey[m];
        double y = ey, g = 0.0;
        bool converged = false;
        for (int it = 0; it < options.max_fixed_point_iterations; ++it) {
          g = cf.generator(t, x, y, z, u);
          const double next = ey + g * dt;
          const bool done = std::abs(next - y) <= options.fixed_point_tolerance * (1.0 + std::abs(next));
          y = next;
          if (done) {
            converged = true;
            break;
          }
        }
        if (!converged || !std::isfinite(y)) throw SolverError("fixed-point iteration for Y did not converge", i);
        if (std::abs(y) > y_cap) throw SolverError("|Y| exceeded 10 A", i);
        yi[m] = y;
        sol.pathwise[m] += g * dt;
      }
    });
  }
  sol.y0_stderr = mean_stderr(sol.pathwise, &sol.y0);
  return sol;
}

namespace {

class StoredDriver final : public LinearDriver {
 public:
  explicit StoredDriver(const LinearBSDEData& data) : data_(data) {}
  void coefficients(std::size_t step, std::span<double> lambda, std::span<double> mu,
                    std::span<double> phi) const override {
    const std::size_t M = lambda.size();
    copy_or_zero(data_.lambda, step, 0, lambda);
    for (std::size_t j = 0; j < mu.size() / std::max<std::size_t>(M, 1); ++j)
      copy_or_zero(data_.mu, step, j, mu.subspan(j * M, M));
    copy_or_zero(data_.phi, step, 0, phi);
  }

 private:
  static void copy_or_zero(const PathArray& a, std::size_t step, std::size_t comp, std::span<double> out) {
    if (a.empty()) {
      std::fill(out.begin(), out.end(), 0.0);
    } else {
      const auto s = a.slice(step, comp);
      std::copy(s.begin(), s.end(), out.begin());
    }
  }
  const LinearBSDEData& data_;
};

}  // namespace

BackwardSolution solve_linear_bsde(const LinearBSDEData& data, const TimeGrid& grid, const BrownianBatch& noise,
                                   const ForwardBatch& forward, const BackwardOptions& options) {
  const std::size_t N = grid.steps(), M = noise.paths(), d = noise.dim();
  auto bad = [&](const PathArray& a, std::size_t comps) {
    return !a.empty() && (a.steps() < N || a.paths() != M || a.components() != comps);
  };
  if (data.xi.size() != M || bad(data.lambda, 1) || bad(data.mu, d) || bad(data.phi, 1))
    throw DomainError("linear BSDE data do not match the grid and noise");
  return solve_linear_bsde(data.xi, StoredDriver(data), grid, noise, forward.states, options);
}

BackwardSolution solve_linear_bsde(std::span<const double> xi, const LinearDriver& driver, const TimeGrid& grid,
                                   const BrownianBatch& noise, const PathArray& state,
                                   const BackwardOptions& options) {
  check_inputs(grid, noise, state);
  const std::size_t d = noise.dim(), N = grid.steps(), M = noise.paths();
  if (xi.size() != M) throw DomainError("terminal values do not match the path count");
  const double dt = grid.dt();

  BackwardSolution sol;
  sol.Y = PathArray(N + 1, 1, M);
  sol.Z = PathArray(N + 1, d, M);
  sol.basis = options.basis;
  if (options.record_coefficients) sol.coefficients.resize(N);
  std::copy(xi.begin(), xi.end(), sol.Y.slice(N, 0).begin());
  for (double v : xi)
    if (!std::isfinite(v)) throw SolverError("terminal value is not finite", N);
  sol.pathwise.assign(xi.begin(), xi.end());

  StepProjection proj;
  std::vector<double> lambda(M), mu(d * M), phi(M);
  for (std::size_t i = N; i-- > 0;) {
    const Regressor reg = step_regressor(state, options.conditioning, i, options.basis, options.ridge_per_path);
    project_step(reg, sol.Y.slice(i + 1, 0), noise, i, dt, proj);
    if (options.record_coefficients) sol.coefficients[i] = proj.coef;
    driver.coefficients(i, lambda, mu, phi);
    auto yi = sol.Y.slice(i, 0);
    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      for (std::size_t m = begin; m < end; ++m) {
        if (!(std::abs(lambda[m]) * dt < 1.0)) throw SolverError("linear coefficient lambda too large for the step", i);
        double drive = phi[m];
        for (std::size_t j = 0; j < d; ++j) {
          const double z = proj.z[j * M + m];
          sol.Z.at(i, j, m) = z;
          drive += mu[j * M + m] * z;
        }
        const double y = (proj.ey[m] + drive * dt) / (1.0 - lambda[m] * dt);
        if (!std::isfinite(y)) throw SolverError("linear BSDE produced a non-finite value", i);
        yi[m] = y;
        sol.pathwise[m] += (lambda[m] * y + drive) * dt;
      }
    });
  }
  sol.y0_stderr = mean_stderr(sol.pathwise, &sol.y0);
  return sol;
}

bool BoundReport::passed() const {
  return combined_pass && std::all_of(moments.begin(), moments.end(), [](const MomentBound& b) { return b.pass; });
}

BoundReport estimate_apriori_bound(const BackwardSolution& solution, const DerivedConstants& constants,
                                   const TimeGrid& grid, const PathArray* state, const RegressionBasis& basis) {
  BoundReport r;
  r.A = constants.A;
  for (double v : solution.Y.raw()) r.sup_abs_y = std::max(r.sup_abs_y, std::abs(v));
  r.bmo2 = estimate_bmo2(solution.Z, grid, ConditioningFeatures{state, basis});
  r.combined = r.sup_abs_y + r.bmo2.value * r.bmo2.value;
  r.combined_pass = r.combined < r.A;

  const std::size_t M = solution.Z.paths(), N = grid.steps();
  std::vector<double> qv(M, 0.0), sq(M);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < solution.Z.components(); ++j) {
      simd::multiply(solution.Z.slice(i, j), solution.Z.slice(i, j), sq);
      simd::axpy(grid.dt(), sq, qv);
    }
  const double fact[] = {1.0, 2.0, 6.0, 24.0};
  for (int p = 1; p <= 3; ++p) {
    MomentBound b;
    b.p = p;
    std::vector<double> pw(M);
    for (std::size_t m = 0; m < M; ++m) pw[m] = std::pow(qv[m], p);
    b.std_error = mean_stderr(pw, &b.value);
    b.bound = fact[p] * std::pow(constants.A, 2 * p);
    b.pass = b.value < b.bound;
    r.moments.push_back(b);
  }
  return r;
}

}  // namespace qsmp
