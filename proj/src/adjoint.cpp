#include "qsmp/adjoint.hpp"

#include <algorithm>
#include <cmath>

#include "qsmp/error.hpp"
#include "qsmp/parallel.hpp"
#include "qsmp/simd.hpp"

namespace qsmp {
namespace {

// Coefficient derivatives along the reference solution at one (step, path).
struct Local {
  std::size_t n, d, k;
  std::vector<double> x, u, z, bx, bu, sx, su, fx, fz, fu;
  double y = 0.0, fy = 0.0;

  explicit Local(const ProblemSpec& s)
      : n(s.n), d(s.d), k(s.k), x(n), u(k), z(d), bx(n * n), bu(n * k), sx(d * n * n), su(d * n * k), fx(n),
        fz(d), fu(k) {}

  void load(const ProblemSpec& spec, double t, const ForwardBatch& fwd, const BackwardSolution& bwd,
            std::size_t step, std::size_t path) {
    fwd.states.gather(step, path, x);
    fwd.controls.gather(step, path, u);
    y = bwd.Y.at(step, 0, path);
    bwd.Z.gather(step, path, z);
    const auto& cf = *spec.coeffs;
    cf.drift_dx(t, x, u, bx);
    cf.drift_du(t, x, u, bu);
    cf.diffusion_dx(t, x, u, sx);
    cf.diffusion_du(t, x, u, su);
    cf.generator_dx(t, x, y, z, u, fx);
    fy = cf.generator_dy(t, x, y, z, u);
    cf.generator_dz(t, x, y, z, u, fz);
    cf.generator_du(t, x, y, z, u, fu);
  }
  // sigma_x^i entry (r, c)
  double sxe(std::size_t i, std::size_t r, std::size_t c) const { return sx[(i * n + r) * n + c]; }
  double sue(std::size_t i, std::size_t r, std::size_t c) const { return su[(i * n + r) * k + c]; }

  // b_u^T p + sum_i sigma_u^{iT}(q^i + f_{z_i} p) + f_u + dt sum_i f_{z_i} b_u^T q^i;
  // q is n x d row-major.
  void gradient(std::span<const double> p, std::span<const double> q, double dt, std::span<double> out) const {
    for (std::size_t c = 0; c < k; ++c) {
      double v = fu[c];
      for (std::size_t r = 0; r < n; ++r) {
        v += bu[r * k + c] * p[r];
        for (std::size_t i = 0; i < d; ++i)
          v += sue(i, r, c) * (q[r * d + i] + fz[i] * p[r]) + dt * fz[i] * bu[r * k + c] * q[r * d + i];
      }
      out[c] = v;
    }
  }
};

void check_batch(const TimeGrid& grid, const BrownianBatch& noise, const ForwardBatch& fwd,
                 const BackwardSolution& bwd) {
  const std::size_t N = grid.steps(), M = noise.paths();
  if (noise.steps() != N || fwd.states.steps() != N + 1 || fwd.states.paths() != M || bwd.Y.steps() != N + 1 ||
      bwd.Y.paths() != M)
    throw DomainError("forward/backward solutions do not match the grid and noise");
}

double mean_stderr(std::span<const double> v, double* mean_out) {
  const auto m = static_cast<double>(v.size());
  const double mean = simd::sum(v) / m;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  *mean_out = mean;
  return v.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
}

}  // namespace

AdjointSolution solve_adjoint(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                              const ForwardBatch& forward, const BackwardSolution& backward,
                              const AdjointOptions& options) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  const std::size_t n = spec.n, d = spec.d, N = grid.steps(), M = noise.paths();
  const double dt = grid.dt();
  const auto& cf = *spec.coeffs;

  AdjointSolution sol;
  sol.p = PathArray(N + 1, n, M);
  sol.p_mean = PathArray(N + 1, n, M);
  sol.q = PathArray(N + 1, n * d, M);
  if (options.compute_stderr) {
    sol.p_stderr = PathArray(N + 1, n, M);
    sol.q_stderr = PathArray(N + 1, n * d, M);
  }
  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(n), px(n);
    for (std::size_t m = begin; m < end; ++m) {
      forward.states.gather(N, m, x);
      cf.terminal_dx(x, px);
      for (double v : px)
        if (!std::isfinite(v)) throw SolverError("terminal gradient is not finite", N);
      sol.p.scatter(N, m, px);
      sol.p_mean.scatter(N, m, px);
    }
  });

  std::vector<double> ep(n * M), target(M), se(M);
  for (std::size_t i = N; i-- > 0;) {
    const Regressor reg =
        step_regressor(forward.states, options.conditioning, i, options.basis, options.ridge_per_path);
    for (std::size_t r = 0; r < n; ++r) {
      const auto next = sol.p.slice(i + 1, r);
      std::span<double> e(ep.data() + r * M, M);
      reg.project(next, e);
      if (options.compute_stderr) {
        // Regression error of this step plus the conditional mean of the
        // error variance carried by p_{i+1}; steps are treated as independent.
        reg.fitted_stderr(reg.residual_variance(next, e), se);
        const auto carried = sol.p_stderr.slice(i + 1, r);
        for (std::size_t m = 0; m < M; ++m) target[m] = carried[m] * carried[m];
        reg.project(target, target);
        auto out = sol.p_stderr.slice(i, r);
        for (std::size_t m = 0; m < M; ++m) out[m] = std::sqrt(se[m] * se[m] + std::max(target[m], 0.0));
      }
      for (std::size_t j = 0; j < d; ++j) {
        const auto dw = noise.increments.slice(i, j);
        for (std::size_t m = 0; m < M; ++m) target[m] = (next[m] - e[m]) * dw[m];
        auto qs = sol.q.slice(i, r * d + j);
        reg.project(target, qs);
        if (options.compute_stderr) {
          reg.fitted_stderr(reg.residual_variance(target, qs), se);
          auto out = sol.q_stderr.slice(i, r * d + j);
          for (std::size_t m = 0; m < M; ++m) out[m] = se[m] / dt;
        }
        simd::scale(1.0 / dt, qs, qs);
      }
    }
    std::copy(ep.begin(), ep.end(), sol.p_mean.raw().begin() + static_cast<std::ptrdiff_t>(i * n * M));
    const double t = grid.time(i);
    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      Local loc(spec);
      for (std::size_t m = begin; m < end; ++m) {
        loc.load(spec, t, forward, backward, i, m);
        for (std::size_t r = 0; r < n; ++r) {
          // row r of (I + b_x dt)^T applied to v is v_r + dt sum_c b_x(c, r) v_c
          double v = ep[r * M + m] + loc.fx[r] * dt;
          for (std::size_t c = 0; c < n; ++c) v += dt * loc.bx[c * n + r] * ep[c * M + m];
          for (std::size_t j = 0; j < d; ++j) {
            double qj = sol.q.at(i, r * d + j, m);
            for (std::size_t c = 0; c < n; ++c) qj += dt * loc.bx[c * n + r] * sol.q.at(i, c * d + j, m);
            double sq = 0.0, sp = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              sq += loc.sxe(j, c, r) * sol.q.at(i, c * d + j, m);
              sp += loc.sxe(j, c, r) * ep[c * M + m];
            }
            v += dt * (sq + loc.fz[j] * (qj + sp));
          }
          const double pr = v / (1.0 - loc.fy * dt);
          if (!std::isfinite(pr)) throw SolverError("adjoint produced a non-finite value", i);
          sol.p.at(i, r, m) = pr;
        }
      }
    });
  }
  return sol;
}

PathArray gamma_process(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                        const ForwardBatch& forward, const BackwardSolution& backward) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  const double dt = grid.dt();
  const auto& cf = *spec.coeffs;
  PathArray gamma(N + 1, 1, M, 1.0);
  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(n), u(k), z(d), fz(d);
    for (std::size_t m = begin; m < end; ++m) {
      double log_g = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double t = grid.time(i);
        forward.states.gather(i, m, x);
        forward.controls.gather(i, m, u);
        backward.Z.gather(i, m, z);
        const double y = backward.Y.at(i, 0, m);
        const double fy = cf.generator_dy(t, x, y, z, u);
        cf.generator_dz(t, x, y, z, u, fz);
        double e = fy * dt;
        for (std::size_t j = 0; j < d; ++j) e += fz[j] * noise.increments.at(i, j, m) - 0.5 * fz[j] * fz[j] * dt;
        log_g += e;
        if (!(std::abs(log_g) <= 700.0)) throw SolverError("Gamma exponent overflow", i);
        gamma.at(i + 1, 0, m) = std::exp(log_g);
      }
    }
  });
  return gamma;
}

void reference_gradient(const ProblemSpec& spec, const TimeGrid& grid, const ForwardBatch& forward,
                        const BackwardSolution& backward, const AdjointSolution& adjoint, std::size_t step,
                        std::size_t path, std::span<double> out) {
  Local loc(spec);
  loc.load(spec, grid.time(step), forward, backward, step, path);
  std::vector<double> p(spec.n), q(spec.n * spec.d);
  adjoint.p_mean.gather(step, path, p);
  adjoint.q.gather(step, path, q);
  loc.gradient(p, q, grid.dt(), out);
}

namespace {

class AuxiliaryDriver final : public LinearDriver {
 public:
  AuxiliaryDriver(const ProblemSpec& spec, const TimeGrid& grid, const ForwardBatch& fwd,
                  const BackwardSolution& bwd, const AdjointSolution* adj, const VariationalForwardBatch* var,
                  const PathArray& uhat)
      : spec_(spec), grid_(grid), fwd_(fwd), bwd_(bwd), adj_(adj), var_(var), uhat_(uhat) {}

  void coefficients(std::size_t step, std::span<double> lambda, std::span<double> mu,
                    std::span<double> phi) const override {
    const std::size_t M = lambda.size(), n = spec_.n, d = spec_.d, k = spec_.k;
    const double t = grid_.time(step);
    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      Local loc(spec_);
      std::vector<double> p(n), q(n * d), g(k), uh(k), x1(n);
      for (std::size_t m = begin; m < end; ++m) {
        loc.load(spec_, t, fwd_, bwd_, step, m);
        lambda[m] = loc.fy;
        for (std::size_t j = 0; j < d; ++j) mu[j * M + m] = loc.fz[j];
        uhat_.gather(step, m, uh);
        double v = 0.0;
        if (adj_ != nullptr) {
          adj_->p_mean.gather(step, m, p);
          adj_->q.gather(step, m, q);
          loc.gradient(p, q, grid_.dt(), g);
          for (std::size_t c = 0; c < k; ++c) v += g[c] * uh[c];
        } else {
          var_->states.gather(step, m, x1);
          for (std::size_t r = 0; r < n; ++r) v += loc.fx[r] * x1[r];
          for (std::size_t c = 0; c < k; ++c) v += loc.fu[c] * uh[c];
        }
        phi[m] = v;
      }
    });
  }

 private:
  const ProblemSpec& spec_;
  const TimeGrid& grid_;
  const ForwardBatch& fwd_;
  const BackwardSolution& bwd_;
  const AdjointSolution* adj_;
  const VariationalForwardBatch* var_;
  const PathArray& uhat_;
};

}  // namespace

BackwardSolution solve_auxiliary(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                 const ForwardBatch& forward, const BackwardSolution& backward,
                                 const AdjointSolution& adjoint, const PathArray& uhat,
                                 const BackwardOptions& options) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  if (uhat.steps() != grid.steps() + 1 || uhat.components() != spec.k || uhat.paths() != noise.paths())
    throw DomainError("perturbation table does not match the grid");
  const std::vector<double> xi(noise.paths(), 0.0);
  const AuxiliaryDriver driver(spec, grid, forward, backward, &adjoint, nullptr, uhat);
  return solve_linear_bsde(xi, driver, grid, noise, forward.states, options);
}

Estimate yhat0_via_gamma(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                         const ForwardBatch& forward, const BackwardSolution& backward,
                         const AdjointSolution& adjoint, const PathArray& gamma, const PathArray& uhat) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  const double dt = grid.dt();
  Estimate est;
  est.pathwise.assign(M, 0.0);
  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    Local loc(spec);
    std::vector<double> p(n), q(n * d), g(k), uh(k);
    for (std::size_t m = begin; m < end; ++m) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        uhat.gather(i, m, uh);
        if (std::all_of(uh.begin(), uh.end(), [](double v) { return v == 0.0; })) continue;
        loc.load(spec, grid.time(i), forward, backward, i, m);
        adjoint.p_mean.gather(i, m, p);
        adjoint.q.gather(i, m, q);
        loc.gradient(p, q, dt, g);
        double v = 0.0;
        for (std::size_t c = 0; c < k; ++c) v += g[c] * uh[c];
        s += gamma.at(i, 0, m) * std::exp(loc.fy * dt) * v * dt;
      }
      est.pathwise[m] = s;
    }
  });
  est.std_error = mean_stderr(est.pathwise, &est.value);
  return est;
}

void hamiltonian_shift(const HamiltonianInputs& in, const ProblemSpec& spec, std::span<double> out) {
  const std::size_t n = spec.n, d = spec.d;
  std::vector<double> s(n * d), s_ref(n * d);
  spec.coeffs->diffusion(in.t, in.x, in.u, s);
  spec.coeffs->diffusion(in.t, in.x_ref, in.u_ref, s_ref);
  for (std::size_t i = 0; i < d; ++i) {
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) v += (s[r * d + i] - s_ref[r * d + i]) * in.p[r];
    out[i] = v;
  }
}

double hamiltonian(const HamiltonianInputs& in, const ProblemSpec& spec) {
  const std::size_t n = spec.n, d = spec.d;
  std::vector<double> b(n), s(n * d), delta(d), zs(d);
  spec.coeffs->drift(in.t, in.x, in.u, b);
  spec.coeffs->diffusion(in.t, in.x, in.u, s);
  hamiltonian_shift(in, spec, delta);
  double h = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    h += in.p[r] * b[r];
    for (std::size_t i = 0; i < d; ++i) h += in.q[r * d + i] * s[r * d + i];
  }
  for (std::size_t i = 0; i < d; ++i) zs[i] = in.z[i] + delta[i];
  return h + spec.coeffs->generator(in.t, in.x, in.y, zs, in.u);
}

void hamiltonian_u(const HamiltonianInputs& in, const ProblemSpec& spec, std::span<double> out) {
  const std::size_t n = spec.n, d = spec.d, k = spec.k;
  std::vector<double> bu(n * k), su(d * n * k), delta(d), zs(d), fu(k), fz(d);
  spec.coeffs->drift_du(in.t, in.x, in.u, bu);
  spec.coeffs->diffusion_du(in.t, in.x, in.u, su);
  hamiltonian_shift(in, spec, delta);
  for (std::size_t i = 0; i < d; ++i) zs[i] = in.z[i] + delta[i];
  spec.coeffs->generator_du(in.t, in.x, in.y, zs, in.u, fu);
  spec.coeffs->generator_dz(in.t, in.x, in.y, zs, in.u, fz);
  for (std::size_t c = 0; c < k; ++c) {
    double v = fu[c];
    for (std::size_t r = 0; r < n; ++r) {
      v += bu[r * k + c] * in.p[r];
      for (std::size_t i = 0; i < d; ++i) {
        const double sigma_u = su[(i * n + r) * k + c];
        // row i of Delta_u is p^T sigma_u^i
        v += sigma_u * (in.q[r * d + i] + fz[i] * in.p[r]);
      }
    }
    out[c] = v;
  }
}

BackwardSolution solve_variational_bsde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                        const ForwardBatch& forward, const BackwardSolution& backward,
                                        const VariationalForwardBatch& variational,
                                        const BackwardOptions& options) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  const std::size_t n = spec.n, N = grid.steps(), M = noise.paths();
  if (variational.states.steps() != N + 1 || variational.states.paths() != M)
    throw DomainError("variational batch does not match the grid");
  std::vector<double> xi(M);
  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(n), px(n);
    for (std::size_t m = begin; m < end; ++m) {
      forward.states.gather(N, m, x);
      spec.coeffs->terminal_dx(x, px);
      double v = 0.0;
      for (std::size_t r = 0; r < n; ++r) v += px[r] * variational.states.at(N, r, m);
      xi[m] = v;
    }
  });
  const AuxiliaryDriver driver(spec, grid, forward, backward, nullptr, &variational, variational.perturbation);
  return solve_linear_bsde(xi, driver, grid, noise, forward.states, options);
}

ResidualStats residual_stats(std::vector<double> v) {
  ResidualStats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) {
    s.max = std::max(s.max, x);
    sum += x;
  }
  s.mean = sum / static_cast<double>(v.size());
  auto q = [&](double level) {
    const auto idx = static_cast<std::size_t>(std::ceil(level * static_cast<double>(v.size()))) - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
  };
  s.q50 = q(0.5);
  s.q90 = q(0.9);
  s.q99 = q(0.99);
  return s;
}

RelationReport check_decoupling(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                const ForwardBatch& forward, const BackwardSolution& backward,
                                const AdjointSolution& adjoint, const VariationalForwardBatch& variational,
                                const BackwardSolution& var_backward, const BackwardSolution& auxiliary) {
  spec.check();
  check_batch(grid, noise, forward, backward);
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  RelationReport rep;

  std::vector<double> yres((N + 1) * M);
  std::vector<std::vector<double>> zres(d, std::vector<double>(N * M));
  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    Local loc(spec);
    std::vector<double> p(n), x1(n), uh(k);
    for (std::size_t m = begin; m < end; ++m) {
      for (std::size_t i = 0; i <= N; ++i) {
        adjoint.p.gather(i, m, p);
        variational.states.gather(i, m, x1);
        double px1 = 0.0;
        for (std::size_t r = 0; r < n; ++r) px1 += p[r] * x1[r];
        yres[i * M + m] = std::abs(var_backward.Y.at(i, 0, m) - auxiliary.Y.at(i, 0, m) - px1);
        if (i == N) continue;
        loc.load(spec, grid.time(i), forward, backward, i, m);
        variational.perturbation.gather(i, m, uh);
        for (std::size_t j = 0; j < d; ++j) {
          // Z_1^j = Zhat^j + p^T sigma_u^j uhat + (p^T sigma_x^j + q^{jT}) X_1
          double v = auxiliary.Z.at(i, j, m);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < k; ++c) v += p[r] * loc.sue(j, r, c) * uh[c];
            double row = adjoint.q.at(i, r * d + j, m);
            for (std::size_t c = 0; c < n; ++c) row += p[c] * loc.sxe(j, c, r);
            v += row * x1[r];
          }
          zres[j][i * M + m] = std::abs(var_backward.Z.at(i, j, m) - v);
        }
      }
    }
  });
  rep.y_residual = residual_stats(std::move(yres));
  for (auto& z : zres) rep.z_residual.push_back(residual_stats(std::move(z)));

  std::vector<double> diff(M);
  for (std::size_t m = 0; m < M; ++m) diff[m] = var_backward.pathwise[m] - auxiliary.pathwise[m];
  double mean = 0.0;
  rep.t0_stderr = mean_stderr(diff, &mean);
  rep.t0_residual = std::abs(var_backward.y0 - auxiliary.y0);
  return rep;
}

}  // namespace qsmp
