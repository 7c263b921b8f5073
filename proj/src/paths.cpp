#include "qsmp/paths.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "qsmp/error.hpp"
#include "qsmp/parallel.hpp"

namespace qsmp {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t path_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t path) {
  return splitmix(splitmix(splitmix(seed) ^ stream) ^ path);
}

constexpr double kExplosion = 1e8;

void check_state(std::span<const double> x, std::size_t step) {
  double s = 0.0;
  for (double v : x) s += v * v;
  if (!(s <= kExplosion * kExplosion)) throw SolverError("forward state left the admissible range", step);
}

void check_shapes(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise) {
  spec.check();
  if (noise.steps() != grid.steps()) throw DomainError("noise batch and time grid have different step counts");
  if (noise.dim() != spec.d) throw DomainError("noise dimension differs from the problem's Brownian dimension");
  if (std::abs(grid.horizon() - spec.T) > 1e-12 * spec.T) throw DomainError("grid horizon differs from the problem's");
}

// Non-owning handle for a caller-owned table.
std::shared_ptr<const PathArray> borrow(const PathArray& table) {
  return std::shared_ptr<const PathArray>(std::shared_ptr<const PathArray>{}, &table);
}

}  // namespace

BrownianBatch simulate_brownian(const TimeGrid& grid, std::size_t paths, std::size_t dim, std::uint64_t seed,
                                std::uint64_t stream_id) {
  if (paths < 1) throw DomainError("simulate_brownian needs at least one path");
  if (dim < 1) throw DomainError("simulate_brownian needs a positive dimension");
  BrownianBatch batch;
  batch.seed = seed;
  batch.stream_id = stream_id;
  batch.increments = PathArray(grid.steps(), dim, paths);
  const double sd = std::sqrt(grid.dt());
  auto& inc = batch.increments;
  parallel::for_chunks(paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      std::mt19937_64 rng(path_seed(seed, stream_id, m));
      std::normal_distribution<double> normal(0.0, sd);
      for (std::size_t i = 0; i < grid.steps(); ++i)
        for (std::size_t c = 0; c < dim; ++c) inc.at(i, c, m) = normal(rng);
    }
  });
  return batch;
}

void ConstantControl::value(std::size_t, double, std::size_t, std::span<const double>, std::span<double> out) const {
  std::copy(value_.begin(), value_.end(), out.begin());
}

AffineFeedback::AffineFeedback(std::size_t steps, std::size_t state_dim, ControlDomain domain)
    : steps_(steps), n_(state_dim), domain_(std::move(domain)) {
  params_.assign((steps_ + 1) * domain_.dim() * (n_ + 1), 0.0);
}

bool AffineFeedback::path_dependent() const {
  const std::size_t g = offset_base();
  return std::any_of(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(g),
                     [](double v) { return v != 0.0; });
}

void AffineFeedback::value(std::size_t step, double, std::size_t, std::span<const double> x,
                           std::span<double> out) const {
  const std::size_t k = dim();
  for (std::size_t r = 0; r < k; ++r) {
    double v = offset(step, r);
    for (std::size_t c = 0; c < n_; ++c) v += gain(step, r, c) * x[c];
    out[r] = v;
  }
  domain_.project_in_place(out);
}

ForwardBatch solve_forward_sde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                               const ControlProcess& control) {
  check_shapes(spec, grid, noise);
  if (control.dim() != spec.k) throw DomainError("control dimension differs from the problem's");
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  const double dt = grid.dt();
  ForwardBatch out{PathArray(N + 1, n, M), PathArray(N + 1, k, M)};
  for (std::size_t r = 0; r < n; ++r) std::fill_n(out.states.slice(0, r).begin(), M, spec.x0[r]);
  const auto& cf = *spec.coeffs;

  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(n), u(k), b(n), sig(n * d);
    for (std::size_t i = 0; i <= N; ++i) {
      const double t = grid.time(i);
      for (std::size_t m = begin; m < end; ++m) {
        out.states.gather(i, m, x);
        control.value(i, t, m, x, u);
        out.controls.scatter(i, m, u);
        if (i == N) continue;
        cf.drift(t, x, u, b);
        cf.diffusion(t, x, u, sig);
        for (std::size_t r = 0; r < n; ++r) {
          double v = x[r] + b[r] * dt;
          for (std::size_t j = 0; j < d; ++j) v += sig[r * d + j] * noise.increments.at(i, j, m);
          x[r] = v;
        }
        check_state(x, i + 1);
        out.states.scatter(i + 1, m, x);
      }
    }
  });
  return out;
}

VariationalForwardBatch solve_variational_sde(const ProblemSpec& spec, const TimeGrid& grid,
                                              const BrownianBatch& noise, const ForwardBatch& base,
                                              const PathArray& uhat) {
  check_shapes(spec, grid, noise);
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  if (base.states.steps() != N + 1 || base.states.paths() != M || uhat.steps() != N + 1 || uhat.paths() != M ||
      uhat.components() != k)
    throw DomainError("variational inputs do not match the grid and noise");
  const double dt = grid.dt();
  VariationalForwardBatch out{PathArray(N + 1, n, M), uhat};
  const auto& cf = *spec.coeffs;

  parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
    std::vector<double> xb(n), ub(k), x1(n), uh(k), bx(n * n), bu(n * k), sx(d * n * n), su(d * n * k), next(n);
    for (std::size_t i = 0; i < N; ++i) {
      const double t = grid.time(i);
      for (std::size_t m = begin; m < end; ++m) {
        base.states.gather(i, m, xb);
        base.controls.gather(i, m, ub);
        out.states.gather(i, m, x1);
        uhat.gather(i, m, uh);
        cf.drift_dx(t, xb, ub, bx);
        cf.drift_du(t, xb, ub, bu);
        cf.diffusion_dx(t, xb, ub, sx);
        cf.diffusion_du(t, xb, ub, su);
        for (std::size_t r = 0; r < n; ++r) {
          double drift = 0.0;
          for (std::size_t c = 0; c < n; ++c) drift += bx[r * n + c] * x1[c];
          for (std::size_t c = 0; c < k; ++c) drift += bu[r * k + c] * uh[c];
          double v = x1[r] + drift * dt;
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) s += sx[(j * n + r) * n + c] * x1[c];
            for (std::size_t c = 0; c < k; ++c) s += su[(j * n + r) * k + c] * uh[c];
            v += s * noise.increments.at(i, j, m);
          }
          next[r] = v;
        }
        check_state(next, i + 1);
        out.states.scatter(i + 1, m, next);
      }
    }
  });
  return out;
}

PathArray realize_control(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                          const ControlProcess& control) {
  return solve_forward_sde(spec, grid, noise, control).controls;
}

PathArray convex_perturbation(const PathArray& u_bar, const PathArray& u, double eps) {
  if (u_bar.steps() != u.steps() || u_bar.components() != u.components() || u_bar.paths() != u.paths())
    throw DomainError("control tables have different shapes");
  PathArray out = u_bar;
  auto o = out.raw();
  auto a = u.raw();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - eps) * o[i] + eps * a[i];
  return out;
}

PathArray control_difference(const PathArray& u, const PathArray& u_bar) {
  if (u_bar.steps() != u.steps() || u_bar.components() != u.components() || u_bar.paths() != u.paths())
    throw DomainError("control tables have different shapes");
  PathArray out = u;
  auto o = out.raw();
  auto b = u_bar.raw();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b[i];
  return out;
}

const char* to_string(SlopeFit::Status status) {
  switch (status) {
    case SlopeFit::Status::fitted: return "fitted";
    case SlopeFit::Status::exact: return "exact";
    case SlopeFit::Status::inconclusive: return "inconclusive";
  }
  return "unknown";
}

SlopeFit fit_log_slope(std::span<const double> eps, std::span<const double> errors,
                       std::span<const double> reference, double exact_ratio) {
  if (eps.size() != errors.size()) throw DomainError("fit_log_slope: size mismatch");
  SlopeFit fit;
  if (!reference.empty()) {
    if (reference.size() != errors.size()) throw DomainError("fit_log_slope: reference size mismatch");
    bool exact = true;
    for (std::size_t i = 0; i < errors.size(); ++i)
      if (!(errors[i] <= exact_ratio * reference[i])) exact = false;
    if (exact) {
      fit.status = SlopeFit::Status::exact;
      return fit;
    }
  }
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (eps[i] > 0.0 && errors[i] > 0.0 && std::isfinite(errors[i])) {
      lx.push_back(std::log2(eps[i]));
      ly.push_back(std::log2(errors[i]));
    }
  }
  if (lx.size() < 2) return fit;
  const auto m = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) return fit;
  fit.status = SlopeFit::Status::fitted;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

std::vector<double> default_epsilons() { return {0.25, 0.125, 0.0625, 0.03125, 0.015625}; }

RateReport expansion_rate_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                const PathArray& u_bar, const PathArray& u, const std::vector<double>& epsilons) {
  if (epsilons.size() < 4) throw DomainError("expansion_rate_check needs at least four epsilons");
  for (double e : epsilons)
    if (!(e > 0.0 && e <= 1.0)) throw DomainError("epsilons must lie in (0, 1]");
  const std::size_t n = spec.n, N = grid.steps(), M = noise.paths();

  const ForwardBatch base = solve_forward_sde(spec, grid, noise, OpenLoopControl(borrow(u_bar)));
  const PathArray uhat = control_difference(u, u_bar);
  const VariationalForwardBatch var = solve_variational_sde(spec, grid, noise, base, uhat);

  RateReport report;
  report.epsilons = epsilons;
  for (double eps : epsilons) {
    const PathArray table = convex_perturbation(u_bar, u, eps);
    const ForwardBatch pert = solve_forward_sde(spec, grid, noise, OpenLoopControl(borrow(table)));
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i <= N; ++i) {
        double a = 0.0, b = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double diff = pert.states.at(i, r, m) - base.states.at(i, r, m);
          const double rem = diff - eps * var.states.at(i, r, m);
          a += diff * diff;
          b += rem * rem;
        }
        s1 = std::max(s1, a);
        s2 = std::max(s2, b);
      }
      e1 += s1;
      e2 += s2;
    }
    report.first_order.push_back(e1 / static_cast<double>(M));
    report.remainder.push_back(e2 / static_cast<double>(M));
  }
  report.first_order_fit = fit_log_slope(report.epsilons, report.first_order);
  report.remainder_fit = fit_log_slope(report.epsilons, report.remainder, report.first_order);
  return report;
}

}  // namespace qsmp
