#include "qsmp/smp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Dense>

#include "qsmp/error.hpp"
#include "qsmp/parallel.hpp"

namespace qsmp {
namespace {

std::shared_ptr<const PathArray> borrow(const PathArray& table) {
  return std::shared_ptr<const PathArray>(std::shared_ptr<const PathArray>{}, &table);
}

double mean_of(std::span<const double> v, double* stderr_out) {
  const auto m = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= m;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  *stderr_out = v.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
  return mean;
}

double combined_z(double a, double sa, double b, double sb) {
  const double se = std::hypot(sa, sb);
  const double gap = std::abs(a - b);
  if (se == 0.0) return gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return gap / se;
}

}  // namespace

Estimate cost_functional(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                         const ControlProcess& control, const BackwardOptions& options) {
  const ForwardBatch fwd = solve_forward_sde(spec, grid, noise, control);
  BackwardSolution bwd = solve_quadratic_bsde(spec, grid, noise, fwd, options);
  return {bwd.y0, bwd.y0_stderr, std::move(bwd.pathwise)};
}

double GradientCheckReport::intercept_z() const {
  return combined_z(extrapolated_intercept, intercept_stderr, yhat0, yhat0_stderr);
}

double GradientCheckReport::representation_z() const {
  return combined_z(yhat0, yhat0_stderr, yhat0_gamma, yhat0_gamma_stderr);
}

GradientCheckReport gateaux_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                  const ControlProcess& u_bar, const ControlProcess& u,
                                  const std::vector<double>& epsilons, const GradientCheckOptions& options) {
  if (epsilons.size() < 2) throw DomainError("the gradient check needs at least two epsilons");
  for (double e : epsilons)
    if (!(e > 0.0 && e <= 1.0)) throw DomainError("epsilons must lie in (0, 1]");
  const std::size_t M = noise.paths();

  const ForwardBatch fbar = solve_forward_sde(spec, grid, noise, u_bar);
  const ForwardBatch fu = solve_forward_sde(spec, grid, noise, u);

  // With a path-dependent control the perturbed controls are functions of
  // both generating trajectories. Every cost then conditions on the same
  // fixed set (Xbar, X^u) and not on X^eps: X^eps tends to Xbar, and a
  // near-duplicate of Xbar in the basis would make the projection jump
  // between eps > 0 and eps = 0.
  BackwardOptions bo = options.backward;
  if (u_bar.path_dependent() || u.path_dependent()) {
    bo.conditioning.include_state = false;
    bo.conditioning.primary.push_back(&fbar.states);
    bo.conditioning.primary.push_back(&fu.states);
  }

  const BackwardSolution bbar = solve_quadratic_bsde(spec, grid, noise, fbar, bo);

  GradientCheckReport rep;
  rep.epsilons = epsilons;
  rep.cost_bar = bbar.y0;

  const std::size_t K = epsilons.size();
  double emean = 0.0;
  for (double e : epsilons) emean += e;
  emean /= static_cast<double>(K);
  double sxx = 0.0;
  for (double e : epsilons) sxx += (e - emean) * (e - emean);

  std::vector<double> quotient(M), intercept(M, 0.0);
  double se = 0.0;
  for (std::size_t j = 0; j < K; ++j) {
    const double eps = epsilons[j];
    const PathArray table = convex_perturbation(fbar.controls, fu.controls, eps);
    const OpenLoopControl control(borrow(table));
    const ForwardBatch fe = solve_forward_sde(spec, grid, noise, control);
    const BackwardSolution be = solve_quadratic_bsde(spec, grid, noise, fe, bo);
    for (std::size_t m = 0; m < M; ++m) quotient[m] = (be.pathwise[m] - bbar.pathwise[m]) / eps;
    rep.costs.push_back(be.y0);
    rep.fd_slopes.push_back(mean_of(quotient, &se));
    rep.fd_stderr.push_back(se);
    const double w = 1.0 / static_cast<double>(K) - (sxx > 0.0 ? emean * (eps - emean) / sxx : 0.0);
    for (std::size_t m = 0; m < M; ++m) intercept[m] += w * quotient[m];
  }
  rep.extrapolated_intercept = mean_of(intercept, &rep.intercept_stderr);

  const PathArray uhat = control_difference(fu.controls, fbar.controls);
  const AdjointSolution adj = solve_adjoint(spec, grid, noise, fbar, bbar, options.adjoint);
  BackwardOptions ao = options.backward;
  if (u.path_dependent()) ao.conditioning.primary.push_back(&fu.states);
  const BackwardSolution aux = solve_auxiliary(spec, grid, noise, fbar, bbar, adj, uhat, ao);
  rep.yhat0 = aux.y0;
  rep.yhat0_stderr = aux.y0_stderr;
  const PathArray gamma = gamma_process(spec, grid, noise, fbar, bbar);
  const Estimate g = yhat0_via_gamma(spec, grid, noise, fbar, bbar, adj, gamma, uhat);
  rep.yhat0_gamma = g.value;
  rep.yhat0_gamma_stderr = g.std_error;

  const double scale = std::max(std::abs(rep.extrapolated_intercept), std::abs(rep.yhat0));
  rep.inconclusive = rep.intercept_stderr > options.inconclusive_ratio * scale;
  return rep;
}

RateReport backward_expansion_rate_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                         const PathArray& u_bar, const PathArray& u,
                                         const std::vector<double>& epsilons, const BackwardOptions& options) {
  if (epsilons.size() < 4) throw DomainError("the rate check needs at least four epsilons");
  for (double e : epsilons)
    if (!(e > 0.0 && e <= 1.0)) throw DomainError("epsilons must lie in (0, 1]");
  const std::size_t N = grid.steps(), M = noise.paths();

  const ForwardBatch fbar = solve_forward_sde(spec, grid, noise, OpenLoopControl(borrow(u_bar)));
  const PathArray uhat = control_difference(u, u_bar);
  const VariationalForwardBatch var = solve_variational_sde(spec, grid, noise, fbar, uhat);

  BackwardOptions bo = options;
  bo.conditioning = ConditioningSet{false, {&fbar.states, &var.states}, {}};
  const BackwardSolution bbar = solve_quadratic_bsde(spec, grid, noise, fbar, bo);
  const BackwardSolution y1 = solve_variational_bsde(spec, grid, noise, fbar, bbar, var, bo);

  RateReport rep;
  rep.epsilons = epsilons;
  for (double eps : epsilons) {
    const PathArray table = convex_perturbation(u_bar, u, eps);
    const ForwardBatch fe = solve_forward_sde(spec, grid, noise, OpenLoopControl(borrow(table)));
    const BackwardSolution be = solve_quadratic_bsde(spec, grid, noise, fe, bo);
    double first = 0.0, rem = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i <= N; ++i) {
        const double dy = be.Y.at(i, 0, m) - bbar.Y.at(i, 0, m);
        s1 = std::max(s1, std::abs(dy));
        s2 = std::max(s2, std::abs(dy - eps * y1.Y.at(i, 0, m)));
      }
      first += s1 * s1;
      rem += s2 * s2;
    }
    rep.first_order.push_back(first / static_cast<double>(M));
    rep.remainder.push_back(rem / static_cast<double>(M));
  }
  rep.first_order_fit = fit_log_slope(rep.epsilons, rep.first_order);
  rep.remainder_fit = fit_log_slope(rep.epsilons, rep.remainder, rep.first_order);
  return rep;
}

AffineFeedback random_affine_feedback(std::size_t steps, std::size_t state_dim, const ControlDomain& domain,
                                      std::uint64_t seed, double scale) {
  AffineFeedback out(steps, state_dim, domain);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : out.parameters()) v = dist(rng);
  return out;
}

namespace {

// Per-step least-squares fit of the field G (k components) on (1, X_i).
// coef has (n + 1) x k entries per step: row 0 is the offset, rows 1..n the gain columns.
struct FieldFit {
  std::vector<double> coef;
  double norm2 = 0.0;
};

FieldFit fit_descent_field(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                           const ForwardBatch& fwd, const BackwardSolution& bwd, const AdjointSolution& adj,
                           const PathArray& gamma) {
  const std::size_t n = spec.n, k = spec.k, N = grid.steps(), M = noise.paths();
  const std::size_t F = n + 1;
  FieldFit out;
  out.coef.assign((N + 1) * F * k, 0.0);
  PathArray field(1, k, M);
  for (std::size_t i = 0; i < N; ++i) {
    parallel::for_chunks(M, [&](std::size_t begin, std::size_t end) {
      std::vector<double> g(k);
      for (std::size_t m = begin; m < end; ++m) {
        reference_gradient(spec, grid, fwd, bwd, adj, i, m, g);
        const double w = gamma.at(i, 0, m);
        for (std::size_t c = 0; c < k; ++c) field.at(0, c, m) = w * g[c];
      }
    });
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(F, F);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(F, k);
    Eigen::VectorXd phi(F);
    for (std::size_t m = 0; m < M; ++m) {
      phi(0) = 1.0;
      for (std::size_t r = 0; r < n; ++r) phi(1 + r) = fwd.states.at(i, r, m);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
      for (std::size_t c = 0; c < k; ++c) rhs.col(c) += field.at(0, c, m) * phi;
    }
    gram.triangularView<Eigen::Upper>() = gram.transpose();
    // A state component with no spread (for example X_0) only supports the offset.
    for (std::size_t r = 1; r < F; ++r) {
      const double mean = gram(0, r) / static_cast<double>(M);
      const double var = gram(r, r) / static_cast<double>(M) - mean * mean;
      if (!(var > 1e-12 * (1.0 + mean * mean))) {
        gram.row(r).setZero();
        gram.col(r).setZero();
        gram(r, r) = 1.0;
        rhs.row(r).setZero();
      }
    }
    const Eigen::MatrixXd sol = gram.ldlt().solve(rhs);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < k; ++c) out.coef[(i * F + f) * k + c] = sol(f, c);
    double acc = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t c = 0; c < k; ++c) {
        double v = sol(0, c);
        for (std::size_t r = 0; r < n; ++r) v += sol(1 + r, c) * fwd.states.at(i, r, m);
        acc += v * v;
      }
    }
    out.norm2 += acc / static_cast<double>(M) * grid.dt();
  }
  return out;
}

void apply_step(AffineFeedback& ctl, const std::vector<double>& coef, std::size_t n, std::size_t k, std::size_t N,
                double eta) {
  const std::size_t F = n + 1;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      ctl.offset(i, c) -= eta * coef[(i * F) * k + c];
      for (std::size_t r = 0; r < n; ++r) ctl.gain(i, c, r) -= eta * coef[(i * F + 1 + r) * k + c];
    }
  }
}

}  // namespace

DescentResult projected_gradient_descent(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                         const AffineFeedback& initial, const DescentOptions& options) {
  spec.check();
  if (initial.steps() != grid.steps() || initial.state_dim() != spec.n || initial.dim() != spec.k)
    throw DomainError("initial feedback does not match the problem and grid");
  if (!(options.step > 0.0)) throw DomainError("descent step must be positive");
  const std::size_t n = spec.n, k = spec.k, N = grid.steps();

  DescentResult res{{}, initial, "max-iterations"};
  AffineFeedback accepted = initial;
  std::vector<double> accepted_coef;
  double accepted_cost = std::numeric_limits<double>::infinity();
  double accepted_stderr = 0.0;
  double eta_scale = 1.0;
  std::size_t increases = 0;

  for (std::size_t it = 0; it <= options.max_iterations; ++it) {
    const ForwardBatch fwd = solve_forward_sde(spec, grid, noise, res.control);
    const BackwardSolution bwd = solve_quadratic_bsde(spec, grid, noise, fwd, options.backward);
    DescentIteration rec;
    rec.iteration = it;
    rec.cost = bwd.y0;
    rec.std_error = bwd.y0_stderr;
    const double eta = options.step * eta_scale / (1.0 + options.decay * static_cast<double>(it));

    if (bwd.y0 > accepted_cost + options.cost_slack_se * accepted_stderr) {
      // Reject: halve the step and retry from the accepted parameters.
      ++increases;
      res.trace.push_back(rec);
      if (increases >= options.divergence_window) {
        res.stop_reason = "diverged";
        res.control = accepted;
        return res;
      }
      eta_scale *= 0.5;
      res.control = accepted;
      rec.step = eta * 0.5;
      res.trace.back().step = rec.step;
      apply_step(res.control, accepted_coef, n, k, N, rec.step);
      continue;
    }
    increases = 0;
    accepted = res.control;
    accepted_cost = bwd.y0;
    accepted_stderr = bwd.y0_stderr;

    const AdjointSolution adj = solve_adjoint(spec, grid, noise, fwd, bwd, options.adjoint);
    const PathArray gamma = gamma_process(spec, grid, noise, fwd, bwd);
    FieldFit fit = fit_descent_field(spec, grid, noise, fwd, bwd, adj, gamma);
    rec.gradient_norm = std::sqrt(fit.norm2);
    accepted_coef = std::move(fit.coef);
    if (rec.gradient_norm <= options.gradient_tolerance) {
      res.trace.push_back(rec);
      res.stop_reason = "converged";
      return res;
    }
    if (it == options.max_iterations) {
      res.trace.push_back(rec);
      break;
    }
    rec.step = eta;
    res.trace.push_back(rec);
    apply_step(res.control, accepted_coef, n, k, N, eta);
  }
  res.control = accepted;
  return res;
}

CandidateSampler::CandidateSampler(ControlDomain domain, double boundary_fraction, double spread)
    : domain_(std::move(domain)), boundary_fraction_(boundary_fraction), spread_(spread) {
  if (!(boundary_fraction >= 0.0 && boundary_fraction <= 1.0)) throw DomainError("boundary fraction must lie in [0, 1]");
  if (!(spread > 0.0)) throw DomainError("sampler spread must be positive");
}

void CandidateSampler::sample(std::mt19937_64& rng, std::span<const double> u_bar, std::span<double> out) const {
  const std::size_t k = domain_.dim();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool outside = unit(rng) < boundary_fraction_;
  const double grow = outside ? 1.0 + spread_ : 1.0;
  switch (domain_.kind()) {
    case ControlDomain::Kind::box:
      for (std::size_t c = 0; c < k; ++c) {
        const double mid = 0.5 * (domain_.lower()[c] + domain_.upper()[c]);
        const double half = 0.5 * (domain_.upper()[c] - domain_.lower()[c]) * grow;
        out[c] = mid + half * (2.0 * unit(rng) - 1.0);
      }
      break;
    case ControlDomain::Kind::ball: {
      double norm = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        out[c] = normal(rng);
        norm += out[c] * out[c];
      }
      norm = std::sqrt(norm);
      const double rad = domain_.radius() * grow * std::pow(unit(rng), 1.0 / static_cast<double>(k));
      for (std::size_t c = 0; c < k; ++c) out[c] = domain_.center()[c] + (norm > 0.0 ? rad * out[c] / norm : 0.0);
      break;
    }
    case ControlDomain::Kind::halfspaces:
      for (std::size_t c = 0; c < k; ++c) out[c] = u_bar[c] + spread_ * grow * normal(rng);
      break;
  }
  domain_.project_in_place(out);
  if (!domain_.contains(out, 1e-9)) throw SolverError("candidate projection left the control domain", 0);
}

MpCheckReport check_maximum_principle(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                      const ControlProcess& u_bar, const CandidateSampler& sampler,
                                      const MpCheckOptions& options) {
  spec.check();
  if (sampler.domain().dim() != spec.k) throw DomainError("sampler domain dimension does not match the control");
  const std::size_t n = spec.n, d = spec.d, k = spec.k, N = grid.steps(), M = noise.paths();
  const ForwardBatch fwd = solve_forward_sde(spec, grid, noise, u_bar);
  const BackwardSolution bwd = solve_quadratic_bsde(spec, grid, noise, fwd, options.backward);
  AdjointOptions ao = options.adjoint;
  ao.compute_stderr = true;
  const AdjointSolution adj = solve_adjoint(spec, grid, noise, fwd, bwd, ao);
  const auto& cf = *spec.coeffs;

  MpCheckReport rep;
  rep.tolerance_se = options.tolerance_se;
  rep.min_inner = std::numeric_limits<double>::infinity();
  rep.min_normalized = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_step(0, N - 1), pick_path(0, M - 1);
  std::vector<double> x(n), ub(k), z(d), p(n), q(n * d), pse(n), qse(n * d), hu(k), cand(k), bu(n * k),
      su(d * n * k), fz(d), var(k);
  for (std::size_t ts = 0; ts < options.time_samples; ++ts) {
    const std::size_t i = pick_step(rng);
    const double t = grid.time(i);
    for (std::size_t ps = 0; ps < options.path_samples; ++ps) {
      const std::size_t m = pick_path(rng);
      fwd.states.gather(i, m, x);
      fwd.controls.gather(i, m, ub);
      bwd.Z.gather(i, m, z);
      adj.p_mean.gather(i, m, p);
      adj.q.gather(i, m, q);
      adj.p_stderr.gather(i, m, pse);
      adj.q_stderr.gather(i, m, qse);
      const double y = bwd.Y.at(i, 0, m);
      const HamiltonianInputs in{t, x, y, z, ub, p, q, x, ub};
      hamiltonian_u(in, spec, hu);

      // Variance of each H_u component from the regression errors of p and q.
      cf.drift_du(t, x, ub, bu);
      cf.diffusion_du(t, x, ub, su);
      cf.generator_dz(t, x, y, z, ub, fz);
      for (std::size_t c = 0; c < k; ++c) {
        double v = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          double a = bu[r * k + c];
          for (std::size_t j = 0; j < d; ++j) {
            const double s = su[(j * n + r) * k + c];
            a += s * fz[j];
            v += s * s * qse[r * d + j] * qse[r * d + j];
          }
          v += a * a * pse[r] * pse[r];
        }
        var[c] = v;
      }

      for (std::size_t cs = 0; cs < options.candidates; ++cs) {
        sampler.sample(rng, ub, cand);
        double inner = 0.0, v = 0.0, scale = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double du = cand[c] - ub[c];
          inner += hu[c] * du;
          v += var[c] * du * du;
          scale += std::abs(hu[c] * du);
        }
        const double se = std::sqrt(v);
        const double tol = std::max(options.tolerance_se * se, 1e-12 * (1.0 + scale));
        ++rep.evaluations;
        rep.min_inner = std::min(rep.min_inner, inner);
        if (se > 0.0) rep.min_normalized = std::min(rep.min_normalized, inner / se);
        if (inner < -tol) ++rep.violations;
      }
    }
  }
  if (rep.evaluations == 0) rep.min_inner = 0.0;
  if (!std::isfinite(rep.min_normalized)) rep.min_normalized = 0.0;
  rep.violation_fraction =
      rep.evaluations ? static_cast<double>(rep.violations) / static_cast<double>(rep.evaluations) : 0.0;
  return rep;
}

}  // namespace qsmp
