#include "qsmp/pipeline.hpp"

#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "qsmp/adjoint.hpp"
#include "qsmp/bmo.hpp"
#include "qsmp/bsde.hpp"
#include "qsmp/error.hpp"
#include "qsmp/families.hpp"
#include "qsmp/io.hpp"
#include "qsmp/smp.hpp"

namespace qsmp {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using io::number;

// Path batches larger than this many doubles are not dumped.
constexpr std::size_t kMaxBinaryValues = 10'000'000;

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

class Artifacts {
 public:
  Artifacts(fs::path dir, std::string format) : dir_(std::move(dir)), format_(std::move(format)) {}

  void table(const std::string& stem, const io::Table& t) {
    if (format_ == "json")
      write(stem + ".json", t.json().dump(2) + "\n");
    else
      write(stem + ".csv", t.csv());
  }
  void json_file(const std::string& stem, const json& j) { write(stem + ".json", j.dump(2) + "\n"); }
  void write(const std::string& name, const std::string& content) {
    io::write_atomic(dir_ / name, content);
    files_.push_back({name, io::hex64(io::fnv1a(content))});
  }
  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  fs::path dir_;
  std::string format_;
  std::vector<std::pair<std::string, std::string>> files_;
};

struct Outcome {
  int exit_code = kExitOk;
  std::string status = "ok";
  std::vector<std::string> summary;
};

struct Context {
  const ExperimentConfig& cfg;
  ProblemSpec spec;
  TimeGrid grid;
  BrownianBatch noise;
  BackwardOptions backward;
  AdjointOptions adjoint;

  explicit Context(const ExperimentConfig& c, ProblemSpec s)
      : cfg(c),
        spec(std::move(s)),
        grid(c.steps, spec.T),
        noise(simulate_brownian(grid, c.paths, spec.d, c.seed, c.stream)) {
    backward.basis = c.basis;
    backward.ridge_per_path = c.ridge_per_path;
    adjoint.basis = c.basis;
    adjoint.ridge_per_path = c.ridge_per_path;
  }
};

std::string fmt(double v) { return io::format_double(v); }

const ConfigEntry& require_direction(const ExperimentConfig& cfg, const char* pipeline) {
  if (!cfg.direction) {
    const int line = cfg.file.section_line("controls");
    throw ConfigError(std::string(pipeline) + " needs 'direction' in [controls]", line > 0 ? line : 1, 1);
  }
  return *cfg.direction;
}

std::vector<double> epsilons_of(const ExperimentConfig& cfg) {
  return cfg.epsilons.empty() ? default_epsilons() : cfg.epsilons;
}

json derived_json(const DerivedConstants& d) {
  return {{"alpha_tilde", number(d.alpha_tilde)},
          {"A", number(d.A)},
          {"p_bar", number(d.p_bar)},
          {"log_p_bar_minus_one", number(d.log_p_bar_minus_one)},
          {"p_bar_star", number(d.p_bar_star)},
          {"four_p_bar_star", number(4.0 * d.p_bar_star)},
          {"admissibility_exponent", number(d.admissibility_exponent)},
          {"psi_target", number(d.psi_target)}};
}

io::Table step_table(const Context& ctx, const ForwardBatch& fwd, const BackwardSolution& bwd) {
  std::vector<std::string> header{"step", "t"};
  for (std::size_t r = 0; r < ctx.spec.n; ++r) {
    header.push_back("x" + std::to_string(r + 1) + "_mean");
    header.push_back("x" + std::to_string(r + 1) + "_sd");
  }
  for (std::size_t r = 0; r < ctx.spec.k; ++r) header.push_back("u" + std::to_string(r + 1) + "_mean");
  header.insert(header.end(), {"y_mean", "y_sd"});
  for (std::size_t j = 0; j < ctx.spec.d; ++j) {
    header.push_back("z" + std::to_string(j + 1) + "_mean");
    header.push_back("z" + std::to_string(j + 1) + "_sd");
  }
  io::Table t(header);
  for (std::size_t i = 0; i <= ctx.grid.steps(); ++i) {
    std::vector<io::Table::Cell> row{std::uint64_t{i}, ctx.grid.time(i)};
    for (std::size_t r = 0; r < ctx.spec.n; ++r) {
      const Moments m = moments(fwd.states.slice(i, r));
      row.insert(row.end(), {m.mean, m.sd});
    }
    for (std::size_t r = 0; r < ctx.spec.k; ++r) row.push_back(moments(fwd.controls.slice(i, r)).mean);
    const Moments y = moments(bwd.Y.slice(i, 0));
    row.insert(row.end(), {y.mean, y.sd});
    for (std::size_t j = 0; j < ctx.spec.d; ++j) {
      const Moments z = moments(bwd.Z.slice(i, j));
      row.insert(row.end(), {z.mean, z.sd});
    }
    t.add_row(std::move(row));
  }
  return t;
}

json bound_json(const BoundReport& b) {
  json moments_j = json::array();
  for (const auto& m : b.moments)
    moments_j.push_back({{"p", m.p},
                         {"value", number(m.value)},
                         {"std_error", number(m.std_error)},
                         {"bound", number(m.bound)},
                         {"pass", m.pass}});
  return {{"A", number(b.A)},
          {"sup_abs_y", number(b.sup_abs_y)},
          {"bmo2", number(b.bmo2.value)},
          {"combined", number(b.combined)},
          {"margin", number(b.margin())},
          {"pass", b.passed()},
          {"moments", moments_j}};
}

Outcome run_constants(Context& ctx, Artifacts& out) {
  const DerivedConstants d = derive_constants(ctx.spec);
  ValidationOptions vo;
  vo.fd_tolerance = ctx.cfg.fd_tolerance;
  const ValidationReport rep = validate_assumptions(ctx.spec, ctx.cfg.validation_samples, vo);
  out.json_file("constants", derived_json(d));
  io::Table t({"check", "passed", "worst_ratio"});
  for (const auto& c : rep.checks) t.add_row({c.name, std::int64_t{c.passed}, c.worst_ratio});
  out.table("validation", t);

  Outcome o;
  o.summary.push_back("alpha_tilde = " + fmt(d.alpha_tilde));
  o.summary.push_back("A = " + fmt(d.A));
  o.summary.push_back("p_bar = " + fmt(d.p_bar) + " (ln(p_bar - 1) = " + fmt(d.log_p_bar_minus_one) + ")");
  o.summary.push_back("4 p_bar* = " + fmt(4.0 * d.p_bar_star));
  o.summary.push_back("assumption spot checks: " + std::string(rep.passed() ? "all passed" : "FAILED"));
  if (!rep.passed()) {
    // Declared constants that the coefficients violate are a configuration problem.
    for (const auto& c : rep.checks)
      if (!c.passed) o.summary.push_back("  violated: " + c.name + " (worst ratio " + fmt(c.worst_ratio) + ")");
    o.exit_code = kExitConfigError;
    o.status = "declared constants violated";
  }
  return o;
}

Outcome run_solve(Context& ctx, Artifacts& out) {
  const auto control = build_control(ctx.cfg.reference, ctx.spec);
  const ForwardBatch fwd = solve_forward_sde(ctx.spec, ctx.grid, ctx.noise, *control);
  BackwardOptions bo = ctx.backward;
  bo.record_coefficients = true;
  const BackwardSolution bwd = solve_quadratic_bsde(ctx.spec, ctx.grid, ctx.noise, fwd, bo);
  const DerivedConstants d = derive_constants(ctx.spec);
  const BoundReport bound = estimate_apriori_bound(bwd, d, ctx.grid, &fwd.states, ctx.cfg.basis);

  out.table("solve_steps", step_table(ctx, fwd, bwd));
  io::Table coef({"step", "index", "value"});
  for (std::size_t i = 0; i < bwd.coefficients.size(); ++i)
    for (std::size_t j = 0; j < bwd.coefficients[i].size(); ++j)
      coef.add_row({std::uint64_t{i}, std::uint64_t{j}, bwd.coefficients[i][j]});
  out.table("coefficients", coef);

  const std::size_t values = ctx.noise.paths() * (ctx.grid.steps() + 1) * (ctx.spec.n + ctx.spec.k + 1 + ctx.spec.d);
  const bool dump = values <= kMaxBinaryValues;
  if (dump) {
    io::BinaryContainer bin;
    bin.M = ctx.noise.paths();
    bin.N = ctx.grid.steps();
    bin.n = ctx.spec.n;
    bin.d = ctx.spec.d;
    bin.dt = ctx.grid.dt();
    bin.add("X", fwd.states);
    bin.add("u", fwd.controls);
    bin.add("Y", bwd.Y);
    bin.add("Z", bwd.Z);
    out.write("paths.bin", bin.serialize());
  }
  out.json_file("solve", {{"y0", number(bwd.y0)},
                          {"y0_stderr", number(bwd.y0_stderr)},
                          {"truncation_radius", number(bwd.truncation_radius)},
                          {"derived", derived_json(d)},
                          {"apriori_bound", bound_json(bound)}});
  Outcome o;
  o.summary.push_back("Y_0 = J(u) = " + fmt(bwd.y0) + " +- " + fmt(bwd.y0_stderr));
  o.summary.push_back("sup|Y| + ||Z.W||_BMO2^2 = " + fmt(bound.combined) + " against A = " + fmt(bound.A) +
                      (bound.combined_pass ? " (holds)" : " (EXCEEDED)"));
  if (!dump) o.summary.push_back("paths.bin skipped: batch exceeds " + std::to_string(kMaxBinaryValues) + " values");
  return o;
}

Outcome run_adjoint(Context& ctx, Artifacts& out) {
  const auto control = build_control(ctx.cfg.reference, ctx.spec);
  const ForwardBatch fwd = solve_forward_sde(ctx.spec, ctx.grid, ctx.noise, *control);
  const BackwardSolution bwd = solve_quadratic_bsde(ctx.spec, ctx.grid, ctx.noise, fwd, ctx.backward);
  AdjointOptions ao = ctx.adjoint;
  ao.compute_stderr = true;
  const AdjointSolution adj = solve_adjoint(ctx.spec, ctx.grid, ctx.noise, fwd, bwd, ao);
  const PathArray gamma = gamma_process(ctx.spec, ctx.grid, ctx.noise, fwd, bwd);

  const std::size_t n = ctx.spec.n, d = ctx.spec.d;
  std::vector<std::string> header{"step", "t"};
  for (std::size_t r = 0; r < n; ++r) {
    header.push_back("p" + std::to_string(r + 1) + "_mean");
    header.push_back("p" + std::to_string(r + 1) + "_sd");
    header.push_back("p" + std::to_string(r + 1) + "_stderr_mean");
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) header.push_back("q" + std::to_string(r + 1) + "_" + std::to_string(j + 1) + "_mean");
  header.push_back("gamma_mean");
  io::Table t(header);
  for (std::size_t i = 0; i <= ctx.grid.steps(); ++i) {
    std::vector<io::Table::Cell> row{std::uint64_t{i}, ctx.grid.time(i)};
    for (std::size_t r = 0; r < n; ++r) {
      const Moments m = moments(adj.p.slice(i, r));
      row.insert(row.end(), {m.mean, m.sd, moments(adj.p_stderr.slice(i, r)).mean});
    }
    for (std::size_t c = 0; c < n * d; ++c) row.push_back(moments(adj.q.slice(i, c)).mean);
    row.push_back(moments(gamma.slice(i, 0)).mean);
    t.add_row(std::move(row));
  }
  out.table("adjoint_steps", t);

  json report = {{"y0", number(bwd.y0)}, {"y0_stderr", number(bwd.y0_stderr)}};
  json p0 = json::array();
  for (std::size_t r = 0; r < n; ++r) p0.push_back(number(moments(adj.p.slice(0, r)).mean));
  report["p0"] = p0;

  Outcome o;
  o.summary.push_back("J(u) = " + fmt(bwd.y0) + " +- " + fmt(bwd.y0_stderr));
  o.summary.push_back("p(0) = " + p0.dump());
  if (ctx.cfg.direction) {
    const auto u = build_control(*ctx.cfg.direction, ctx.spec);
    const ForwardBatch fu = solve_forward_sde(ctx.spec, ctx.grid, ctx.noise, *u);
    const PathArray uhat = control_difference(fu.controls, fwd.controls);
    const VariationalForwardBatch var = solve_variational_sde(ctx.spec, ctx.grid, ctx.noise, fwd, uhat);
    BackwardOptions vo = ctx.backward;
    vo.conditioning.augment.push_back(&var.states);
    if (u->path_dependent()) vo.conditioning.primary.push_back(&fu.states);
    const BackwardSolution y1 = solve_variational_bsde(ctx.spec, ctx.grid, ctx.noise, fwd, bwd, var, vo);
    BackwardOptions xo = ctx.backward;
    if (u->path_dependent()) xo.conditioning.primary.push_back(&fu.states);
    const BackwardSolution aux = solve_auxiliary(ctx.spec, ctx.grid, ctx.noise, fwd, bwd, adj, uhat, xo);
    const Estimate g = yhat0_via_gamma(ctx.spec, ctx.grid, ctx.noise, fwd, bwd, adj, gamma, uhat);
    const RelationReport rel = check_decoupling(ctx.spec, ctx.grid, ctx.noise, fwd, bwd, adj, var, y1, aux);
    auto stats = [](const ResidualStats& s) {
      return json{{"max", number(s.max)},
                  {"mean", number(s.mean)},
                  {"q50", number(s.q50)},
                  {"q90", number(s.q90)},
                  {"q99", number(s.q99)}};
    };
    json z = json::array();
    for (const auto& s : rel.z_residual) z.push_back(stats(s));
    report["decoupling"] = {{"y1_0", number(y1.y0)},
                            {"y1_0_stderr", number(y1.y0_stderr)},
                            {"yhat0", number(aux.y0)},
                            {"yhat0_stderr", number(aux.y0_stderr)},
                            {"yhat0_gamma", number(g.value)},
                            {"yhat0_gamma_stderr", number(g.std_error)},
                            {"y_residual", stats(rel.y_residual)},
                            {"z_residual", z},
                            {"t0_residual", number(rel.t0_residual)},
                            {"t0_stderr", number(rel.t0_stderr)}};
    o.summary.push_back("Y_1(0) = " + fmt(y1.y0) + ", Yhat_0 = " + fmt(aux.y0) + " (Gamma form " + fmt(g.value) + ")");
    o.summary.push_back("|Y_1 - Yhat - p.X_1|: max " + fmt(rel.y_residual.max) + ", mean " + fmt(rel.y_residual.mean) +
                        "; at t = 0 " + fmt(rel.t0_residual) + " (se " + fmt(rel.t0_stderr) + ")");
  }
  out.json_file("adjoint", report);
  return o;
}

Outcome run_gradient_check(Context& ctx, Artifacts& out) {
  const ConfigEntry& dir = require_direction(ctx.cfg, "gradient-check");
  const auto u_bar = build_control(ctx.cfg.reference, ctx.spec);
  const auto u = build_control(dir, ctx.spec);
  GradientCheckOptions go;
  go.backward = ctx.backward;
  go.adjoint = ctx.adjoint;
  go.inconclusive_ratio = ctx.cfg.inconclusive_ratio;
  const GradientCheckReport rep = gateaux_check(ctx.spec, ctx.grid, ctx.noise, *u_bar, *u, epsilons_of(ctx.cfg), go);

  io::Table t({"eps", "cost", "fd_slope", "fd_stderr"});
  for (std::size_t j = 0; j < rep.epsilons.size(); ++j)
    t.add_row({rep.epsilons[j], rep.costs[j], rep.fd_slopes[j], rep.fd_stderr[j]});
  out.table("gradient_check_fd", t);
  const bool agree = rep.intercept_z() <= 3.0;
  const bool represent = rep.representation_z() <= 3.0;
  out.json_file("gradient_check", {{"cost_bar", number(rep.cost_bar)},
                                   {"extrapolated_intercept", number(rep.extrapolated_intercept)},
                                   {"intercept_stderr", number(rep.intercept_stderr)},
                                   {"yhat0", number(rep.yhat0)},
                                   {"yhat0_stderr", number(rep.yhat0_stderr)},
                                   {"yhat0_gamma", number(rep.yhat0_gamma)},
                                   {"yhat0_gamma_stderr", number(rep.yhat0_gamma_stderr)},
                                   {"intercept_z", number(rep.intercept_z())},
                                   {"representation_z", number(rep.representation_z())},
                                   {"intercept_matches", agree},
                                   {"representations_match", represent},
                                   {"inconclusive", rep.inconclusive}});
  Outcome o;
  o.summary.push_back("J(ubar) = " + fmt(rep.cost_bar));
  o.summary.push_back("extrapolated difference quotient = " + fmt(rep.extrapolated_intercept) + " +- " +
                      fmt(rep.intercept_stderr));
  o.summary.push_back("Yhat_0 = " + fmt(rep.yhat0) + " +- " + fmt(rep.yhat0_stderr) + " (z = " + fmt(rep.intercept_z()) + ")");
  o.summary.push_back("Yhat_0 via Gamma = " + fmt(rep.yhat0_gamma) + " +- " + fmt(rep.yhat0_gamma_stderr) +
                      " (z = " + fmt(rep.representation_z()) + ")");
  if (rep.inconclusive) {
    o.exit_code = kExitInconclusive;
    o.status = "inconclusive: intercept standard error too large for the configured M";
  } else if (!agree || !represent) {
    o.status = "disagreement beyond 3 standard errors";
  }
  return o;
}

Outcome run_descend(Context& ctx, Artifacts& out) {
  const AffineFeedback initial = random_affine_feedback(ctx.grid.steps(), ctx.spec.n, ctx.spec.domain,
                                                        ctx.cfg.descent_init_seed, ctx.cfg.descent_init_scale);
  DescentOptions dopt;
  dopt.max_iterations = ctx.cfg.descent_iterations;
  dopt.step = ctx.cfg.descent_step;
  dopt.decay = ctx.cfg.descent_decay;
  dopt.gradient_tolerance = ctx.cfg.descent_gradient_tolerance;
  dopt.backward = ctx.backward;
  dopt.adjoint = ctx.adjoint;
  const DescentResult res = projected_gradient_descent(ctx.spec, ctx.grid, ctx.noise, initial, dopt);

  io::Table trace({"iteration", "cost", "std_error", "gradient_norm", "step"});
  for (const auto& it : res.trace)
    trace.add_row({std::uint64_t{it.iteration}, it.cost, it.std_error, it.gradient_norm, it.step});
  out.table("descent", trace);

  const std::size_t n = ctx.spec.n, k = ctx.spec.k;
  std::vector<std::string> header{"step", "t"};
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < n; ++c) header.push_back("K" + std::to_string(r + 1) + "_" + std::to_string(c + 1));
  for (std::size_t r = 0; r < k; ++r) header.push_back("k" + std::to_string(r + 1));
  io::Table ctl(header);
  for (std::size_t i = 0; i <= ctx.grid.steps(); ++i) {
    std::vector<io::Table::Cell> row{std::uint64_t{i}, ctx.grid.time(i)};
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < n; ++c) row.push_back(res.control.gain(i, r, c));
    for (std::size_t r = 0; r < k; ++r) row.push_back(res.control.offset(i, r));
    ctl.add_row(std::move(row));
  }
  out.table("control", ctl);

  const DescentIteration& last = res.trace.back();
  json report = {{"stop_reason", res.stop_reason},
                 {"iterations", res.trace.size()},
                 {"cost", number(last.cost)},
                 {"std_error", number(last.std_error)},
                 {"gradient_norm", number(last.gradient_norm)}};
  Outcome o;
  o.summary.push_back("descent stopped: " + res.stop_reason + " after " + std::to_string(res.trace.size()) + " iterations");
  o.summary.push_back("J = " + fmt(last.cost) + " +- " + fmt(last.std_error) + ", gradient norm " + fmt(last.gradient_norm));
  if (ctx.cfg.family == "linear-quadratic") {
    const LinearQuadraticParams lq = linear_quadratic_params(ctx.cfg.family_params);
    const RiccatiSolution rc = riccati_continuous(lq, ctx.grid.steps());
    const RiccatiSolution rd = riccati_discrete(lq, ctx.grid.steps());
    report["riccati_continuous_cost"] = number(rc.cost);
    report["riccati_discrete_cost"] = number(rd.cost);
    report["relative_gap_continuous"] = number(std::abs(last.cost - rc.cost) / std::abs(rc.cost));
    report["relative_gap_discrete"] = number(std::abs(last.cost - rd.cost) / std::abs(rd.cost));
    o.summary.push_back("Riccati optimum: continuous " + fmt(rc.cost) + ", Euler-discrete " + fmt(rd.cost));
  }
  out.json_file("descent", report);
  if (res.stop_reason == "diverged") {
    o.exit_code = kExitSolverError;
    o.status = "descent diverged";
  }
  return o;
}

Outcome run_mp_check(Context& ctx, Artifacts& out) {
  const auto u_bar = build_control(ctx.cfg.reference, ctx.spec);
  MpCheckOptions mo;
  mo.time_samples = ctx.cfg.mp_time_samples;
  mo.path_samples = ctx.cfg.mp_path_samples;
  mo.candidates = ctx.cfg.mp_candidates;
  mo.tolerance_se = ctx.cfg.mp_tolerance_se;
  mo.seed = ctx.cfg.mp_seed;
  mo.backward = ctx.backward;
  mo.adjoint = ctx.adjoint;
  const CandidateSampler sampler(ctx.spec.domain, ctx.cfg.boundary_fraction);
  const MpCheckReport rep = check_maximum_principle(ctx.spec, ctx.grid, ctx.noise, *u_bar, sampler, mo);
  out.json_file("mp_check", {{"evaluations", rep.evaluations},
                             {"min_inner", number(rep.min_inner)},
                             {"min_normalized", number(rep.min_normalized)},
                             {"violations", rep.violations},
                             {"violation_fraction", number(rep.violation_fraction)},
                             {"tolerance_se", number(rep.tolerance_se)}});
  Outcome o;
  o.summary.push_back(std::to_string(rep.evaluations) + " evaluations of <H_u, u - ubar>");
  o.summary.push_back("min inner product " + fmt(rep.min_inner) + " (" + fmt(rep.min_normalized) + " standard errors)");
  o.summary.push_back("violations beyond " + fmt(rep.tolerance_se) + " standard errors: " +
                      std::to_string(rep.violations) + " (" + fmt(100.0 * rep.violation_fraction) + "%)");
  return o;
}

Outcome run_bmo(Context& ctx, Artifacts& out) {
  const auto control = build_control(ctx.cfg.reference, ctx.spec);
  const ForwardBatch fwd = solve_forward_sde(ctx.spec, ctx.grid, ctx.noise, *control);
  const BackwardSolution bwd = solve_quadratic_bsde(ctx.spec, ctx.grid, ctx.noise, fwd, ctx.backward);
  const BmoReport rep = bmo_report(bwd.Z, ctx.grid, ctx.cfg.energy_n_max, {&fwd.states, ctx.cfg.basis});

  io::Table t({"n", "lhs", "rhs", "margin", "rel_stderr", "pass"});
  for (const auto& r : rep.energy)
    t.add_row({std::int64_t{r.n}, r.lhs, r.rhs, r.margin(), r.rel_stderr, std::int64_t{r.pass}});
  out.table("energy", t);
  out.json_file("bmo", {{"bmo2", number(rep.bmo2.value)},
                        {"bmo2_quantile", number(rep.bmo2.quantile_value)},
                        {"argmax_step", rep.bmo2.argmax_step},
                        {"p_M", rep.p_M.infinite ? json(nullptr) : number(rep.p_M.p)},
                        {"p_M_infinite", rep.p_M.infinite},
                        {"log_p_M_minus_one", number(rep.p_M.log_excess)},
                        {"reverse_holder_p", number(rep.reverse_holder_p)},
                        {"reverse_holder_K", rep.reverse_holder_K ? number(*rep.reverse_holder_K) : json(nullptr)}});
  Outcome o;
  o.summary.push_back("||Z.W||_BMO2 >= " + fmt(rep.bmo2.value) + " (99.9% quantile form " + fmt(rep.bmo2.quantile_value) + ")");
  o.summary.push_back("p_M = " + (rep.p_M.infinite ? std::string("inf") : fmt(rep.p_M.p)));
  bool energy_ok = true;
  for (const auto& r : rep.energy) energy_ok = energy_ok && r.pass;
  o.summary.push_back(std::string("energy inequality ") + (energy_ok ? "holds" : "FAILS") + " for n = 1.." +
                      std::to_string(ctx.cfg.energy_n_max));
  return o;
}

Outcome dispatch(Context& ctx, Artifacts& out) {
  switch (ctx.cfg.pipeline) {
    case Pipeline::solve: return run_solve(ctx, out);
    case Pipeline::adjoint: return run_adjoint(ctx, out);
    case Pipeline::gradient_check: return run_gradient_check(ctx, out);
    case Pipeline::descend: return run_descend(ctx, out);
    case Pipeline::mp_check: return run_mp_check(ctx, out);
    case Pipeline::bmo: return run_bmo(ctx, out);
    case Pipeline::constants: return run_constants(ctx, out);
  }
  return {};
}

void finish(const ExperimentConfig& cfg, Artifacts& out, const Outcome& o, RunResult& result) {
  std::ostringstream s;
  s << "pipeline: " << to_string(cfg.pipeline) << "\n";
  s << "problem: " << (cfg.family.empty() ? std::string("inline") : cfg.family) << "\n";
  s << "grid: N = " << cfg.steps << "; Monte Carlo: M = " << cfg.paths << ", seed = " << cfg.seed
    << ", stream = " << cfg.stream << "\n";
  s << "status: " << o.status << " (exit " << o.exit_code << ")\n\n";
  for (const auto& line : o.summary) s << line << "\n";
  out.write("summary.txt", s.str());

  json files = json::array();
  for (const auto& [name, hash] : out.files()) files.push_back({{"name", name}, {"fnv1a", hash}});
  json manifest = {{"config_hash", io::hex64(io::fnv1a(cfg.text))},
                   {"pipeline", to_string(cfg.pipeline)},
                   {"problem", cfg.family.empty() ? std::string("inline") : cfg.family},
                   {"seed", cfg.seed},
                   {"stream", cfg.stream},
                   {"steps", cfg.steps},
                   {"paths", cfg.paths},
                   {"format", cfg.format},
                   {"versions",
                    {{"qsmp", version()},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                   {"exit_code", o.exit_code},
                   {"status", o.status},
                   {"files", files}};
  const std::string text = manifest.dump(2) + "\n";
  io::write_atomic(fs::path(cfg.output_dir) / "manifest.json", text);
  result.exit_code = o.exit_code;
  result.message = o.status;
  for (const auto& f : out.files()) result.files.push_back(f.first);
  result.files.push_back("manifest.json");
}

}  // namespace

const char* version() { return "1.0.0"; }

void apply_overrides(ExperimentConfig& config, const RunOverrides& o) {
  if (o.pipeline) config.pipeline = *o.pipeline;
  if (o.seed) config.seed = *o.seed;
  if (o.output_dir) config.output_dir = *o.output_dir;
  if (o.format) config.format = *o.format;
}

RunResult run_pipeline(const ExperimentConfig& cfg) {
  RunResult result;
  Outcome failure;
  try {
    Context ctx(cfg, build_problem(cfg));
    Artifacts out(cfg.output_dir, cfg.format);
    Outcome o;
    try {
      o = dispatch(ctx, out);
    } catch (const ConfigError&) {
      throw;
    } catch (const SpecError&) {
      throw;
    } catch (const Error& e) {
      // Solver and evaluation failures still leave a summary and manifest behind.
      o = Outcome{kExitSolverError, std::string("solver error: ") + e.what(), {}};
    }
    finish(cfg, out, o, result);
    if (o.exit_code == kExitOk) result.message = "ok";
    return result;
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfigError;
    result.message = std::string("config error: ") + e.what();
  } catch (const SpecError& e) {
    result.exit_code = kExitConfigError;
    result.message = std::string("config error: ") + e.what();
  } catch (const std::exception& e) {
    result.exit_code = kExitSolverError;
    result.message = std::string("error: ") + e.what();
  }
  return result;
}

RunResult run_config_text(const std::string& text, const RunOverrides& overrides) {
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment(text);
  } catch (const ConfigError& e) {
    return {kExitConfigError, std::string("config error: ") + e.what(), {}};
  }
  apply_overrides(cfg, overrides);
  return run_pipeline(cfg);
}

}  // namespace qsmp
