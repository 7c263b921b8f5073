// Acceptance suite: one PASS/FAIL line per criterion. Criteria can be
// selected by number on the command line; the default runs all of them.
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "qsmp/adjoint.hpp"
#include "qsmp/bmo.hpp"
#include "qsmp/error.hpp"
#include "qsmp/expr.hpp"
#include "qsmp/families.hpp"
#include "qsmp/parallel.hpp"
#include "qsmp/pipeline.hpp"
#include "qsmp/smp.hpp"

namespace {

using namespace qsmp;
namespace fs = std::filesystem;

// Tolerances and sizes.
constexpr double kCombinedSe = 3.0;          // criteria 1, 3, 4
constexpr double kRateLow = 1.8, kRateHigh = 2.2, kRemainderMin = 2.3;
constexpr double kRiccatiGap = 0.01;         // criterion 6
constexpr double kMpViolationMax = 0.01;
constexpr double kMpToleranceSe = 5.0;
constexpr double kRoundTrip = 1e-8;          // criterion 7
constexpr double kHolderFraction = 0.9;
constexpr double kRuntimeLimit = 60.0;       // seconds, criterion 1
constexpr std::size_t kPaths = 100000;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& note) {
    pass = pass && ok;
    notes.push_back((ok ? "ok   " : "FAIL ") + note);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Quadratic BSDE against quadrature.
Outcome criterion1() {
  Outcome o;
  const unsigned saved = parallel::threads();
  parallel::set_threads(1);
  const auto t0 = std::chrono::steady_clock::now();
  const ProblemSpec spec = exponential_utility_family();
  const TimeGrid grid(100, 1.0);
  const auto noise = simulate_brownian(grid, kPaths, 1, 1);
  const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
  const BackwardSolution s = solve_quadratic_bsde(spec, grid, noise, f);
  const double elapsed = seconds_since(t0);
  parallel::set_threads(saved);
  const double exact = std::log(testing::gauss_hermite_expectation(
      [](double g) { return std::exp(std::tanh(g)); }, 200));
  const double z = std::abs(s.y0 - exact) / s.y0_stderr;
  o.check(z <= kCombinedSe, fmt("Y0 %.6f  quadrature %.6f  se %.2e  |z| %.2f", s.y0, exact, s.y0_stderr, z));
  o.check(elapsed < kRuntimeLimit, fmt("single-threaded runtime %.1f s", elapsed));
  return o;
}

// 2. A-priori bound over ten seeds.
Outcome criterion2() {
  Outcome o;
  const ProblemSpec spec = exponential_utility_family();
  const DerivedConstants c = derive_constants(spec);
  const TimeGrid grid(100, 1.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto noise = simulate_brownian(grid, kPaths, 1, seed);
    const ForwardBatch f = solve_forward_sde(spec, grid, noise, ConstantControl({0.0}));
    const BackwardSolution s = solve_quadratic_bsde(spec, grid, noise, f);
    const BoundReport r = estimate_apriori_bound(s, c, grid, &f.states);
    o.check(r.combined < c.A && r.margin() > 0.0,
            fmt("seed %2llu  sup|Y| %.4f  bmo2 %.4f  combined %.4f  A %.3f", static_cast<unsigned long long>(seed),
                r.sup_abs_y, r.bmo2.value, r.combined, c.A));
  }
  return o;
}

struct ReferencePieces {
  ForwardBatch fbar;
  BackwardSolution bbar;
  AdjointSolution adj;
  PathArray uhat;
  VariationalForwardBatch var;
  BackwardSolution aux;
};

ReferencePieces reference_pieces(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                 const ControlProcess& ub, const ControlProcess& u) {
  ReferencePieces p;
  p.fbar = solve_forward_sde(spec, grid, noise, ub);
  p.bbar = solve_quadratic_bsde(spec, grid, noise, p.fbar);
  p.adj = solve_adjoint(spec, grid, noise, p.fbar, p.bbar);
  p.uhat = control_difference(realize_control(spec, grid, noise, u), p.fbar.controls);
  p.var = solve_variational_sde(spec, grid, noise, p.fbar, p.uhat);
  p.aux = solve_auxiliary(spec, grid, noise, p.fbar, p.bbar, p.adj, p.uhat);
  return p;
}

// 3. Decoupling of the variational BSDE on the tanh family.
Outcome criterion3() {
  Outcome o;
  const ProblemSpec spec = tanh_family();
  const std::vector<std::size_t> Ns = {50, 100, 200};
  std::vector<double> mean_max(Ns.size(), 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t j = 0; j < Ns.size(); ++j) {
      const TimeGrid grid(Ns[j], 1.0);
      const auto noise = simulate_brownian(grid, kPaths, 1, seed);
      const ReferencePieces p = reference_pieces(spec, grid, noise, ConstantControl({0.0}), ConstantControl({0.5}));
      BackwardOptions vo;
      vo.basis.cross_degree = 1;
      vo.conditioning.augment.push_back(&p.var.states);
      const BackwardSolution y1 = solve_variational_bsde(spec, grid, noise, p.fbar, p.bbar, p.var, vo);
      const RelationReport r = check_decoupling(spec, grid, noise, p.fbar, p.bbar, p.adj, p.var, y1, p.aux);
      mean_max[j] += r.y_residual.max / 5.0;
      o.check(r.t0_residual <= kCombinedSe * r.t0_stderr,
              fmt("seed %llu N %3zu  max residual %.4f  |Y1(0) - Yhat0| %.2e  se %.2e",
                  static_cast<unsigned long long>(seed), Ns[j], r.y_residual.max, r.t0_residual, r.t0_stderr));
    }
  }
  o.check(mean_max[0] > mean_max[1] && mean_max[1] > mean_max[2],
          fmt("mean max residual over seeds: N=50 %.4f  N=100 %.4f  N=200 %.4f", mean_max[0], mean_max[1],
              mean_max[2]));
  return o;
}

// 4. Difference quotients of J against Yhat_0 on families (a) and (c).
Outcome criterion4() {
  Outcome o;
  const std::vector<std::pair<std::string, ProblemSpec>> families = {
      {"exponential-utility", exponential_utility_family()}, {"tanh", tanh_family()}};
  for (const auto& [name, spec] : families) {
    const TimeGrid grid(100, 1.0);
    const auto noise = simulate_brownian(grid, kPaths, 1, 7);
    const GradientCheckReport r =
        gateaux_check(spec, grid, noise, ConstantControl({0.0}), ConstantControl({0.5}), default_epsilons());
    o.check(std::abs(r.intercept_z()) <= kCombinedSe,
            fmt("%-19s intercept %.5f (%.1e)  Yhat0 %.5f (%.1e)  |z| %.2f", name.c_str(), r.extrapolated_intercept,
                r.intercept_stderr, r.yhat0, r.yhat0_stderr, std::abs(r.intercept_z())));
    o.check(std::abs(r.representation_z()) <= kCombinedSe,
            fmt("%-19s Yhat0 %.5f  Gamma representation %.5f (%.1e)  |z| %.2f", name.c_str(), r.yhat0,
                r.yhat0_gamma, r.yhat0_gamma_stderr, std::abs(r.representation_z())));
  }
  return o;
}

bool remainder_ok(const SlopeFit& f) {
  return f.status == SlopeFit::Status::exact || (f.status == SlopeFit::Status::fitted && f.slope > kRemainderMin);
}

std::string describe(const SlopeFit& f) {
  return f.status == SlopeFit::Status::fitted ? fmt("slope %.3f", f.slope) : std::string(to_string(f.status));
}

// 5. Expansion rates on the linear-quadratic family.
Outcome criterion5() {
  Outcome o;
  const ProblemSpec spec = linear_quadratic_family();
  const std::size_t N = 100;
  const TimeGrid grid(N, 1.0);
  const auto noise = simulate_brownian(grid, kPaths, 1, 3);
  AffineFeedback ub(N, 1, spec.domain);
  for (std::size_t i = 0; i <= N; ++i) ub.gain(i, 0, 0) = -0.5;
  const PathArray tb = realize_control(spec, grid, noise, ub);
  const PathArray tu = realize_control(spec, grid, noise, ConstantControl({0.5}));
  const auto eps = default_epsilons();
  const RateReport rx = expansion_rate_check(spec, grid, noise, tb, tu, eps);
  const RateReport ry = backward_expansion_rate_check(spec, grid, noise, tb, tu, eps);
  const SlopeFit& fx = rx.first_order_fit;
  o.check(fx.status == SlopeFit::Status::fitted && fx.slope >= kRateLow && fx.slope <= kRateHigh,
          "E sup|X^eps - Xbar|^2: " + describe(fx));
  o.check(remainder_ok(rx.remainder_fit),
          "X remainder: " + describe(rx.remainder_fit) + fmt("  (largest value %.2e)", rx.remainder.front()));
  o.check(remainder_ok(ry.remainder_fit), "Y remainder: " + describe(ry.remainder_fit));
  return o;
}

// 6. Descent to the Riccati optimum and the pointwise variational inequality.
Outcome criterion6() {
  Outcome o;
  const LinearQuadraticParams lp;
  const ProblemSpec spec = linear_quadratic_family(lp);
  const std::size_t N = 200;
  const TimeGrid grid(N, lp.T);
  const auto noise = simulate_brownian(grid, 50000, 1, 11);
  DescentOptions d;
  d.step = 0.7;
  const AffineFeedback init = random_affine_feedback(N, 1, spec.domain, 5, 1.0);
  const DescentResult res = projected_gradient_descent(spec, grid, noise, init, d);
  const double J = res.trace.back().cost;
  const double rc = riccati_continuous(lp, N).cost, rd = riccati_discrete(lp, N).cost;
  o.check(res.stop_reason != "diverged", fmt("descent stopped: %s after %zu iterations", res.stop_reason.c_str(),
                                             res.trace.size()));
  o.check(std::abs(J - rc) <= kRiccatiGap * rc,
          fmt("J %.6f  continuous Riccati %.6f  gap %.3f%%", J, rc, 100.0 * std::abs(J - rc) / rc));
  o.check(std::abs(J - rd) <= kRiccatiGap * rd,
          fmt("J %.6f  discrete Riccati %.6f  gap %.3f%%", J, rd, 100.0 * std::abs(J - rd) / rd));

  const CandidateSampler sampler(spec.domain);
  MpCheckOptions mo;
  mo.tolerance_se = kMpToleranceSe;
  const MpCheckReport mp = check_maximum_principle(spec, grid, noise, res.control, sampler, mo);
  o.check(mp.violation_fraction <= kMpViolationMax,
          fmt("converged control: %zu evaluations  violations %.3f%%  min normalized %.2f", mp.evaluations,
              100.0 * mp.violation_fraction, mp.min_normalized));
  AffineFeedback perturbed = res.control;
  for (double& v : perturbed.parameters()) v *= 1.1;
  const MpCheckReport bad = check_maximum_principle(spec, grid, noise, perturbed, sampler, mo);
  o.check(bad.min_normalized < -kMpToleranceSe,
          fmt("perturbed control: min normalized %.2f  violations %.3f%%", bad.min_normalized,
              100.0 * bad.violation_fraction));
  return o;
}

// 7. Psi, reverse Hoelder constant, energy inequality and reverse Hoelder moments.
Outcome criterion7() {
  Outcome o;
  bool decreasing = true;
  double last = std::numeric_limits<double>::infinity();
  for (double x = 1.0 + 1e-9; x < 1e6; x = 1.0 + (x - 1.0) * 1.05) {
    const double v = psi(x);
    decreasing = decreasing && v < last;
    last = v;
  }
  o.check(decreasing, "Psi strictly decreasing on a geometric grid over (1, 1e6)");

  double worst = 0.0;
  for (double p = 1.001; p < 1e4; p *= 1.1) worst = std::max(worst, std::abs(psi_inverse(psi(p)).p - p) / p);
  o.check(worst <= kRoundTrip, fmt("psi_inverse(psi(p)) relative error %.2e", worst));

  bool exact = true;
  for (double p : {1.0, 1.25, 2.0, 3.5, 10.0, 1000.0}) exact = exact && reverse_holder_K(p, 0.0) == 2.0 * p - 1.0;
  o.check(exact, "K(p, 0) == 2p - 1");

  const std::size_t N = 50;
  const TimeGrid grid(N, 1.0);
  const auto noise = simulate_brownian(grid, kPaths, 1, 17);
  PathArray w(N + 1, 1, kPaths), bounded(N, 1, kPaths);
  for (std::size_t m = 0; m < kPaths; ++m)
    for (std::size_t i = 0; i < N; ++i) {
      bounded.at(i, 0, m) = 0.8 * std::tanh(w.at(i, 0, m));
      w.at(i + 1, 0, m) = w.at(i, 0, m) + noise.increments.at(i, 0, m);
    }
  const auto rows_ok = [](const std::vector<EnergyRow>& rows) {
    return std::all_of(rows.begin(), rows.end(), [](const EnergyRow& r) { return r.pass; });
  };
  const auto row_text = [](const std::vector<EnergyRow>& rows) {
    std::string s;
    for (const auto& r : rows) s += fmt("  n=%d %.4g <= %.4g", r.n, r.lhs, r.rhs);
    return s;
  };
  for (double c : {0.1, 0.3, 1.0}) {
    const auto rows = energy_check(PathArray(N, 1, kPaths, c), grid, 3);
    o.check(rows_ok(rows), fmt("energy, constant %.1f:", c) + row_text(rows));
  }
  const auto brows = energy_check(bounded, grid, 3, ConditioningFeatures{&w, {}});
  o.check(rows_ok(brows), "energy, 0.8 tanh(W):" + row_text(brows));

  for (double c : {0.1, 0.3, 1.0}) {
    const PathArray h(N, 1, kPaths, c);
    const double bmo = estimate_bmo2(h, grid).value;
    const ExponentPair pm = psi_inverse(bmo);
    const double p = kHolderFraction * pm.p;
    if (p < 1.0) {
      o.check(false, fmt("reverse Hoelder, constant %.1f: p_M %.4f so p = %.4f < 1 and K(p, %.2f) is undefined", c,
                         pm.p, p, bmo));
      continue;
    }
    const auto K = reverse_holder_K(p, bmo);
    if (!K) {
      o.check(false, fmt("reverse Hoelder, constant %.1f: K(%.4f, %.2f) has a nonpositive bracket", c, p, bmo));
      continue;
    }
    // The ratio E_T / E_t is independent of F_t for a constant integrand, so
    // the conditional moment is the plain mean.
    const PathArray e = stochastic_exponential(h, grid, noise.increments);
    double sup = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0.0;
      for (std::size_t m = 0; m < kPaths; ++m) s += std::pow(e.at(N, 0, m) / e.at(i, 0, m), p);
      sup = std::max(sup, s / kPaths);
    }
    o.check(sup <= *K, fmt("reverse Hoelder, constant %.1f: p %.4f  sup_t E[(E_T/E_t)^p] %.5f <= K %.5f", c, p, sup,
                           *K));
  }
  return o;
}

std::map<std::string, std::string> read_directory(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[e.path().filename().string()] = ss.str();
  }
  return out;
}

// 8. Byte-identical artifacts across thread counts; parser fuzz corpus.
Outcome criterion8() {
  Outcome o;
  const std::vector<std::pair<std::string, std::string>> configs = {
      {"solve", "[problem]\nfamily = exponential-utility\n[grid]\nN = 40\n[monte_carlo]\nM = 20000\nseed = 8\n"
                "[pipeline]\nname = solve\n"},
      {"adjoint", "[problem]\nfamily = tanh\n[controls]\ndirection = 0.5\n[grid]\nN = 30\n[monte_carlo]\nM = 10000\n"
                  "[pipeline]\nname = adjoint\n"},
      {"gradient-check", "[problem]\nfamily = tanh\n[controls]\ndirection = 0.5\n[grid]\nN = 20\n"
                         "[monte_carlo]\nM = 8000\n[pipeline]\nname = gradient-check\n"},
  };
  const unsigned saved = parallel::threads();
  const fs::path root = fs::temp_directory_path() / "qsmp_acceptance";
  for (const auto& [name, text] : configs) {
    std::vector<std::map<std::string, std::string>> runs;
    for (unsigned threads : {1u, 4u}) {
      parallel::set_threads(threads);
      const fs::path dir = root / (name + "_" + std::to_string(threads));
      fs::remove_all(dir);
      const RunResult r = run_config_text(text, {std::nullopt, std::nullopt, dir.string(), std::nullopt});
      if (r.exit_code != kExitOk) o.check(false, name + ": run failed: " + r.message);
      runs.push_back(read_directory(dir));
    }
    o.check(!runs[0].empty() && runs[0] == runs[1],
            fmt("%s: %zu files byte-identical with 1 and 4 threads", name.c_str(), runs[0].size()));
  }
  parallel::set_threads(saved);
  fs::remove_all(root);

  std::mt19937_64 rng(2024);
  std::size_t parsed = 0, located = 0, other = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string s = testing::fuzz_string(rng, i);
    try {
      expr::parse(s, {2, 2, 2});
      ++parsed;
    } catch (const ConfigError& e) {
      if (e.line() >= 1 && e.column() >= 1)
        ++located;
      else
        ++other;
    } catch (...) {
      ++other;
    }
  }
  o.check(other == 0 && parsed + located == 1000,
          fmt("fuzz: 1000 strings, %zu parsed, %zu located errors, %zu other", parsed, located, other));
  return o;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  parallel::set_threads(parallel::resolve_threads(0));
  const std::vector<Criterion> all = {
      {1, "quadratic BSDE matches quadrature", criterion1},
      {2, "a-priori bound sup|Y| + BMO2^2 < A", criterion2},
      {3, "decoupling identity for the variational BSDE", criterion3},
      {4, "difference quotients of J match Yhat0", criterion4},
      {5, "expansion rates", criterion5},
      {6, "descent and maximum principle on LQ", criterion6},
      {7, "Psi, energy inequality and reverse Hoelder", criterion7},
      {8, "determinism and parser fuzz", criterion8},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::printf("criterion %d: %s  %s  (%.1f s)\n", c.id, o.pass ? "PASS" : "FAIL", c.title, seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
