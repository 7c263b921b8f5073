#include "qsmp/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "qsmp/bmo.hpp"
#include "qsmp/error.hpp"

namespace qsmp {
namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

// ---------------------------------------------------------------------------
// ControlDomain

ControlDomain ControlDomain::box(std::vector<double> lower, std::vector<double> upper) {
  if (lower.size() != upper.size() || lower.empty()) throw SpecError("box bounds must have equal positive length");
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (!(lower[i] <= upper[i])) throw SpecError("box lower bound exceeds upper bound");
  ControlDomain d;
  d.kind_ = Kind::box;
  d.dim_ = lower.size();
  d.lower_ = std::move(lower);
  d.upper_ = std::move(upper);
  return d;
}

ControlDomain ControlDomain::ball(std::vector<double> center, double radius) {
  if (center.empty() || !(radius >= 0.0)) throw SpecError("ball needs a center and a nonnegative radius");
  ControlDomain d;
  d.kind_ = Kind::ball;
  d.dim_ = center.size();
  d.center_ = std::move(center);
  d.radius_ = radius;
  return d;
}

ControlDomain ControlDomain::halfspaces(std::vector<std::vector<double>> normals, std::vector<double> offsets) {
  if (normals.size() != offsets.size()) throw SpecError("halfspace normals and offsets differ in count");
  if (normals.empty()) throw SpecError("halfspace intersection needs at least one halfspace; use unconstrained");
  ControlDomain d;
  d.kind_ = Kind::halfspaces;
  d.dim_ = normals.front().size();
  for (const auto& a : normals)
    if (a.size() != d.dim_ || norm(a) == 0.0) throw SpecError("halfspace normals must be nonzero and equal length");
  d.normals_ = std::move(normals);
  d.offsets_ = std::move(offsets);
  return d;
}

ControlDomain ControlDomain::unconstrained(std::size_t dim) {
  ControlDomain d;
  d.kind_ = Kind::halfspaces;
  d.dim_ = dim;
  return d;
}

bool ControlDomain::contains(std::span<const double> v, double tolerance) const {
  switch (kind_) {
    case Kind::box:
      for (std::size_t i = 0; i < dim_; ++i)
        if (v[i] < lower_[i] - tolerance || v[i] > upper_[i] + tolerance) return false;
      return true;
    case Kind::ball: {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) s += (v[i] - center_[i]) * (v[i] - center_[i]);
      return std::sqrt(s) <= radius_ + tolerance;
    }
    case Kind::halfspaces:
      for (std::size_t j = 0; j < normals_.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) s += normals_[j][i] * v[i];
        if (s > offsets_[j] + tolerance * (1.0 + norm(normals_[j]))) return false;
      }
      return true;
  }
  return false;
}

void ControlDomain::project(std::span<const double> v, std::span<double> out) const {
  std::copy(v.begin(), v.end(), out.begin());
  project_in_place(out);
}

void ControlDomain::project_in_place(std::span<double> v) const {
  if (contains(v)) return;
  switch (kind_) {
    case Kind::box:
      for (std::size_t i = 0; i < dim_; ++i) v[i] = std::clamp(v[i], lower_[i], upper_[i]);
      return;
    case Kind::ball: {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) s += (v[i] - center_[i]) * (v[i] - center_[i]);
      const double scale = radius_ / std::sqrt(s);
      for (std::size_t i = 0; i < dim_; ++i) v[i] = center_[i] + scale * (v[i] - center_[i]);
      return;
    }
    case Kind::halfspaces: {
      auto project_one = [&](std::size_t j, std::span<double> w) {
        double s = 0.0, aa = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
          s += normals_[j][i] * w[i];
          aa += normals_[j][i] * normals_[j][i];
        }
        if (s > offsets_[j]) {
          const double step = (s - offsets_[j]) / aa;
          for (std::size_t i = 0; i < dim_; ++i) w[i] -= step * normals_[j][i];
        }
      };
      if (normals_.size() == 1) {
        project_one(0, v);
        return;
      }
      // Dykstra's alternating projections converge to the Euclidean projection.
      const std::size_t h = normals_.size();
      std::vector<std::vector<double>> corr(h, std::vector<double>(dim_, 0.0));
      std::vector<double> x(v.begin(), v.end()), y(dim_), prev(dim_);
      for (int sweep = 0; sweep < 10000; ++sweep) {
        prev = x;
        for (std::size_t j = 0; j < h; ++j) {
          for (std::size_t i = 0; i < dim_; ++i) y[i] = x[i] + corr[j][i];
          std::vector<double> p = y;
          project_one(j, p);
          for (std::size_t i = 0; i < dim_; ++i) corr[j][i] = y[i] - p[i];
          x = p;
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) delta = std::max(delta, std::abs(x[i] - prev[i]));
        if (delta <= 1e-15 * (1.0 + norm(x)) && contains(x, 1e-12)) break;
      }
      std::copy(x.begin(), x.end(), v.begin());
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Specs and constants

void AssumptionConstants::check(std::size_t noise_dim) const {
  const double fields[] = {alpha, gamma, L1, L2, L3, f_y_sup, Phi_sup, Phi_x_sup, b_x_sup, b_u_sup, sigma_u_sup};
  for (double v : fields)
    if (!std::isfinite(v) || v < 0.0) throw SpecError("assumption constants must be finite and nonnegative");
  if (!(gamma > 0.0)) throw SpecError("gamma must be strictly positive");
  if (sigma_x_sup.size() != noise_dim) throw SpecError("sigma_x_sup needs one bound per noise column");
  for (double v : sigma_x_sup)
    if (!std::isfinite(v) || v < 0.0) throw SpecError("assumption constants must be finite and nonnegative");
}

void ProblemSpec::check() const {
  if (n < 1 || d < 1 || k < 1) throw SpecError("dimensions n, d, k must be at least 1");
  if (n > kMaxDim || d > kMaxDim || k > kMaxDim) throw SpecError("dimension exceeds the supported maximum");
  if (!(T > 0.0) || !std::isfinite(T)) throw SpecError("horizon T must be positive and finite");
  if (x0.size() != n) throw SpecError("x0 must have length n");
  if (!all_finite(x0)) throw SpecError("x0 must be finite");
  if (!coeffs) throw SpecError("problem has no coefficient set");
  if (domain.dim() != k) throw SpecError("control domain dimension must equal k");
  constants.check(d);
}

double p_bar_target(const ProblemSpec& spec, double A) {
  const auto& c = spec.constants;
  double sigma_sum = 0.0;
  for (double s : c.sigma_x_sup) sigma_sum += s * s;
  const double nd = static_cast<double>(spec.n * spec.d);
  return std::sqrt((c.L3 * c.L3 * spec.T + 2.0 * c.gamma * c.gamma * A) * (3.0 + 4.0 * nd) +
                   2.0 * spec.T * sigma_sum);
}

DerivedConstants derive_constants(const ProblemSpec& spec) {
  spec.check();
  const auto& c = spec.constants;
  const double T = spec.T;
  DerivedConstants out;
  out.alpha_tilde = std::exp(T * c.f_y_sup) *
                    (c.Phi_sup + T * c.f_y_sup + c.alpha * T + c.L2 * c.L2 * T / (4.0 * c.gamma));
  out.A = out.alpha_tilde + (1.0 / (2.0 * c.gamma)) * std::exp(4.0 * c.gamma * out.alpha_tilde) *
                                (1.0 / (4.0 * c.gamma) + (1.0 + c.f_y_sup * T) * out.alpha_tilde);
  out.psi_target = p_bar_target(spec, out.A);
  if (!std::isfinite(out.psi_target) || !(out.psi_target > 0.0))
    throw SpecError("degenerate constants: the p_bar equation has no finite solution");
  const ExponentPair pair = psi_inverse(out.psi_target);
  out.p_bar = pair.p;
  out.log_p_bar_minus_one = pair.log_excess;
  out.p_bar_star = pair.p_star;
  out.admissibility_exponent = 4.0 * pair.p_star;
  return out;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const ValidationCheck& c) { return c.passed; });
}

const ValidationCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

class CheckTable {
 public:
  void record(const std::string& name, double observed, double allowed) {
    double ratio;
    if (observed <= allowed) {
      ratio = allowed > 0.0 ? observed / allowed : 0.0;
    } else {
      ratio = allowed > 0.0 ? observed / allowed : std::numeric_limits<double>::infinity();
    }
    auto& c = entry(name);
    c.worst_ratio = std::max(c.worst_ratio, ratio);
    // Relative slack for rounding in the evaluators.
    if (observed > allowed * (1.0 + 1e-12) + 1e-14) c.passed = false;
  }

  ValidationCheck& entry(const std::string& name) {
    for (auto& c : checks_)
      if (c.name == name) return c;
    checks_.push_back({name, true, 0.0});
    return checks_.back();
  }

  std::vector<ValidationCheck> take() { return std::move(checks_); }

 private:
  std::vector<ValidationCheck> checks_;
};

void sample_ball(std::mt19937_64& rng, double radius, std::span<double> out) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double s = 0.0;
  for (double& v : out) {
    v = g(rng);
    s += v * v;
  }
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(out.size()));
  const double scale = s > 0.0 ? r / std::sqrt(s) : 0.0;
  for (double& v : out) v *= scale;
}

void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw SpecError(std::string("evaluator returned a non-finite value: ") + what);
}

double require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw SpecError(std::string("evaluator returned a non-finite value: ") + what);
  return v;
}

// max |analytic - central difference| / (tol (1 + |analytic|)) over the
// entries of a derivative array. fn(arg, out) evaluates the base function
// at a perturbed copy of the argument.
double fd_ratio(std::span<const double> analytic, std::span<const double> arg, std::size_t outputs,
                double step, double tol, const std::function<void(std::span<const double>, std::span<double>)>& fn,
                std::size_t stride_out, std::size_t stride_arg) {
  std::vector<double> a(arg.begin(), arg.end()), hi(outputs), lo(outputs);
  double worst = 0.0;
  for (std::size_t c = 0; c < arg.size(); ++c) {
    const double h = step * (1.0 + std::abs(arg[c]));
    a[c] = arg[c] + h;
    fn(a, hi);
    a[c] = arg[c] - h;
    fn(a, lo);
    a[c] = arg[c];
    for (std::size_t r = 0; r < outputs; ++r) {
      const double fd = (hi[r] - lo[r]) / (2.0 * h);
      const double an = analytic[r * stride_out + c * stride_arg];
      worst = std::max(worst, std::abs(an - fd) / (tol * (1.0 + std::abs(an))));
    }
  }
  return worst;
}

}  // namespace

ValidationReport validate_assumptions(const ProblemSpec& spec, std::size_t sample_count,
                                      const ValidationOptions& options) {
  if (sample_count < 1) throw DomainError("validate_assumptions needs sample_count >= 1");
  spec.check();
  const auto& cf = *spec.coeffs;
  const auto& c = spec.constants;
  const std::size_t n = spec.n, d = spec.d, k = spec.k;
  const auto& reg = options.region;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> x(n), z(d), u(k), zero_z(d, 0.0);
  std::vector<double> b(n), sig(n * d), bx(n * n), bu(n * k), sx(d * n * n), su(d * n * k);
  std::vector<double> fx(n), fz(d), fu(k), phix(n), tmp;
  CheckTable table;

  for (std::size_t s = 0; s < sample_count; ++s) {
    const double t = spec.T * unif(rng);
    sample_ball(rng, reg.x_radius, x);
    const double y = reg.y_radius * (2.0 * unif(rng) - 1.0);
    sample_ball(rng, reg.z_radius, z);
    sample_ball(rng, reg.u_radius, u);
    spec.domain.project_in_place(u);
    const double zn = norm(z), un = norm(u);

    cf.drift(t, x, u, b);
    require_finite(b, "drift");
    cf.diffusion(t, x, u, sig);
    require_finite(sig, "diffusion");
    const double f = require_finite(cf.generator(t, x, y, z, u), "generator");
    const double f0 = require_finite(cf.generator(t, x, 0.0, zero_z, u), "generator");
    const double phi = require_finite(cf.terminal(x), "terminal");
    cf.drift_dx(t, x, u, bx);
    require_finite(bx, "drift_dx");
    cf.drift_du(t, x, u, bu);
    require_finite(bu, "drift_du");
    cf.diffusion_dx(t, x, u, sx);
    require_finite(sx, "diffusion_dx");
    cf.diffusion_du(t, x, u, su);
    require_finite(su, "diffusion_du");
    cf.generator_dx(t, x, y, z, u, fx);
    require_finite(fx, "generator_dx");
    const double fy = require_finite(cf.generator_dy(t, x, y, z, u), "generator_dy");
    cf.generator_dz(t, x, y, z, u, fz);
    require_finite(fz, "generator_dz");
    cf.generator_du(t, x, y, z, u, fu);
    require_finite(fu, "generator_du");
    cf.terminal_dx(x, phix);
    require_finite(phix, "terminal_dx");
    (void)f;

    const double growth = 1.0 + std::abs(y) + zn * zn + un;
    table.record("generator_at_zero", std::abs(f0), c.alpha);
    table.record("generator_dx_growth", norm(fx), c.L1 * growth);
    table.record("generator_dz_growth", norm(fz), c.L2 + c.gamma * zn);
    table.record("generator_du_growth", norm(fu), c.L3 * growth);
    table.record("generator_dy_bound", std::abs(fy), c.f_y_sup);
    table.record("terminal_bound", std::abs(phi), c.Phi_sup);
    table.record("terminal_dx_bound", norm(phix), c.Phi_x_sup);
    table.record("drift_dx_bound", norm(bx), c.b_x_sup);
    table.record("drift_du_bound", norm(bu), c.b_u_sup);
    for (std::size_t i = 0; i < d; ++i) {
      table.record("diffusion_dx_bound", norm(std::span<const double>(sx).subspan(i * n * n, n * n)),
                   c.sigma_x_sup[i]);
      table.record("diffusion_du_bound", norm(std::span<const double>(su).subspan(i * n * k, n * k)),
                   c.sigma_u_sup);
    }

    // Derivative evaluators against central differences.
    const double h = options.fd_step, tol = options.fd_tolerance;
    auto rec_fd = [&](const std::string& name, double ratio) { table.record(name, ratio, 1.0); };
    rec_fd("fd_drift_dx", fd_ratio(bx, x, n, h, tol, [&](auto a, auto o) { cf.drift(t, a, u, o); }, n, 1));
    rec_fd("fd_drift_du", fd_ratio(bu, u, n, h, tol, [&](auto a, auto o) { cf.drift(t, x, a, o); }, k, 1));
    // diffusion output r*d + i maps to derivative block (i*n + r)
    {
      std::vector<double> sx_re(n * d * n), su_re(n * d * k);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t cc = 0; cc < n; ++cc) sx_re[(r * d + i) * n + cc] = sx[(i * n + r) * n + cc];
          for (std::size_t cc = 0; cc < k; ++cc) su_re[(r * d + i) * k + cc] = su[(i * n + r) * k + cc];
        }
      rec_fd("fd_diffusion_dx",
             fd_ratio(sx_re, x, n * d, h, tol, [&](auto a, auto o) { cf.diffusion(t, a, u, o); }, n, 1));
      rec_fd("fd_diffusion_du",
             fd_ratio(su_re, u, n * d, h, tol, [&](auto a, auto o) { cf.diffusion(t, x, a, o); }, k, 1));
    }
    rec_fd("fd_generator_dx",
           fd_ratio(fx, x, 1, h, tol, [&](auto a, auto o) { o[0] = cf.generator(t, a, y, z, u); }, 0, 1));
    {
      const double yy[1] = {y};
      const double fya[1] = {fy};
      rec_fd("fd_generator_dy", fd_ratio(fya, yy, 1, h, tol,
                                         [&](auto a, auto o) { o[0] = cf.generator(t, x, a[0], z, u); }, 0, 1));
    }
    rec_fd("fd_generator_dz",
           fd_ratio(fz, z, 1, h, tol, [&](auto a, auto o) { o[0] = cf.generator(t, x, y, a, u); }, 0, 1));
    rec_fd("fd_generator_du",
           fd_ratio(fu, u, 1, h, tol, [&](auto a, auto o) { o[0] = cf.generator(t, x, y, z, a); }, 0, 1));
    rec_fd("fd_terminal_dx", fd_ratio(phix, x, 1, h, tol, [&](auto a, auto o) { o[0] = cf.terminal(a); }, 0, 1));
  }

  ValidationReport report;
  report.samples = sample_count;
  report.checks = table.take();
  return report;
}

}  // namespace qsmp
