#include "qsmp/families.hpp"

#include <cmath>
#include <functional>

#include "qsmp/error.hpp"

namespace qsmp {
namespace {

class ExponentialUtility final : public Coefficients {
 public:
  explicit ExponentialUtility(const ExponentialUtilityParams& p) : p_(p), n_(static_cast<std::size_t>(p.dim)) {}

  void drift(double, std::span<const double>, std::span<const double> u, std::span<double> out) const override {
    for (std::size_t r = 0; r < n_; ++r) out[r] = u[r];
  }
  void diffusion(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t i = 0; i < n_; ++i) out[r * n_ + i] = r == i ? p_.sigma : 0.0;
  }
  double generator(double, std::span<const double>, double, std::span<const double> z,
                   std::span<const double> u) const override {
    double zz = 0.0, uu = 0.0;
    for (double v : z) zz += v * v;
    for (double v : u) uu += v * v;
    return 0.5 * p_.gamma * zz + 0.5 * p_.kappa * uu;
  }
  double terminal(std::span<const double> x) const override { return std::tanh(p_.a * sum(x)); }

  void drift_dx(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  void drift_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c < n_; ++c) out[r * n_ + c] = r == c ? 1.0 : 0.0;
  }
  void diffusion_dx(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  void diffusion_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  void generator_dx(double, std::span<const double>, double, std::span<const double>, std::span<const double>,
                    std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  double generator_dy(double, std::span<const double>, double, std::span<const double>,
                      std::span<const double>) const override {
    return 0.0;
  }
  void generator_dz(double, std::span<const double>, double, std::span<const double> z, std::span<const double>,
                    std::span<double> out) const override {
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = p_.gamma * z[i];
  }
  void generator_du(double, std::span<const double>, double, std::span<const double>, std::span<const double> u,
                    std::span<double> out) const override {
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = p_.kappa * u[i];
  }
  void terminal_dx(std::span<const double> x, std::span<double> out) const override {
    const double th = std::tanh(p_.a * sum(x));
    for (std::size_t r = 0; r < n_; ++r) out[r] = p_.a * (1.0 - th * th);
  }

 private:
  static double sum(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  ExponentialUtilityParams p_;
  std::size_t n_;
};

class LinearQuadratic final : public Coefficients {
 public:
  explicit LinearQuadratic(const LinearQuadraticParams& p) : p_(p) {}

  void drift(double, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    out[0] = p_.A * x[0] + p_.B * u[0];
  }
  void diffusion(double, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    out[0] = p_.C * x[0] + p_.D * u[0];
  }
  double generator(double, std::span<const double> x, double, std::span<const double>,
                   std::span<const double> u) const override {
    return 0.5 * (p_.Q * x[0] * x[0] + p_.R * u[0] * u[0]);
  }
  double terminal(std::span<const double> x) const override { return 0.5 * p_.G * x[0] * x[0]; }

  void drift_dx(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.A;
  }
  void drift_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.B;
  }
  void diffusion_dx(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.C;
  }
  void diffusion_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.D;
  }
  void generator_dx(double, std::span<const double> x, double, std::span<const double>, std::span<const double>,
                    std::span<double> out) const override {
    out[0] = p_.Q * x[0];
  }
  double generator_dy(double, std::span<const double>, double, std::span<const double>,
                      std::span<const double>) const override {
    return 0.0;
  }
  void generator_dz(double, std::span<const double>, double, std::span<const double>, std::span<const double>,
                    std::span<double> out) const override {
    out[0] = 0.0;
  }
  void generator_du(double, std::span<const double>, double, std::span<const double>, std::span<const double> u,
                    std::span<double> out) const override {
    out[0] = p_.R * u[0];
  }
  void terminal_dx(std::span<const double> x, std::span<double> out) const override { out[0] = p_.G * x[0]; }

 private:
  LinearQuadraticParams p_;
};

class Tanh final : public Coefficients {
 public:
  explicit Tanh(const TanhParams& p) : p_(p) {}

  void drift(double, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    out[0] = p_.a * std::tanh(x[0]) + u[0];
  }
  void diffusion(double, std::span<const double> x, std::span<const double> u, std::span<double> out) const override {
    out[0] = p_.s0 + p_.s1 * std::tanh(x[0]) + p_.s2 * u[0];
  }
  double generator(double, std::span<const double> x, double y, std::span<const double> z,
                   std::span<const double> u) const override {
    const double th = std::tanh(x[0]);
    return p_.r * y + 0.5 * p_.gamma * (1.0 + p_.h * th) * z[0] * z[0] + p_.m * th + 0.5 * p_.kappa * u[0] * u[0];
  }
  double terminal(std::span<const double> x) const override { return std::tanh(x[0]); }

  void drift_dx(double, std::span<const double> x, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.a * sech2(x[0]);
  }
  void drift_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = 1.0;
  }
  void diffusion_dx(double, std::span<const double> x, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.s1 * sech2(x[0]);
  }
  void diffusion_du(double, std::span<const double>, std::span<const double>, std::span<double> out) const override {
    out[0] = p_.s2;
  }
  void generator_dx(double, std::span<const double> x, double, std::span<const double> z, std::span<const double>,
                    std::span<double> out) const override {
    out[0] = (0.5 * p_.gamma * p_.h * z[0] * z[0] + p_.m) * sech2(x[0]);
  }
  double generator_dy(double, std::span<const double>, double, std::span<const double>,
                      std::span<const double>) const override {
    return p_.r;
  }
  void generator_dz(double, std::span<const double> x, double, std::span<const double> z, std::span<const double>,
                    std::span<double> out) const override {
    out[0] = p_.gamma * (1.0 + p_.h * std::tanh(x[0])) * z[0];
  }
  void generator_du(double, std::span<const double>, double, std::span<const double>, std::span<const double> u,
                    std::span<double> out) const override {
    out[0] = p_.kappa * u[0];
  }
  void terminal_dx(std::span<const double> x, std::span<double> out) const override { out[0] = sech2(x[0]); }

 private:
  static double sech2(double x) {
    const double th = std::tanh(x);
    return 1.0 - th * th;
  }
  TanhParams p_;
};

ControlDomain symmetric_box(std::size_t k, double half_width) {
  return ControlDomain::box(std::vector<double>(k, -half_width), std::vector<double>(k, half_width));
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw SpecError(std::string(what) + " must be positive and finite");
}

}  // namespace

ProblemSpec exponential_utility_family(const ExponentialUtilityParams& p) {
  if (p.dim < 1) throw SpecError("dim must be at least 1");
  require_positive(p.gamma, "gamma");
  require_positive(p.T, "T");
  require_positive(p.u_max, "u_max");
  if (p.kappa < 0.0) throw SpecError("kappa must be nonnegative");
  const auto n = static_cast<std::size_t>(p.dim);
  ProblemSpec s;
  s.name = "exponential-utility";
  s.n = s.d = s.k = n;
  s.T = p.T;
  s.x0.assign(n, p.x0);
  s.coeffs = std::make_shared<ExponentialUtility>(p);
  s.domain = symmetric_box(n, p.u_max);
  auto& c = s.constants;
  const double nn = static_cast<double>(n);
  c.alpha = 0.5 * p.kappa * nn * p.u_max * p.u_max;
  c.gamma = p.gamma;
  c.L3 = p.kappa;
  c.Phi_sup = 1.0;
  c.Phi_x_sup = std::abs(p.a) * std::sqrt(nn);
  c.sigma_x_sup.assign(n, 0.0);
  c.b_u_sup = std::sqrt(nn);
  s.check();
  return s;
}

ProblemSpec linear_quadratic_family(const LinearQuadraticParams& p) {
  require_positive(p.T, "T");
  require_positive(p.u_max, "u_max");
  require_positive(p.x_radius, "x_radius");
  if (p.Q < 0.0 || p.R < 0.0 || p.G < 0.0) throw SpecError("Q, R, G must be nonnegative");
  ProblemSpec s;
  s.name = "linear-quadratic";
  s.T = p.T;
  s.x0 = {p.x0};
  s.coeffs = std::make_shared<LinearQuadratic>(p);
  s.domain = symmetric_box(1, p.u_max);
  auto& c = s.constants;
  const double rx = p.x_radius;
  // f does not depend on z; gamma = 1 is a valid (nonzero) declaration.
  c.gamma = 1.0;
  c.alpha = 0.5 * (p.Q * rx * rx + p.R * p.u_max * p.u_max);
  c.L1 = p.Q * rx;
  c.L3 = p.R;
  c.Phi_sup = 0.5 * p.G * rx * rx;
  c.Phi_x_sup = p.G * rx;
  c.sigma_x_sup = {std::abs(p.C)};
  c.b_x_sup = std::abs(p.A);
  c.b_u_sup = std::abs(p.B);
  c.sigma_u_sup = std::abs(p.D);
  s.check();
  return s;
}

ProblemSpec tanh_family(const TanhParams& p) {
  require_positive(p.T, "T");
  require_positive(p.u_max, "u_max");
  if (p.kappa < 0.0) throw SpecError("kappa must be nonnegative");
  if (!(p.gamma * (1.0 - std::abs(p.h)) >= 0.0) || !(p.gamma > 0.0))
    throw SpecError("gamma must be positive and |h| <= 1");
  ProblemSpec s;
  s.name = "tanh";
  s.T = p.T;
  s.x0 = {p.x0};
  s.coeffs = std::make_shared<Tanh>(p);
  s.domain = symmetric_box(1, p.u_max);
  auto& c = s.constants;
  c.alpha = std::abs(p.m) + 0.5 * p.kappa * p.u_max * p.u_max;
  c.gamma = p.gamma * (1.0 + std::abs(p.h));
  c.L1 = std::max(0.5 * p.gamma * std::abs(p.h), std::abs(p.m));
  c.L3 = p.kappa;
  c.f_y_sup = std::abs(p.r);
  c.Phi_sup = 1.0;
  c.Phi_x_sup = 1.0;
  c.sigma_x_sup = {std::abs(p.s1)};
  c.b_x_sup = std::abs(p.a);
  c.b_u_sup = 1.0;
  c.sigma_u_sup = std::abs(p.s2);
  s.check();
  return s;
}

std::vector<std::string> family_names() { return {"exponential-utility", "linear-quadratic", "tanh"}; }

namespace {

using Setter = std::function<void(double)>;

void apply(const std::string& family, const std::map<std::string, double>& params,
           const std::map<std::string, Setter>& fields) {
  for (const auto& [key, value] : params) {
    auto it = fields.find(key);
    if (it == fields.end()) throw SpecError("unknown parameter '" + key + "' for family " + family);
    it->second(value);
  }
}

}  // namespace

LinearQuadraticParams linear_quadratic_params(const std::map<std::string, double>& params) {
  const std::string name = "linear-quadratic";
  LinearQuadraticParams p;
  apply(name, params,
        {{"A", [&](double v) { p.A = v; }},
         {"B", [&](double v) { p.B = v; }},
         {"C", [&](double v) { p.C = v; }},
         {"D", [&](double v) { p.D = v; }},
         {"Q", [&](double v) { p.Q = v; }},
         {"R", [&](double v) { p.R = v; }},
         {"G", [&](double v) { p.G = v; }},
         {"T", [&](double v) { p.T = v; }},
         {"x0", [&](double v) { p.x0 = v; }},
         {"u_max", [&](double v) { p.u_max = v; }},
         {"x_radius", [&](double v) { p.x_radius = v; }}});
  return p;
}

ProblemSpec make_family(const std::string& name, const std::map<std::string, double>& params) {
  if (name == "exponential-utility") {
    ExponentialUtilityParams p;
    apply(name, params,
          {{"dim",
            [&](double v) {
              if (v != std::floor(v) || v < 1 || v > static_cast<double>(kMaxDim))
                throw SpecError("dim must be an integer in [1, 16]");
              p.dim = static_cast<int>(v);
            }},
           {"gamma", [&](double v) { p.gamma = v; }},
           {"kappa", [&](double v) { p.kappa = v; }},
           {"sigma", [&](double v) { p.sigma = v; }},
           {"a", [&](double v) { p.a = v; }},
           {"T", [&](double v) { p.T = v; }},
           {"x0", [&](double v) { p.x0 = v; }},
           {"u_max", [&](double v) { p.u_max = v; }}});
    return exponential_utility_family(p);
  }
  if (name == "linear-quadratic") return linear_quadratic_family(linear_quadratic_params(params));
  if (name == "tanh") {
    TanhParams p;
    apply(name, params,
          {{"a", [&](double v) { p.a = v; }},
           {"s0", [&](double v) { p.s0 = v; }},
           {"s1", [&](double v) { p.s1 = v; }},
           {"s2", [&](double v) { p.s2 = v; }},
           {"r", [&](double v) { p.r = v; }},
           {"gamma", [&](double v) { p.gamma = v; }},
           {"h", [&](double v) { p.h = v; }},
           {"m", [&](double v) { p.m = v; }},
           {"kappa", [&](double v) { p.kappa = v; }},
           {"T", [&](double v) { p.T = v; }},
           {"x0", [&](double v) { p.x0 = v; }},
           {"u_max", [&](double v) { p.u_max = v; }}});
    return tanh_family(p);
  }
  throw SpecError("unknown problem family '" + name + "'");
}

RiccatiSolution riccati_continuous(const LinearQuadraticParams& p, std::size_t steps, std::size_t substeps) {
  if (steps < 1 || substeps < 1) throw DomainError("riccati_continuous needs positive step counts");
  const double bcd = p.B + p.C * p.D;
  auto rhs = [&](double P) {
    // dP/dt = -[(2A + C^2) P + Q - (B + CD)^2 P^2 / (R + D^2 P)]
    return -((2.0 * p.A + p.C * p.C) * P + p.Q - bcd * bcd * P * P / (p.R + p.D * p.D * P));
  };
  auto gain = [&](double P) { return -bcd * P / (p.R + p.D * p.D * P); };
  RiccatiSolution s;
  s.P.assign(steps + 1, 0.0);
  s.K.assign(steps + 1, 0.0);
  double P = p.G;
  s.P[steps] = P;
  s.K[steps] = gain(P);
  const double h = -p.T / static_cast<double>(steps * substeps);
  for (std::size_t i = steps; i-- > 0;) {
    for (std::size_t j = 0; j < substeps; ++j) {
      const double k1 = rhs(P);
      const double k2 = rhs(P + 0.5 * h * k1);
      const double k3 = rhs(P + 0.5 * h * k2);
      const double k4 = rhs(P + h * k3);
      P += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    s.P[i] = P;
    s.K[i] = gain(P);
  }
  s.cost = 0.5 * s.P[0] * p.x0 * p.x0;
  return s;
}

RiccatiSolution riccati_discrete(const LinearQuadraticParams& p, std::size_t steps) {
  if (steps < 1) throw DomainError("riccati_discrete needs a positive step count");
  const double dt = p.T / static_cast<double>(steps);
  RiccatiSolution s;
  s.P.assign(steps + 1, 0.0);
  s.K.assign(steps + 1, 0.0);
  double P = p.G;
  s.P[steps] = P;
  for (std::size_t i = steps; i-- > 0;) {
    // V_i(x) = P_i x^2 / 2 under X_{i+1} = X_i + (A X + B u) dt + (C X + D u) dW.
    const double K = -P * (p.B * (1.0 + p.A * dt) + p.C * p.D) / (p.R + P * (p.B * p.B * dt + p.D * p.D));
    const double a = 1.0 + (p.A + p.B * K) * dt;
    const double c = p.C + p.D * K;
    P = (p.Q + p.R * K * K) * dt + P * (a * a + c * c * dt);
    s.P[i] = P;
    s.K[i] = K;
  }
  s.K[steps] = s.K[steps - 1];
  s.cost = 0.5 * s.P[0] * p.x0 * p.x0;
  return s;
}

}  // namespace qsmp
