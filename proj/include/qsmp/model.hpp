#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qsmp {

/// Largest state/noise/control dimension supported by the per-path solvers.
inline constexpr std::size_t kMaxDim = 16;

/// Coefficient evaluators of the controlled forward-backward system
///
///   dX = drift(t,X,u) dt + diffusion(t,X,u) dW,   X_0 = x0
///   dY = -generator(t,X,Y,Z,u) dt + Z dW,          Y_T = terminal(X_T)
///
/// and their first derivatives. Matrix outputs are row-major:
///   diffusion      out[r*d + i]          = sigma^{r i}        (column i is sigma^i)
///   drift_dx       out[r*n + c]          = d b^r / d x_c
///   drift_du       out[r*k + c]          = d b^r / d u_c
///   diffusion_dx   out[(i*n + r)*n + c]  = d sigma^{r i} / d x_c
///   diffusion_du   out[(i*n + r)*k + c]  = d sigma^{r i} / d u_c
/// Implementations must be safe to call concurrently.
class Coefficients {
 public:
  virtual ~Coefficients() = default;

  virtual void drift(double t, std::span<const double> x, std::span<const double> u, std::span<double> out) const = 0;
  virtual void diffusion(double t, std::span<const double> x, std::span<const double> u,
                         std::span<double> out) const = 0;
  virtual double generator(double t, std::span<const double> x, double y, std::span<const double> z,
                           std::span<const double> u) const = 0;
  virtual double terminal(std::span<const double> x) const = 0;

  virtual void drift_dx(double t, std::span<const double> x, std::span<const double> u,
                        std::span<double> out) const = 0;
  virtual void drift_du(double t, std::span<const double> x, std::span<const double> u,
                        std::span<double> out) const = 0;
  virtual void diffusion_dx(double t, std::span<const double> x, std::span<const double> u,
                            std::span<double> out) const = 0;
  virtual void diffusion_du(double t, std::span<const double> x, std::span<const double> u,
                            std::span<double> out) const = 0;
  virtual void generator_dx(double t, std::span<const double> x, double y, std::span<const double> z,
                            std::span<const double> u, std::span<double> out) const = 0;
  virtual double generator_dy(double t, std::span<const double> x, double y, std::span<const double> z,
                              std::span<const double> u) const = 0;
  virtual void generator_dz(double t, std::span<const double> x, double y, std::span<const double> z,
                            std::span<const double> u, std::span<double> out) const = 0;
  virtual void generator_du(double t, std::span<const double> x, double y, std::span<const double> z,
                            std::span<const double> u, std::span<double> out) const = 0;
  virtual void terminal_dx(std::span<const double> x, std::span<double> out) const = 0;
};

/// Convex control set with a closed-form Euclidean projection.
class ControlDomain {
 public:
  enum class Kind { box, ball, halfspaces };

  static ControlDomain box(std::vector<double> lower, std::vector<double> upper);
  static ControlDomain ball(std::vector<double> center, double radius);
  /// Intersection of {v : a_j . v <= b_j}. Projection is computed by cyclic
  /// Dykstra iterations; a single halfspace is projected in closed form.
  static ControlDomain halfspaces(std::vector<std::vector<double>> normals, std::vector<double> offsets);
  /// All of R^k (no constraint).
  static ControlDomain unconstrained(std::size_t dim);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  bool bounded() const { return kind_ != Kind::halfspaces; }

  void project(std::span<const double> v, std::span<double> out) const;
  void project_in_place(std::span<double> v) const;
  bool contains(std::span<const double> v, double tolerance = 1e-12) const;

  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  const std::vector<double>& center() const { return center_; }
  double radius() const { return radius_; }
  const std::vector<std::vector<double>>& normals() const { return normals_; }
  const std::vector<double>& offsets() const { return offsets_; }

 private:
  Kind kind_ = Kind::box;
  std::size_t dim_ = 0;
  std::vector<double> lower_, upper_, center_;
  double radius_ = 0.0;
  std::vector<std::vector<double>> normals_;
  std::vector<double> offsets_;
};

/// Declared growth and boundedness constants for the coefficients.
struct AssumptionConstants {
  double alpha = 0.0;        ///< sup |f(t,x,0,0,u)|
  double gamma = 1.0;        ///< |f_z| <= L2 + gamma |z|
  double L1 = 0.0;           ///< |f_x| <= L1 (1 + |y| + |z|^2 + |u|)
  double L2 = 0.0;
  double L3 = 0.0;           ///< |f_u| <= L3 (1 + |y| + |z|^2 + |u|)
  double f_y_sup = 0.0;
  double Phi_sup = 0.0;
  double Phi_x_sup = 0.0;
  std::vector<double> sigma_x_sup;  ///< one bound per noise column
  double b_x_sup = 0.0;
  double b_u_sup = 0.0;
  double sigma_u_sup = 0.0;  ///< bound on every sigma_u^i

  /// Throws SpecError unless every field is finite and nonnegative and gamma > 0.
  void check(std::size_t noise_dim) const;
};

struct ProblemSpec {
  std::string name;
  std::size_t n = 1;  ///< state dimension
  std::size_t d = 1;  ///< Brownian dimension
  std::size_t k = 1;  ///< control dimension
  double T = 1.0;
  std::vector<double> x0;
  std::shared_ptr<const Coefficients> coeffs;
  ControlDomain domain = ControlDomain::unconstrained(1);
  AssumptionConstants constants;

  /// Throws SpecError on inconsistent dimensions or a nonpositive horizon.
  void check() const;
};

/// Closed-form constants implied by the declared assumption constants.
struct DerivedConstants {
  double alpha_tilde = 0.0;
  double A = 0.0;
  double p_bar = 0.0;
  double log_p_bar_minus_one = 0.0;  ///< ln(p_bar - 1); finite even when p_bar rounds to 1
  double p_bar_star = 0.0;           ///< may be +inf when p_bar - 1 underflows
  double admissibility_exponent = 0.0;
  double psi_target = 0.0;           ///< right-hand side defining p_bar
};

DerivedConstants derive_constants(const ProblemSpec& spec);

/// Right-hand side of the p_bar equation, exposed for round-trip checks.
double p_bar_target(const ProblemSpec& spec, double A);

struct SamplingRegion {
  double x_radius = 10.0;
  double y_radius = 10.0;
  double z_radius = 10.0;
  double u_radius = 10.0;
};

struct ValidationCheck {
  std::string name;
  bool passed = true;
  double worst_ratio = 0.0;  ///< observed / allowed; <= 1 means the bound held
};

struct ValidationReport {
  std::size_t samples = 0;
  std::vector<ValidationCheck> checks;

  bool passed() const;
  const ValidationCheck* find(const std::string& name) const;
};

struct ValidationOptions {
  SamplingRegion region;
  std::uint64_t seed = 20240601;
  double fd_step = 1e-5;
  double fd_tolerance = 1e-6;
};

/// Spot-checks the declared constants and the derivative evaluators at
/// random points. Throws SpecError when an evaluator returns a non-finite
/// value.
ValidationReport validate_assumptions(const ProblemSpec& spec, std::size_t sample_count,
                                      const ValidationOptions& options = {});

}  // namespace qsmp
