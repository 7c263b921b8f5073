#pragma once

// Cost functional, finite-difference checks of the cost derivative,
// projected gradient descent over affine feedback maps, and the pointwise
// check of the variational inequality for the Hamiltonian.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "qsmp/adjoint.hpp"
#include "qsmp/bsde.hpp"
#include "qsmp/model.hpp"
#include "qsmp/paths.hpp"

namespace qsmp {

/// J(u) = Y_0 of the state BSDE driven by the given control.
Estimate cost_functional(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                         const ControlProcess& control, const BackwardOptions& options = {});

struct GradientCheckOptions {
  BackwardOptions backward;
  AdjointOptions adjoint;
  /// The check is inconclusive when the intercept standard error exceeds
  /// this fraction of max(|intercept|, |Yhat_0|).
  double inconclusive_ratio = 0.1;
};

struct GradientCheckReport {
  std::vector<double> epsilons;
  std::vector<double> costs;      ///< J(u^eps)
  std::vector<double> fd_slopes;  ///< (J(u^eps) - J(ubar)) / eps
  std::vector<double> fd_stderr;  ///< from the pathwise differences
  double cost_bar = 0.0;
  double yhat0 = 0.0;  ///< auxiliary BSDE at t = 0
  double yhat0_stderr = 0.0;
  double yhat0_gamma = 0.0;  ///< Gamma-weighted Monte Carlo representation
  double yhat0_gamma_stderr = 0.0;
  double extrapolated_intercept = 0.0;  ///< least-squares line in eps evaluated at eps = 0
  double intercept_stderr = 0.0;
  bool inconclusive = false;

  /// |intercept - Yhat_0| in units of the combined standard error.
  double intercept_z() const;
  /// |Yhat_0 (BSDE) - Yhat_0 (Gamma)| in units of the combined standard error.
  double representation_z() const;
};

/// Common-noise difference quotients of J along u^eps = ubar + eps (u - ubar),
/// compared with Yhat_0 computed at ubar.
GradientCheckReport gateaux_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                  const ControlProcess& u_bar, const ControlProcess& u,
                                  const std::vector<double>& epsilons, const GradientCheckOptions& options = {});

/// Expansion check of the state BSDE: E[sup_i |Y^eps - Ybar|^2] and
/// E[sup_i |Y^eps - Ybar - eps Y_1|^2]. All three backward solves condition
/// on the same variables (Xbar, X_1), so the discrete solution map is smooth in eps.
RateReport backward_expansion_rate_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                         const PathArray& u_bar, const PathArray& u,
                                         const std::vector<double>& epsilons, const BackwardOptions& options = {});

struct DescentOptions {
  std::size_t max_iterations = 40;
  double step = 0.5;
  double decay = 0.0;  ///< step_j = step / (1 + decay j)
  /// Converged when the norm of the fitted descent field drops to this value.
  double gradient_tolerance = 1e-5;
  /// An iterate whose cost exceeds the last accepted one by more than
  /// cost_slack_se standard errors of J is rejected; smaller changes count as flat.
  double cost_slack_se = 0.01;
  std::size_t divergence_window = 5;
  BackwardOptions backward;
  AdjointOptions adjoint;
};

struct DescentIteration {
  std::size_t iteration = 0;
  double cost = 0.0;
  double std_error = 0.0;
  double gradient_norm = 0.0;  ///< sqrt(sum_i E|G_i|^2 dt) of the fitted descent field
  double step = 0.0;
};

struct DescentResult {
  std::vector<DescentIteration> trace;
  AffineFeedback control;
  std::string stop_reason;  ///< "converged", "max-iterations" or "diverged"
};

/// Gradient descent on the parameters of u_i = proj_U(K_i x + k_i). Each
/// iteration solves state, adjoint and Gamma at the current control, fits
/// Gamma_i H_u(t_i) by least squares on (1, X_i) per step and moves (K_i, k_i)
/// against the fit. A step that raises J is halved and retried from the
/// accepted parameters; the run stops after divergence_window consecutive increases.
DescentResult projected_gradient_descent(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                         const AffineFeedback& initial, const DescentOptions& options = {});

/// Affine feedback with gains and offsets drawn uniformly from [-scale, scale].
AffineFeedback random_affine_feedback(std::size_t steps, std::size_t state_dim, const ControlDomain& domain,
                                      std::uint64_t seed, double scale = 1.0);

/// Draws u in U. With probability boundary_fraction a point is drawn from
/// an enlarged region and projected, which lands on the boundary when it
/// starts outside.
class CandidateSampler {
 public:
  explicit CandidateSampler(ControlDomain domain, double boundary_fraction = 0.5, double spread = 1.0);
  void sample(std::mt19937_64& rng, std::span<const double> u_bar, std::span<double> out) const;
  const ControlDomain& domain() const { return domain_; }

 private:
  ControlDomain domain_;
  double boundary_fraction_;
  double spread_;
};

struct MpCheckOptions {
  std::size_t time_samples = 20;
  std::size_t path_samples = 250;
  std::size_t candidates = 8;
  double tolerance_se = 5.0;  ///< tolerance in pointwise standard errors
  std::uint64_t seed = 1;
  BackwardOptions backward;
  AdjointOptions adjoint;
};

struct MpCheckReport {
  std::size_t evaluations = 0;
  double min_inner = 0.0;       ///< min <H_u, u - ubar>
  double min_normalized = 0.0;  ///< min <H_u, u - ubar> / pointwise standard error
  std::size_t violations = 0;   ///< inner product below -tolerance
  double violation_fraction = 0.0;
  double tolerance_se = 0.0;
};

/// Samples (t_i, path, u) and evaluates <H_u(t_i, Xbar, Ybar, Zbar, ubar, p, q), u - ubar_i>
/// with p taken as E_i[p_{i+1}]. The tolerance is tolerance_se times the
/// standard error of the inner product implied by the regression errors of p and q.
MpCheckReport check_maximum_principle(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                      const ControlProcess& u_bar, const CandidateSampler& sampler,
                                      const MpCheckOptions& options = {});

}  // namespace qsmp
