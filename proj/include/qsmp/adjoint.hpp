#pragma once

// Adjoint pair (p, q), the weight Gamma, the auxiliary BSDE for Yhat, the
// Hamiltonian, and the decoupling relation between first variations.

#include <cstddef>
#include <span>
#include <vector>

#include "qsmp/bsde.hpp"
#include "qsmp/model.hpp"
#include "qsmp/paths.hpp"

namespace qsmp {

/// Discrete adjoint. The scheme is the exact dual of the Euler variational
/// scheme: with pbar_i = E_i[p_{i+1}] and q^j_i = E_i[p_{i+1} dW^j_i] / dt,
///
///   (1 - f_y dt) p_i = (I + b_x dt)^T pbar + sum_j sigma_x^{jT} q^j dt + f_x dt
///                      + sum_j f_{z_j} ((I + b_x dt)^T q^j + sigma_x^{jT} pbar) dt,
///
/// which is a consistent (explicit in p) discretization of the adjoint
/// generator and makes Y_1 = Yhat + p^T X_1 hold step by step.
struct AdjointSolution {
  PathArray p;         ///< N+1 steps x n
  PathArray p_mean;    ///< pbar, N+1 steps x n (last step equals p)
  PathArray q;         ///< N+1 steps x n*d, entry r*d + i is component r of q^i
  /// Pointwise standard errors (empty unless requested). p_stderr belongs to
  /// pbar and accumulates the regression errors of all later steps; q_stderr
  /// is the error of the current step's regression only.
  PathArray p_stderr;
  PathArray q_stderr;

  double q_at(std::size_t step, std::size_t r, std::size_t i, std::size_t path) const {
    return q.at(step, r * (q.components() / p.components()) + i, path);
  }
};

struct AdjointOptions {
  RegressionBasis basis{};
  double ridge_per_path = kDefaultRidgePerPath;
  ConditioningSet conditioning;
  bool compute_stderr = false;
};

/// Backward scheme for the n-dimensional linear BSDE of p with terminal
/// value Phi_x(Xbar_T); the implicit step solves an n x n system per path.
AdjointSolution solve_adjoint(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                              const ForwardBatch& forward, const BackwardSolution& backward,
                              const AdjointOptions& options = {});

/// Gamma_{i+1} = Gamma_i exp{f_y dt + f_z^T dW_i - |f_z|^2 dt / 2}. N+1 steps x 1.
PathArray gamma_process(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                        const ForwardBatch& forward, const BackwardSolution& backward);

/// b_u^T pbar + sum_i sigma_u^{iT} (q^i + f_{z_i} pbar) + f_u + dt sum_i f_{z_i} b_u^T q^i
/// along the reference solution at one step and path: the control gradient
/// of the Hamiltonian at the reference point, in the form that is exact for
/// the discrete scheme. out has k entries.
void reference_gradient(const ProblemSpec& spec, const TimeGrid& grid, const ForwardBatch& forward,
                        const BackwardSolution& backward, const AdjointSolution& adjoint, std::size_t step,
                        std::size_t path, std::span<double> out);

/// Linear BSDE for Yhat with zero terminal value and driver
/// f_y Yhat + f_z^T Zhat + reference_gradient . uhat.
BackwardSolution solve_auxiliary(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                 const ForwardBatch& forward, const BackwardSolution& backward,
                                 const AdjointSolution& adjoint, const PathArray& uhat,
                                 const BackwardOptions& options = {});

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> pathwise;  ///< per-path samples whose mean is value
};

/// Yhat_0 = E[sum_i Gamma_i e^{f_y dt} (reference_gradient_i . uhat_i) dt]; the factor
/// carries Gamma to the end of the step, matching the implicit f_y term of the scheme.
Estimate yhat0_via_gamma(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                         const ForwardBatch& forward, const BackwardSolution& backward,
                         const AdjointSolution& adjoint, const PathArray& gamma, const PathArray& uhat);

/// Point at which the Hamiltonian is evaluated. q is n x d row-major; x_ref
/// and u_ref are the reference pair entering the shift Delta.
struct HamiltonianInputs {
  double t = 0.0;
  std::span<const double> x;
  double y = 0.0;
  std::span<const double> z;
  std::span<const double> u;
  std::span<const double> p;
  std::span<const double> q;
  std::span<const double> x_ref;
  std::span<const double> u_ref;
};

/// Delta_i = (sigma^i(t,x,u) - sigma^i(t,x_ref,u_ref))^T p. out has d entries.
void hamiltonian_shift(const HamiltonianInputs& in, const ProblemSpec& spec, std::span<double> out);

/// H = p^T b + sum_i q^{iT} sigma^i + f(t, x, y, z + Delta, u).
double hamiltonian(const HamiltonianInputs& in, const ProblemSpec& spec);

/// H_u = b_u^T p + sum_i sigma_u^{iT} q^i + f_u(.., z + Delta, ..) + Delta_u^T f_z(.., z + Delta, ..).
void hamiltonian_u(const HamiltonianInputs& in, const ProblemSpec& spec, std::span<double> out);

/// Linear BSDE for Y_1 with driver f_x^T X_1 + f_y Y_1 + f_z^T Z_1 + f_u^T uhat
/// and terminal value Phi_x(Xbar_T)^T X_1(T).
BackwardSolution solve_variational_bsde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                        const ForwardBatch& forward, const BackwardSolution& backward,
                                        const VariationalForwardBatch& variational,
                                        const BackwardOptions& options = {});

struct ResidualStats {
  double max = 0.0;
  double mean = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
};

ResidualStats residual_stats(std::vector<double> abs_values);

struct RelationReport {
  ResidualStats y_residual;               ///< |Y_1 - Yhat - p^T X_1| over paths and steps
  std::vector<ResidualStats> z_residual;  ///< per Brownian component, steps 0..N-1
  double t0_residual = 0.0;               ///< |Y_1(0) - Yhat_0|
  double t0_stderr = 0.0;                 ///< standard error of the pathwise difference
};

RelationReport check_decoupling(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                const ForwardBatch& forward, const BackwardSolution& backward,
                                const AdjointSolution& adjoint, const VariationalForwardBatch& variational,
                                const BackwardSolution& var_backward, const BackwardSolution& auxiliary);

}  // namespace qsmp
