#pragma once

// Brownian increments, controls, and Euler-Maruyama solvers for the forward
// state equation and its first variation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qsmp/model.hpp"
#include "qsmp/path_array.hpp"

namespace qsmp {

/// Increments dW_i ~ N(0, dt) for N steps, d components and M paths.
struct BrownianBatch {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  PathArray increments;  ///< N steps x d components

  std::size_t paths() const { return increments.paths(); }
  std::size_t dim() const { return increments.components(); }
  std::size_t steps() const { return increments.steps(); }
};

/// Each path draws from its own generator seeded by (seed, stream_id, path),
/// so the result does not depend on how paths are partitioned among threads.
BrownianBatch simulate_brownian(const TimeGrid& grid, std::size_t paths, std::size_t dim, std::uint64_t seed,
                                std::uint64_t stream_id = 0);

/// A control process evaluated on the grid. Feedback controls read the
/// current state; open-loop controls read a per-path table.
class ControlProcess {
 public:
  virtual ~ControlProcess() = default;
  virtual std::size_t dim() const = 0;
  /// True when the value depends on the state or the path, so that backward
  /// regressions need the generating trajectory as a conditioning variable.
  virtual bool path_dependent() const = 0;
  virtual void value(std::size_t step, double t, std::size_t path, std::span<const double> x,
                     std::span<double> out) const = 0;
};

class ConstantControl final : public ControlProcess {
 public:
  explicit ConstantControl(std::vector<double> value) : value_(std::move(value)) {}
  std::size_t dim() const override { return value_.size(); }
  bool path_dependent() const override { return false; }
  void value(std::size_t, double, std::size_t, std::span<const double>, std::span<double> out) const override;
  const std::vector<double>& constant() const { return value_; }

 private:
  std::vector<double> value_;
};

/// u = map(t, x); the map must be thread-safe.
class FeedbackControl final : public ControlProcess {
 public:
  using Map = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
  FeedbackControl(std::size_t dim, Map map) : dim_(dim), map_(std::move(map)) {}
  std::size_t dim() const override { return dim_; }
  bool path_dependent() const override { return true; }
  void value(std::size_t, double t, std::size_t, std::span<const double> x, std::span<double> out) const override {
    map_(t, x, out);
  }

 private:
  std::size_t dim_;
  Map map_;
};

/// u_i = proj_U(K_i x + k_i) with per-step gains K_i (k x n) and offsets k_i.
class AffineFeedback final : public ControlProcess {
 public:
  AffineFeedback(std::size_t steps, std::size_t state_dim, ControlDomain domain);

  std::size_t dim() const override { return domain_.dim(); }
  bool path_dependent() const override;
  void value(std::size_t step, double t, std::size_t path, std::span<const double> x,
             std::span<double> out) const override;

  std::size_t steps() const { return steps_; }
  std::size_t state_dim() const { return n_; }
  const ControlDomain& domain() const { return domain_; }

  /// Gain entry K_i[r][c].
  double& gain(std::size_t step, std::size_t r, std::size_t c) { return params_[(step * dim() + r) * n_ + c]; }
  double gain(std::size_t step, std::size_t r, std::size_t c) const { return params_[(step * dim() + r) * n_ + c]; }
  double& offset(std::size_t step, std::size_t r) { return params_[offset_base() + step * dim() + r]; }
  double offset(std::size_t step, std::size_t r) const { return params_[offset_base() + step * dim() + r]; }

  /// All gains followed by all offsets.
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

 private:
  std::size_t offset_base() const { return (steps_ + 1) * dim() * n_; }

  std::size_t steps_;
  std::size_t n_;
  ControlDomain domain_;
  std::vector<double> params_;
};

/// Per-path table of control values on the grid (N+1 steps x k).
class OpenLoopControl final : public ControlProcess {
 public:
  explicit OpenLoopControl(std::shared_ptr<const PathArray> table) : table_(std::move(table)) {}
  std::size_t dim() const override { return table_->components(); }
  bool path_dependent() const override { return true; }
  void value(std::size_t step, double, std::size_t path, std::span<const double>,
             std::span<double> out) const override {
    table_->gather(step, path, out);
  }
  const PathArray& table() const { return *table_; }

 private:
  std::shared_ptr<const PathArray> table_;
};

struct ForwardBatch {
  PathArray states;    ///< N+1 steps x n
  PathArray controls;  ///< N+1 steps x k
};

/// X_{i+1} = X_i + b(t_i, X_i, u_i) dt + sigma(t_i, X_i, u_i) dW_i. Throws
/// SolverError when |X| exceeds 1e8 or becomes non-finite.
ForwardBatch solve_forward_sde(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                               const ControlProcess& control);

struct VariationalForwardBatch {
  PathArray states;        ///< X_1, N+1 steps x n, zero at t_0
  PathArray perturbation;  ///< uhat = u - ubar, N+1 steps x k
};

/// Euler scheme for dX_1 = [b_x X_1 + b_u uhat] dt + sum_i [sigma_x^i X_1 + sigma_u^i uhat] dW^i
/// with the derivatives evaluated along (t, Xbar, ubar).
VariationalForwardBatch solve_variational_sde(const ProblemSpec& spec, const TimeGrid& grid,
                                              const BrownianBatch& noise, const ForwardBatch& base,
                                              const PathArray& uhat);

/// Values of a control along its own forward trajectory.
PathArray realize_control(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                          const ControlProcess& control);

/// (1 - eps) ubar + eps u, entrywise; eps = 1 reproduces u exactly.
PathArray convex_perturbation(const PathArray& u_bar, const PathArray& u, double eps);

/// u - ubar, entrywise.
PathArray control_difference(const PathArray& u, const PathArray& u_bar);

/// Least-squares slope of log2(error) against log2(eps).
struct SlopeFit {
  enum class Status {
    fitted,        ///< ordinary fit
    exact,         ///< every error is at rounding level relative to its reference
    inconclusive,  ///< not enough usable points
  };
  Status status = Status::inconclusive;
  double slope = 0.0;
  double intercept = 0.0;
};

const char* to_string(SlopeFit::Status status);

/// Fits log2(errors) = intercept + slope * log2(eps). When every error is at
/// most exact_ratio times the matching reference value the fit reports
/// Status::exact.
SlopeFit fit_log_slope(std::span<const double> eps, std::span<const double> errors,
                       std::span<const double> reference = {}, double exact_ratio = 1e-20);

struct RateReport {
  std::vector<double> epsilons;
  std::vector<double> first_order;  ///< E[sup_i |X^eps - Xbar|^2]
  std::vector<double> remainder;    ///< E[sup_i |X^eps - Xbar - eps X_1|^2]
  SlopeFit first_order_fit;
  SlopeFit remainder_fit;
};

/// Default eps sequence 2^-2 .. 2^-6.
std::vector<double> default_epsilons();

/// Common-noise expansion check of the forward state along u^eps = ubar + eps (u - ubar).
/// u_bar and u are realized control tables on the grid.
RateReport expansion_rate_check(const ProblemSpec& spec, const TimeGrid& grid, const BrownianBatch& noise,
                                const PathArray& u_bar, const PathArray& u, const std::vector<double>& epsilons);

}  // namespace qsmp
