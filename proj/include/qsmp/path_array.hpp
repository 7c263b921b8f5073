#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace qsmp {

/// Uniform partition 0 = t_0 < ... < t_N = T.
class TimeGrid {
 public:
  TimeGrid(std::size_t steps, double horizon);

  std::size_t steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return dt_; }
  /// t_i; the last point is pinned to the horizon exactly.
  double time(std::size_t i) const { return i == steps_ ? horizon_ : static_cast<double>(i) * dt_; }
  std::vector<double> times() const;

 private:
  std::size_t steps_;
  double horizon_;
  double dt_;
};

/// Dense per-path process values on a time grid, stored step-major with the
/// path index innermost so that every (step, component) slice is a contiguous
/// vector over paths. Logical shape is paths x steps x components.
class PathArray {
 public:
  PathArray() = default;
  PathArray(std::size_t steps, std::size_t components, std::size_t paths, double fill = 0.0)
      : steps_(steps), components_(components), paths_(paths), data_(steps * components * paths, fill) {}

  std::size_t steps() const { return steps_; }
  std::size_t components() const { return components_; }
  std::size_t paths() const { return paths_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t step, std::size_t comp, std::size_t path) {
    assert(step < steps_ && comp < components_ && path < paths_);
    return data_[(step * components_ + comp) * paths_ + path];
  }
  double at(std::size_t step, std::size_t comp, std::size_t path) const {
    assert(step < steps_ && comp < components_ && path < paths_);
    return data_[(step * components_ + comp) * paths_ + path];
  }

  std::span<double> slice(std::size_t step, std::size_t comp) {
    return {data_.data() + (step * components_ + comp) * paths_, paths_};
  }
  std::span<const double> slice(std::size_t step, std::size_t comp) const {
    return {data_.data() + (step * components_ + comp) * paths_, paths_};
  }

  /// Copies the component vector of one path at one step into out.
  void gather(std::size_t step, std::size_t path, std::span<double> out) const {
    assert(out.size() == components_);
    for (std::size_t c = 0; c < components_; ++c) out[c] = at(step, c, path);
  }
  void scatter(std::size_t step, std::size_t path, std::span<const double> in) {
    assert(in.size() == components_);
    for (std::size_t c = 0; c < components_; ++c) at(step, c, path) = in[c];
  }

  std::span<const double> raw() const { return data_; }
  std::span<double> raw() { return data_; }

  friend bool operator==(const PathArray&, const PathArray&) = default;

 private:
  std::size_t steps_ = 0;
  std::size_t components_ = 0;
  std::size_t paths_ = 0;
  std::vector<double> data_;
};

}  // namespace qsmp
