#include "qsmp/path_array.hpp"

#include <cmath>

#include "qsmp/error.hpp"

namespace qsmp {

TimeGrid::TimeGrid(std::size_t steps, double horizon) : steps_(steps), horizon_(horizon) {
  if (steps < 1) throw DomainError("time grid needs at least one step");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("time grid horizon must be positive");
  dt_ = horizon / static_cast<double>(steps);
}

std::vector<double> TimeGrid::times() const {
  std::vector<double> t(steps_ + 1);
  for (std::size_t i = 0; i <= steps_; ++i) t[i] = time(i);
  return t;
}

}  // namespace qsmp
