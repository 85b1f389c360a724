#pragma once

#include <cmath>
#include <string>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

// Uniform partition of [0, horizon] into `steps` cells. Node i is computed as
// horizon * i / steps (not accumulated), so grids sharing a horizon have
// bitwise-identical common nodes.
struct TimeGrid {
  double horizon = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double horizon_, int steps_) : horizon(horizon_), steps(steps_) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ValidationError("horizon", "must be finite and positive");
    if (steps < 1) throw ValidationError("steps", "must be >= 1");
  }

  double dt() const noexcept { return horizon / steps; }
  double node(int i) const noexcept {
    return horizon * static_cast<double>(i) / static_cast<double>(steps);
  }
  double midpoint(int cell) const noexcept {
    return horizon * (static_cast<double>(cell) + 0.5) /
           static_cast<double>(steps);
  }

  bool same_horizon(const TimeGrid& other) const noexcept {
    return std::fabs(horizon - other.horizon) <=
           1e-12 * std::max(std::fabs(horizon), std::fabs(other.horizon));
  }

  // True when every node of `coarse` is a node of this grid.
  bool refines(const TimeGrid& coarse) const noexcept {
    return same_horizon(coarse) && steps % coarse.steps == 0;
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.steps == b.steps && a.same_horizon(b);
  }
};

// Maps a fine step index to the containing coarse cell. Requires alignment.
inline int coarse_cell_of(const TimeGrid& fine, const TimeGrid& coarse,
                          int fine_step) {
  if (!fine.refines(coarse))
    throw ConfigError("time grids are not aligned: " +
                      std::to_string(fine.steps) + " steps vs " +
                      std::to_string(coarse.steps) + " cells");
  const int ratio = fine.steps / coarse.steps;
  return fine_step / ratio;
}

}  // namespace fbsdelab
