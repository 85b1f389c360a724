#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelab/action_space.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/grid.hpp"
#include "fbsdelab/numerics.hpp"

namespace fbsdelab {

// Piecewise-constant atom-valued control: cell i of `grid` uses atom(index[i]).
class StrictControl {
 public:
  StrictControl(TimeGrid grid, ActionSpace space, std::vector<int> cell_atoms)
      : grid_(grid), space_(std::move(space)), cell_atoms_(std::move(cell_atoms)) {
    if (static_cast<int>(cell_atoms_.size()) != grid_.steps)
      throw ValidationError("cell_atoms", "size must equal the number of cells");
    for (std::size_t c = 0; c < cell_atoms_.size(); ++c)
      if (cell_atoms_[c] < 0 ||
          cell_atoms_[c] >= static_cast<int>(space_.size()))
        throw ValidationError(
            "cell_atoms", "cell " + std::to_string(c) + " references atom " +
                              std::to_string(cell_atoms_[c]) + " of " +
                              std::to_string(space_.size()));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  const ActionSpace& space() const noexcept { return space_; }
  const std::vector<int>& cell_atoms() const noexcept { return cell_atoms_; }
  int atom_index(int cell) const { return cell_atoms_.at(static_cast<std::size_t>(cell)); }
  std::span<const double> atom_at(int cell) const {
    return space_.atom(static_cast<std::size_t>(atom_index(cell)));
  }

 private:
  TimeGrid grid_;
  ActionSpace space_;
  std::vector<int> cell_atoms_;
};

// Measure-valued control q(dt,du) = dt * q_t(du) with q_t piecewise constant
// in t: one probability vector over the atoms per grid cell. Rows must be
// nonnegative and sum to 1 within 1e-12.
class RelaxedControl {
 public:
  static constexpr double kRowSumTolerance = 1e-12;

  RelaxedControl(TimeGrid grid, ActionSpace space, std::vector<double> weights)
      : grid_(grid), space_(std::move(space)), weights_(std::move(weights)) {
    const std::size_t cells = static_cast<std::size_t>(grid_.steps);
    const std::size_t atoms = space_.size();
    if (weights_.size() != cells * atoms)
      throw ValidationError("weights",
                            "expected " + std::to_string(cells * atoms) +
                                " entries, got " + std::to_string(weights_.size()));
    for (std::size_t c = 0; c < cells; ++c) {
      double sum = 0.0;
      for (std::size_t j = 0; j < atoms; ++j) {
        const double w = weights_[c * atoms + j];
        if (!std::isfinite(w) || w < 0.0)
          throw ValidationError("weights", "cell " + std::to_string(c) +
                                               " has a negative or non-finite weight");
        sum += w;
      }
      if (std::fabs(sum - 1.0) > kRowSumTolerance)
        throw ValidationError("weights", "cell " + std::to_string(c) +
                                             " weights sum to " + std::to_string(sum));
    }
  }

  static RelaxedControl uniform(TimeGrid grid, ActionSpace space) {
    const std::size_t atoms = space.size();
    std::vector<double> w(static_cast<std::size_t>(grid.steps) * atoms,
                          1.0 / static_cast<double>(atoms));
    return RelaxedControl(grid, std::move(space), std::move(w));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  const ActionSpace& space() const noexcept { return space_; }
  std::size_t n_cells() const noexcept { return static_cast<std::size_t>(grid_.steps); }
  std::size_t n_atoms() const noexcept { return space_.size(); }

  std::span<const double> cell_weights(std::size_t cell) const {
    return std::span<const double>(weights_).subspan(cell * n_atoms(), n_atoms());
  }
  double weight(std::size_t cell, std::size_t atom) const {
    return weights_.at(cell * n_atoms() + atom);
  }
  const std::vector<double>& raw_weights() const noexcept { return weights_; }

  // Replaces one row; used by the optimizer's coordinate steps.
  RelaxedControl with_cell_weights(std::size_t cell,
                                   std::span<const double> row) const {
    std::vector<double> w = weights_;
    if (row.size() != n_atoms())
      throw ValidationError("weights", "row size mismatch");
    std::copy(row.begin(), row.end(), w.begin() + static_cast<std::ptrdiff_t>(cell * n_atoms()));
    return RelaxedControl(grid_, space_, std::move(w));
  }

 private:
  TimeGrid grid_;
  ActionSpace space_;
  std::vector<double> weights_;  // n_cells x n_atoms, row-major
};

// Bounded test function on [0,T] x K for stable-topology pairings.
struct TestFunction {
  std::string name;
  std::function<double(double t, std::span<const double> u)> f;
};

using TestFunctionFamily = std::vector<TestFunction>;

// Default family used when a caller does not pick one. Reports that depend on
// a family always carry these names.
inline TestFunctionFamily default_test_family() {
  return {
      {"1", [](double, std::span<const double>) { return 1.0; }},
      {"u0", [](double, std::span<const double> u) { return u[0]; }},
      {"|u|^2",
       [](double, std::span<const double> u) {
         double s = 0.0;
         for (double c : u) s += c * c;
         return s;
       }},
      {"t*u0", [](double t, std::span<const double> u) { return t * u[0]; }},
  };
}

// Embeds a strict control as the family of point masses delta_{U(t)}.
inline RelaxedControl dirac_embed(const StrictControl& u) {
  const std::size_t atoms = u.space().size();
  std::vector<double> w(static_cast<std::size_t>(u.grid().steps) * atoms, 0.0);
  for (int c = 0; c < u.grid().steps; ++c)
    w[static_cast<std::size_t>(c) * atoms +
      static_cast<std::size_t>(u.atom_index(c))] = 1.0;
  return RelaxedControl(u.grid(), u.space(), std::move(w));
}

// Integral of f against q(dt,du): cell-midpoint rule in t, exact sum in u.
inline double pair(const RelaxedControl& q, const TestFunction& f) {
  const double dt = q.grid().dt();
  std::vector<double> cell_vals(q.n_cells());
  for (std::size_t c = 0; c < q.n_cells(); ++c) {
    const double t = q.grid().midpoint(static_cast<int>(c));
    double s = 0.0;
    const auto row = q.cell_weights(c);
    for (std::size_t j = 0; j < q.n_atoms(); ++j) {
      if (row[j] == 0.0) continue;
      const double v = f.f(t, q.space().atom(j));
      if (!std::isfinite(v))
        throw EvaluationError("test function '" + f.name +
                              "' returned a non-finite value");
      s += row[j] * v;
    }
    cell_vals[c] = s * dt;
  }
  return pairwise_sum(cell_vals);
}

// Pseudometric induced by a finite test-function family:
//   d(q1, q2) = max_f |<q1 - q2, f>|.
// Controls may live on different grids; they must share the action space.
inline double stable_distance(const RelaxedControl& q1, const RelaxedControl& q2,
                              const TestFunctionFamily& family) {
  if (!(q1.space() == q2.space()))
    throw ConfigError("stable_distance requires a shared action space");
  if (!q1.grid().same_horizon(q2.grid()))
    throw ConfigError("stable_distance requires a shared horizon");
  if (family.empty())
    throw ParameterError("stable_distance needs a nonempty test family");
  double d = 0.0;
  for (const auto& f : family)
    d = std::max(d, std::fabs(pair(q1, f) - pair(q2, f)));
  return d;
}

// Scalar average of g against one cell's measure. Zero-weight atoms are not
// evaluated, so point masses reproduce g at the atom bitwise.
inline double averaged_coefficient(
    const RelaxedControl& q, std::size_t cell,
    const std::function<double(std::span<const double>)>& g) {
  if (cell >= q.n_cells()) throw ParameterError("cell index out of range");
  const auto row = q.cell_weights(cell);
  double s = 0.0;
  for (std::size_t j = 0; j < q.n_atoms(); ++j) {
    if (row[j] == 0.0) continue;
    const double v = g(q.space().atom(j));
    if (!std::isfinite(v))
      throw EvaluationError("coefficient returned a non-finite value under averaging");
    s += row[j] * v;
  }
  return s;
}

// Largest-remainder quantization of a weight row to multiples of 1/n.
// Ties go to the lowest atom index. Counts sum to n exactly.
inline std::vector<int> dwell_counts(std::span<const double> weights, int n) {
  const std::size_t m = weights.size();
  std::vector<int> counts(m);
  std::vector<std::pair<double, std::size_t>> remainders(m);
  int assigned = 0;
  for (std::size_t j = 0; j < m; ++j) {
    const double scaled = weights[j] * n;
    counts[j] = static_cast<int>(std::floor(scaled));
    remainders[j] = {scaled - counts[j], j};
    assigned += counts[j];
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  for (int k = 0; k < n - assigned; ++k) counts[remainders[static_cast<std::size_t>(k)].second] += 1;
  return counts;
}

// Strict control on the n-fold refined grid that visits each cell's atoms in
// round-robin order with dwell counts proportional to the quantized weights.
// With two atoms at weights (1/2, 1/2) and even n this is the alternating
// bang-bang pattern with period 2*dt/n.
inline StrictControl chattering_approximation(const RelaxedControl& q, int n) {
  if (n < 1) throw ParameterError("chattering order n must be >= 1");
  const TimeGrid refined(q.grid().horizon, q.grid().steps * n);
  std::vector<int> cell_atoms;
  cell_atoms.reserve(static_cast<std::size_t>(refined.steps));
  for (std::size_t c = 0; c < q.n_cells(); ++c) {
    std::vector<int> remaining = dwell_counts(q.cell_weights(c), n);
    int emitted = 0;
    while (emitted < n) {
      for (std::size_t j = 0; j < remaining.size() && emitted < n; ++j) {
        if (remaining[j] > 0) {
          cell_atoms.push_back(static_cast<int>(j));
          remaining[j] -= 1;
          emitted += 1;
        }
      }
    }
  }
  return StrictControl(refined, q.space(), std::move(cell_atoms));
}

// Exact time-average projection of q onto another grid over the same horizon.
// Aligned coarsenings and refinements are exact; otherwise each target cell
// mixes the overlapping rows with weights proportional to overlap length.
inline RelaxedControl resample_control(const RelaxedControl& q,
                                       const TimeGrid& target) {
  if (!q.grid().same_horizon(target))
    throw ConfigError("resample_control requires a shared horizon");
  const std::size_t atoms = q.n_atoms();
  std::vector<double> w(static_cast<std::size_t>(target.steps) * atoms, 0.0);
  const double src_dt = q.grid().dt();
  for (int c = 0; c < target.steps; ++c) {
    const double a = target.node(c);
    const double b = target.node(c + 1);
    const int first = std::max(0, static_cast<int>(std::floor(a / src_dt)));
    const int last =
        std::min(q.grid().steps - 1, static_cast<int>(std::ceil(b / src_dt)));
    double total = 0.0;
    for (int s = first; s <= last; ++s) {
      const double overlap = std::min(b, q.grid().node(s + 1)) -
                             std::max(a, q.grid().node(s));
      if (overlap <= 0.0) continue;
      const auto row = q.cell_weights(static_cast<std::size_t>(s));
      for (std::size_t j = 0; j < atoms; ++j)
        w[static_cast<std::size_t>(c) * atoms + j] += overlap * row[j];
      total += overlap;
    }
    if (total <= 0.0)
      throw ConfigError("resample_control produced an empty cell");
    for (std::size_t j = 0; j < atoms; ++j)
      w[static_cast<std::size_t>(c) * atoms + j] /= total;
    // Renormalize exactly: FP overlap arithmetic must not trip row validation.
    double sum = 0.0;
    for (std::size_t j = 0; j < atoms; ++j) sum += w[static_cast<std::size_t>(c) * atoms + j];
    for (std::size_t j = 0; j < atoms; ++j) w[static_cast<std::size_t>(c) * atoms + j] /= sum;
  }
  return RelaxedControl(target, q.space(), std::move(w));
}

// Inverse-CDF atom selection. Monotone in `u01`, which gives common-random-
// number coupling across nearby weight vectors; for a point mass the result
// is the charged atom regardless of u01.
inline int sample_atom(std::span<const double> weights, double u01) {
  double cum = 0.0;
  const std::size_t m = weights.size();
  for (std::size_t j = 0; j + 1 < m; ++j) {
    cum += weights[j];
    if (u01 < cum) return static_cast<int>(j);
  }
  return static_cast<int>(m - 1);
}

}  // namespace fbsdelab
