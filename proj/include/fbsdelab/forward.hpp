#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/grid.hpp"
#include "fbsdelab/rng.hpp"

namespace fbsdelab {

// State beyond this magnitude is treated as blow-up rather than rounding.
inline constexpr double kOverflowLimit = 1e9;

// Y-surface callback for coupled problems: writes Y(t_step, x) into `out`.
using YFeedback =
    std::function<void(int step, std::span<const double> x, std::span<double> out)>;

namespace detail {

inline void check_finite(std::span<const double> v, const char* callback,
                         long path, int step) {
  for (double c : v)
    if (!std::isfinite(c))
      throw EvaluationError(std::string(callback) + " returned a non-finite value at path " +
                            std::to_string(path) + ", step " + std::to_string(step));
}

// Shared Euler-Maruyama loop. `atom_of` maps (path, step) to the atom index
// realized at that step; the relaxed and strict entry points differ only
// there, which is what makes the Dirac-consistency guarantee bitwise.
template <typename AtomOf>
PathEnsemble euler_forward(const CoefficientSet& c, const ActionSpace& space,
                           const TimeGrid& grid, std::span<const double> x0,
                           long n_paths, std::uint64_t seed,
                           const YFeedback& feedback, AtomOf&& atom_of) {
  c.validate();
  if (static_cast<int>(x0.size()) != c.d)
    throw ConfigError("x0 dimension " + std::to_string(x0.size()) +
                      " does not match d = " + std::to_string(c.d));
  if (c.coupling == Coupling::kCoupled && !feedback)
    throw ConfigError("coupled simulation requires a Y-surface feedback");

  PathEnsemble ens = make_forward_ensemble(grid, n_paths, c.d, c.m, c.k, seed);
  const CounterRng rng(seed);
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);

  std::vector<double> y_buf(static_cast<std::size_t>(c.k), 0.0);
  std::vector<double> b_buf(static_cast<std::size_t>(c.d), 0.0);
  std::vector<double> s_buf(static_cast<std::size_t>(c.d * c.m), 0.0);

  for (long p = 0; p < n_paths; ++p) {
    auto x_prev = ens.x(p, 0);
    std::copy(x0.begin(), x0.end(), x_prev.begin());
    for (int i = 0; i < grid.steps; ++i) {
      const double t = grid.node(i);
      auto xi = ens.x(p, i);
      auto dwi = ens.dw(p, i);
      for (int j = 0; j < c.m; ++j)
        dwi[static_cast<std::size_t>(j)] =
            sqrt_dt * rng.normal(Stream::kBrownian, static_cast<std::uint64_t>(p),
                                 static_cast<std::uint32_t>(i),
                                 static_cast<std::uint32_t>(j));

      const int atom = atom_of(p, i);
      ens.u_sample[static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)] = atom;
      const auto u = space.atom(static_cast<std::size_t>(atom));

      std::fill(y_buf.begin(), y_buf.end(), 0.0);
      if (feedback) feedback(i, xi, y_buf);

      c.drift(t, xi, y_buf, u, b_buf);
      detail::check_finite(b_buf, "drift", p, i);
      ens.bounds.observe(b_buf, c.bound);
      c.diffusion(t, xi, y_buf, u, s_buf);
      detail::check_finite(s_buf, "diffusion", p, i);
      ens.bounds.observe(s_buf, c.bound);

      auto x_next = ens.x(p, i + 1);
      for (int r = 0; r < c.d; ++r) {
        double v = xi[static_cast<std::size_t>(r)] + b_buf[static_cast<std::size_t>(r)] * dt;
        for (int j = 0; j < c.m; ++j)
          v += s_buf[static_cast<std::size_t>(r * c.m + j)] * dwi[static_cast<std::size_t>(j)];
        x_next[static_cast<std::size_t>(r)] = v;
      }
      for (int r = 0; r < c.d; ++r) {
        const double v = x_next[static_cast<std::size_t>(r)];
        if (!std::isfinite(v) || std::fabs(v) > kOverflowLimit)
          throw OverflowError("forward state overflow at path " + std::to_string(p) +
                                  ", step " + std::to_string(i + 1),
                              p, i + 1);
      }
    }
  }
  return ens;
}

}  // namespace detail

// Euler-Maruyama under a relaxed control: one atom is drawn per (path, step)
// from the cell's weight vector, from the dedicated control stream, so the
// one-step conditional generator matches the measure-averaged generator up to
// O(dt). The control grid must be a coarsening of the simulation grid.
inline PathEnsemble simulate_forward(const CoefficientSet& c, const RelaxedControl& q,
                                     const TimeGrid& grid, std::span<const double> x0,
                                     long n_paths, std::uint64_t seed,
                                     const YFeedback& feedback = nullptr) {
  if (!grid.refines(q.grid()))
    throw ConfigError("control grid (" + std::to_string(q.grid().steps) +
                      " cells) is not a coarsening of the simulation grid (" +
                      std::to_string(grid.steps) + " steps)");
  const int ratio = grid.steps / q.grid().steps;
  const CounterRng rng(seed);
  return detail::euler_forward(
      c, q.space(), grid, x0, n_paths, seed, feedback, [&](long p, int i) {
        const auto row = q.cell_weights(static_cast<std::size_t>(i / ratio));
        const double u01 = rng.uniform(Stream::kControl, static_cast<std::uint64_t>(p),
                                       static_cast<std::uint32_t>(i), 0);
        return sample_atom(row, u01);
      });
}

// Strict-control variant. Bit-identical to simulating dirac_embed(u) on the
// same seed: the Brownian and control streams are independent, and a point
// mass selects its atom irrespective of the control draw.
inline PathEnsemble simulate_forward(const CoefficientSet& c, const StrictControl& u,
                                     const TimeGrid& grid, std::span<const double> x0,
                                     long n_paths, std::uint64_t seed,
                                     const YFeedback& feedback = nullptr) {
  if (!grid.refines(u.grid()))
    throw ConfigError("control grid (" + std::to_string(u.grid().steps) +
                      " cells) is not a coarsening of the simulation grid (" +
                      std::to_string(grid.steps) + " steps)");
  const int ratio = grid.steps / u.grid().steps;
  return detail::euler_forward(c, u.space(), grid, x0, n_paths, seed, feedback,
                               [&](long, int i) { return u.atom_index(i / ratio); });
}

}  // namespace fbsdelab
