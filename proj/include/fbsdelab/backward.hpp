#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/forward.hpp"
#include "fbsdelab/regression.hpp"

namespace fbsdelab {

namespace detail {

// Regression Monte Carlo sweep, terminal to initial:
//   Y_N = phi(X_N)
//   C_i = Regress(Y_{i+1} | X_i),  Z_i = Regress(Y_{i+1} dW_i^T | X_i) / dt
//   Y_i = C_i + avg_u h(t_i, X_i, C_i, u) q_i(du) * dt
// The driver rides on the regression predictor (explicit scheme); one inner
// fixed-point pass is added when lipschitz * dt >= 0.5. Y_i is stored as the
// per-path fit, so Y is a function of the state up to regression error.
inline void backward_pass(const CoefficientSet& c, const RelaxedControl& q,
                          PathEnsemble& ens, const RegressionSpec& reg,
                          std::vector<RegressionModel>* keep_models = nullptr) {
  c.validate();
  reg.validate();
  if (!ens.grid.refines(q.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");
  if (ens.d != c.d || ens.m != c.m || ens.k != c.k)
    throw ConfigError("ensemble dimensions do not match the coefficient set");
  const int N = ens.grid.steps;
  const long n = ens.n_paths;
  const double dt = ens.grid.dt();
  const int ratio = N / q.grid().steps;
  const bool inner_pass = c.lipschitz * dt >= 0.5;

  if (keep_models) {
    keep_models->clear();
    keep_models->reserve(static_cast<std::size_t>(N));
  }
  ens.z_bias_correction.assign(static_cast<std::size_t>(N), 0.0);

  // Terminal condition, exact per path.
  for (long p = 0; p < n; ++p) {
    auto yN = ens.y(p, N);
    c.terminal(ens.x(p, N), yN);
    check_finite(yN, "terminal", p, N);
    ens.bounds.observe(yN, c.bound);
  }

  std::vector<double> states(static_cast<std::size_t>(n) * c.d);
  std::vector<double> y_next(static_cast<std::size_t>(n) * c.k);
  std::vector<double> z_targets(static_cast<std::size_t>(n) * c.k * c.m);
  std::vector<double> h_buf(static_cast<std::size_t>(c.k));
  std::vector<double> h_acc(static_cast<std::size_t>(c.k));
  std::vector<double> y_tmp(static_cast<std::size_t>(c.k));

  // Averaged driver at (t, x, y); zero-weight atoms are never evaluated.
  auto averaged_driver = [&](double t, std::span<const double> x,
                             std::span<const double> y,
                             std::span<const double> row, long p, int i) {
    std::fill(h_acc.begin(), h_acc.end(), 0.0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] == 0.0) continue;
      c.driver(t, x, y, q.space().atom(j), h_buf);
      check_finite(h_buf, "driver", p, i);
      ens.bounds.observe(h_buf, c.bound);
      for (int r = 0; r < c.k; ++r)
        h_acc[static_cast<std::size_t>(r)] += row[j] * h_buf[static_cast<std::size_t>(r)];
    }
  };

  for (int i = N - 1; i >= 0; --i) {
    const double t = ens.grid.node(i);
    const auto row = q.cell_weights(static_cast<std::size_t>(i / ratio));
    for (long p = 0; p < n; ++p) {
      const auto xi = ens.x(p, i);
      std::copy(xi.begin(), xi.end(), states.begin() + p * c.d);
      const auto yn = ens.y(p, i + 1);
      std::copy(yn.begin(), yn.end(), y_next.begin() + p * c.k);
      const auto dwi = ens.dw(p, i);
      for (int r = 0; r < c.k; ++r)
        for (int j = 0; j < c.m; ++j)
          z_targets[static_cast<std::size_t>((p * c.k + r) * c.m + j)] =
              yn[static_cast<std::size_t>(r)] * dwi[static_cast<std::size_t>(j)] / dt;
    }

    RegressionModel cont(states, c.d, y_next, c.k, reg, i);
    RegressionModel zfit(states, c.d, z_targets, c.k * c.m, reg, i);

    double zcorr = 0.0;
    for (double v : zfit.residual_variance()) zcorr += zfit.leverage() * v;
    ens.z_bias_correction[static_cast<std::size_t>(i)] = zcorr;

    const auto& pred = cont.fitted();
    const auto& zvals = zfit.fitted();
    for (long p = 0; p < n; ++p) {
      const auto xi = ens.x(p, i);
      const std::span<const double> yp(pred.data() + p * c.k, static_cast<std::size_t>(c.k));
      averaged_driver(t, xi, yp, row, p, i);
      if (inner_pass) {
        for (int r = 0; r < c.k; ++r)
          y_tmp[static_cast<std::size_t>(r)] =
              yp[static_cast<std::size_t>(r)] + h_acc[static_cast<std::size_t>(r)] * dt;
        averaged_driver(t, xi, y_tmp, row, p, i);
      }
      auto yi = ens.y(p, i);
      for (int r = 0; r < c.k; ++r)
        yi[static_cast<std::size_t>(r)] =
            yp[static_cast<std::size_t>(r)] + h_acc[static_cast<std::size_t>(r)] * dt;
      check_finite(yi, "driver", p, i);
      auto zi = ens.z(p, i);
      for (int r = 0; r < c.k * c.m; ++r)
        zi[static_cast<std::size_t>(r)] = zvals[static_cast<std::size_t>(p * c.k * c.m + r)];

      if (i == 0) {
        if (ens.y0_targets.empty())
          ens.y0_targets.assign(static_cast<std::size_t>(n) * c.k, 0.0);
        for (int r = 0; r < c.k; ++r)
          ens.y0_targets[static_cast<std::size_t>(p * c.k + r)] =
              y_next[static_cast<std::size_t>(p * c.k + r)] +
              h_acc[static_cast<std::size_t>(r)] * dt;
      }
    }
    if (keep_models) keep_models->push_back(std::move(cont));
  }
  if (keep_models)
    std::reverse(keep_models->begin(), keep_models->end());  // index by step
  ens.has_backward = true;
}

}  // namespace detail

// Backward sweep for decoupled problems; enriches the forward ensemble with
// Y, Z and returns it.
inline PathEnsemble solve_backward_decoupled(const CoefficientSet& c,
                                             const RelaxedControl& q,
                                             PathEnsemble ens,
                                             const RegressionSpec& reg) {
  if (c.coupling != Coupling::kDecoupled)
    throw ConfigError("solve_backward_decoupled requires decoupled coefficients");
  detail::backward_pass(c, q, ens, reg);
  return ens;
}

// Forward + backward in one call.
inline PathEnsemble solve_decoupled(const CoefficientSet& c, const RelaxedControl& q,
                                    const TimeGrid& grid, std::span<const double> x0,
                                    long n_paths, std::uint64_t seed,
                                    const RegressionSpec& reg) {
  return solve_backward_decoupled(
      c, q, simulate_forward(c, q, grid, x0, n_paths, seed), reg);
}

struct PicardConfig {
  int max_iters = 30;
  double tol = 1e-3;      // sup-norm surface change at the probe states
  double damping = 1.0;   // new = damping * fit + (1 - damping) * old
  int probe_paths = 9;

  void validate() const {
    if (max_iters < 1) throw ValidationError("picard.max_iters", "must be >= 1");
    if (!(tol > 0.0)) throw ValidationError("picard.tol", "must be > 0");
    if (!(damping > 0.0 && damping <= 1.0))
      throw ValidationError("picard.damping", "must be in (0, 1]");
    if (probe_paths < 1) throw ValidationError("picard.probe_paths", "must be >= 1");
  }
};

struct CoupledResult {
  PathEnsemble ensemble;
  std::vector<double> change_norms;  // one entry per completed iteration
  int iterations = 0;
  bool x_fixed_point = false;  // forward paths reproduced exactly
};

// Picard iteration for coupled systems: simulate under the current Y-surface,
// re-solve the backward equation, blend, repeat. All iterations share one
// seed, so the fixed point lives on a fixed draw of the noise. A problem
// whose forward coefficients ignore Y reproduces X exactly in the second
// simulation and exits after one backward pass.
//
// The surface after each iteration is stored as one regression model per
// step, refitted to the blended per-path values d*Y + (1-d)*S_old(X). This
// keeps surface evaluation flat-cost in the iteration count for any damping;
// the blend is projected onto the basis, which is the same approximation the
// backward pass itself makes.
inline CoupledResult solve_coupled(const CoefficientSet& c, const RelaxedControl& q,
                                   const TimeGrid& grid, std::span<const double> x0,
                                   long n_paths, std::uint64_t seed,
                                   const RegressionSpec& reg,
                                   const PicardConfig& picard) {
  c.validate();
  picard.validate();

  std::shared_ptr<std::vector<RegressionModel>> surface;  // null = zero surface
  const std::size_t kd = static_cast<std::size_t>(c.d);
  const std::size_t kk = static_cast<std::size_t>(c.k);

  CoupledResult result;
  PathEnsemble prev;
  bool have_prev = false;

  for (int it = 1; it <= picard.max_iters; ++it) {
    // Iteration 1 runs under the zero surface Y^0 = 0.
    YFeedback feedback = [&surface](int step, std::span<const double> x,
                                    std::span<double> out) {
      if (surface)
        (*surface)[static_cast<std::size_t>(step)].eval(x, out);
      else
        std::fill(out.begin(), out.end(), 0.0);
    };
    PathEnsemble ens = simulate_forward(c, q, grid, x0, n_paths, seed, feedback);

    if (have_prev && ens.X == prev.X) {
      // Forward paths are insensitive to the surface update: fixed point.
      result.ensemble = std::move(prev);
      result.x_fixed_point = true;
      result.iterations = it - 1;
      return result;
    }

    detail::backward_pass(c, q, ens, reg);

    // Blend at the sampled states and refit one model per step.
    auto next = std::make_shared<std::vector<RegressionModel>>();
    next->reserve(static_cast<std::size_t>(grid.steps));
    double change = 0.0;
    std::vector<double> states(static_cast<std::size_t>(n_paths) * kd);
    std::vector<double> targets(static_cast<std::size_t>(n_paths) * kk);
    std::vector<double> old_val(kk);
    std::vector<double> new_val(kk);
    const long stride = std::max<long>(1, n_paths / picard.probe_paths);
    for (int i = 0; i < grid.steps; ++i) {
      for (long p = 0; p < n_paths; ++p) {
        const auto xp = ens.x(p, i);
        std::copy(xp.begin(), xp.end(),
                  states.begin() + static_cast<std::size_t>(p) * kd);
        if (surface)
          (*surface)[static_cast<std::size_t>(i)].eval(xp, old_val);
        else
          std::fill(old_val.begin(), old_val.end(), 0.0);
        const auto yp = ens.y(p, i);
        for (std::size_t r = 0; r < kk; ++r)
          targets[static_cast<std::size_t>(p) * kk + r] =
              picard.damping * yp[r] + (1.0 - picard.damping) * old_val[r];
      }
      next->emplace_back(states, c.d, targets, c.k, reg, i);

      // Surface change at deterministic probe states of this iteration.
      for (long p = 0; p < n_paths; p += stride) {
        const auto xp = ens.x(p, i);
        next->back().eval(xp, new_val);
        if (surface)
          (*surface)[static_cast<std::size_t>(i)].eval(xp, old_val);
        else
          std::fill(old_val.begin(), old_val.end(), 0.0);
        for (std::size_t r = 0; r < kk; ++r)
          change = std::max(change, std::fabs(new_val[r] - old_val[r]));
      }
    }
    result.change_norms.push_back(change);
    surface = std::move(next);
    prev = std::move(ens);
    have_prev = true;
    result.iterations = it;

    if (change < picard.tol) {
      result.ensemble = std::move(prev);
      return result;
    }
  }
  throw ConvergenceError(
      "Picard iteration did not converge in " + std::to_string(picard.max_iters) +
          " iterations (last change " +
          std::to_string(result.change_norms.empty() ? 0.0 : result.change_norms.back()) +
          ")",
      result.change_norms);
}

// Dispatch on the declared coupling; coupled problems fall back to default
// Picard settings when none are supplied.
inline PathEnsemble solve_any(const CoefficientSet& c, const RelaxedControl& q,
                              const TimeGrid& grid, std::span<const double> x0,
                              long n_paths, std::uint64_t seed,
                              const RegressionSpec& reg,
                              const std::optional<PicardConfig>& picard = std::nullopt) {
  if (c.coupling == Coupling::kCoupled)
    return solve_coupled(c, q, grid, x0, n_paths, seed, reg,
                         picard.value_or(PicardConfig{}))
        .ensemble;
  return solve_decoupled(c, q, grid, x0, n_paths, seed, reg);
}

}  // namespace fbsdelab
