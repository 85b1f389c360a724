#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelab/backward.hpp"
#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/numerics.hpp"
#include "fbsdelab/regression.hpp"

namespace fbsdelab {

struct CvPartitionRow {
  int intervals = 0;
  double cv = 0.0;
  double noise_floor = 0.0;
};

struct CvReport {
  double value = 0.0;        // max over partitions
  double noise_floor = 0.0;  // floor of the partition achieving the max
  std::vector<CvPartitionRow> per_partition;
  // Conditioning sigma-field surrogate: regression on the current state.
  std::string conditioning = "state";
};

// Conditional variation sum over a partition family: for each partition,
// sum_i mean_p |E[Y_{t_{i+1}} - Y_{t_i} | X_{t_i}]| (componentwise l1),
// conditional means by regression; returns the max over partitions. The
// noise floor is the expected value of the statistic for a martingale target:
// fitted values under the null are ~N(0, leverage * residual_variance), so
// each (interval, component) contributes sqrt(2 * lev * resvar / pi).
inline CvReport conditional_variation(
    const PathEnsemble& ens, const RegressionSpec& reg,
    const std::optional<std::vector<int>>& partitions = std::nullopt) {
  ens.require_backward("conditional_variation");
  reg.validate();

  std::vector<int> family;
  if (partitions) {
    family = *partitions;
    if (family.empty())
      throw ParameterError("conditional_variation: empty partition list");
  } else {
    for (int m = ens.grid.steps; m >= 1; m /= 2) {
      family.push_back(m);
      if (m % 2 != 0) break;
    }
  }

  const long n = ens.n_paths;
  const std::size_t d = static_cast<std::size_t>(ens.d);
  const std::size_t k = static_cast<std::size_t>(ens.k);

  CvReport report;
  std::vector<double> states(static_cast<std::size_t>(n) * d);
  std::vector<double> targets(static_cast<std::size_t>(n) * k);
  std::vector<double> abscol(static_cast<std::size_t>(n));

  for (int intervals : family) {
    if (intervals < 1 || ens.grid.steps % intervals != 0)
      throw ParameterError("conditional_variation: partition with " +
                           std::to_string(intervals) +
                           " intervals does not coarsen the grid");
    const int stride = ens.grid.steps / intervals;
    double cv = 0.0, floor = 0.0;
    for (int j = 0; j < intervals; ++j) {
      const int lo = j * stride, hi = (j + 1) * stride;
      for (long p = 0; p < n; ++p) {
        const auto xs = ens.x(p, lo);
        std::copy(xs.begin(), xs.end(), states.begin() + p * static_cast<long>(d));
        const auto ylo = ens.y(p, lo);
        const auto yhi = ens.y(p, hi);
        for (std::size_t c = 0; c < k; ++c)
          targets[static_cast<std::size_t>(p) * k + c] = yhi[c] - ylo[c];
      }
      RegressionModel model(states, ens.d, targets, ens.k, reg);
      const auto& fitted = model.fitted();
      const auto& resvar = model.residual_variance();
      const double lev = model.leverage();
      for (std::size_t c = 0; c < k; ++c) {
        for (long p = 0; p < n; ++p)
          abscol[static_cast<std::size_t>(p)] =
              std::fabs(fitted[static_cast<std::size_t>(p) * k + c]);
        cv += mean(abscol);
        floor += std::sqrt(2.0 * lev * std::max(resvar[c], 0.0) / kPi);
      }
    }
    report.per_partition.push_back({intervals, cv, floor});
    if (cv >= report.value) {
      report.value = cv;
      report.noise_floor = floor;
    }
  }
  return report;
}

// E[ integral over [0,T] x K of |h| q(du) ds ], the driver mass bounding the
// conditional variation of Y. Componentwise l1, matching the CV statistic.
inline double driver_l1(const CoefficientSet& c, const RelaxedControl& q,
                        const PathEnsemble& ens) {
  c.validate();
  ens.require_backward("driver_l1");
  if (!ens.grid.refines(q.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");
  const int ratio = ens.grid.steps / q.grid().steps;
  const double dt = ens.grid.dt();
  const std::size_t k = static_cast<std::size_t>(c.k);

  std::vector<double> vals(static_cast<std::size_t>(ens.n_paths));
  std::vector<double> h(k);
  double total = 0.0;
  for (int i = 0; i < ens.grid.steps; ++i) {
    const double t = ens.grid.node(i);
    const auto row = q.cell_weights(static_cast<std::size_t>(i / ratio));
    for (long p = 0; p < ens.n_paths; ++p) {
      double v = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] == 0.0) continue;
        c.driver(t, ens.x(p, i), ens.y(p, i), q.space().atom(j), h);
        double l1 = 0.0;
        for (double hc : h) l1 += std::fabs(hc);
        v += row[j] * l1;
      }
      vals[static_cast<std::size_t>(p)] = v;
    }
    total += dt * mean(vals);
  }
  return total;
}

// Completed transitions of a grid path from strictly below a to strictly
// above b, scanning left to right.
inline long upcrossings(std::span<const double> path, double a, double b) {
  if (!(a < b)) throw ParameterError("upcrossings: requires a < b");
  long count = 0;
  bool armed = false;
  for (double v : path) {
    if (!armed && v < a) {
      armed = true;
    } else if (armed && v > b) {
      ++count;
      armed = false;
    }
  }
  return count;
}

struct TightnessRow {
  int steps = 0;
  double cv = 0.0;
  double cv_floor = 0.0;
  double sup_mean_abs_y = 0.0;     // sup_t E|Y_t|
  double sup_mean_abs_zint = 0.0;  // sup_t E|int_0^t Z dW|
  double mean_sup_x2 = 0.0;        // E sup_t |X_t|^2
  double mean_sup_y2 = 0.0;        // E sup_t |Y_t|^2
  double z_l2 = 0.0;  // E int |Z|^2 ds, regression bias removed
  // Cross-path spread only. The regression-fit wobble is shared by every
  // path, so error bars on z_l2 itself need replicate seeds.
  double z_l2_std_error = 0.0;
  std::vector<double> upcross_p99;  // per ladder pair, 99th percentile count
};

struct TightnessReport {
  // A tight family keeps every column near the coarsest level; divergence
  // compounds per level and blows through this band. The ratio leaves room
  // for the genuine O(sqrt(dt)) share of the continuous supremum that finer
  // sampling recovers (about 12% from N=16 to N=64 on diffusive scales).
  static constexpr double kEnvelope = 1.15;
  static constexpr double kSlack = 0.1;

  std::vector<TightnessRow> rows;
  std::vector<std::pair<double, double>> ladder;  // shared (a,b) pairs
  bool cv_bounded = false;
  bool y_bounded = false;
  bool zint_bounded = false;
  bool x2_bounded = false;
  bool y2_bounded = false;
  bool z2_bounded = false;
  bool all_bounded = false;
  std::string conditioning = "state";
};

namespace detail {

inline bool envelope_bounded(const std::vector<double>& column) {
  double mx = column.front();
  for (double v : column) mx = std::max(mx, v);
  return mx <= TightnessReport::kEnvelope * column.front() + TightnessReport::kSlack;
}

}  // namespace detail

// Runs the solver across a refinement family and tabulates the tightness
// statistics; each column is flagged bounded when its max stays within an
// envelope of the coarsest level's value. The up-crossing ladder (8 pairs
// spanning the coarsest level's Y-range, first component) is shared across
// levels so counts are comparable. The control is reweighted exactly onto
// each level's grid, which preserves its time-averaged measure.
inline TightnessReport meyer_zheng_table(
    const CoefficientSet& c, const RelaxedControl& q, std::span<const double> x0,
    long n_paths, std::uint64_t seed, const RegressionSpec& reg,
    const std::vector<int>& levels = {16, 32, 64},
    const std::optional<PicardConfig>& picard = std::nullopt) {
  c.validate();
  if (levels.empty()) throw ParameterError("meyer_zheng_table: empty level list");

  TightnessReport report;
  const std::size_t k = static_cast<std::size_t>(c.k);
  const std::size_t m = static_cast<std::size_t>(c.m);

  for (std::size_t li = 0; li < levels.size(); ++li) {
    const int steps = levels[li];
    PathEnsemble ens = [&] {
      try {
        TimeGrid grid(q.grid().horizon, steps);
        return solve_any(c, resample_control(q, grid), grid, x0, n_paths, seed,
                         reg, picard);
      } catch (const Error& e) {
        throw EvaluationError("meyer_zheng_table: level N=" +
                              std::to_string(steps) + ": " + e.what());
      }
    }();
    const long n = ens.n_paths;
    const int N = ens.grid.steps;
    const double dt = ens.grid.dt();

    TightnessRow row;
    row.steps = steps;

    const CvReport cvr = conditional_variation(ens, reg);
    row.cv = cvr.value;
    row.cv_floor = cvr.noise_floor;

    std::vector<double> vals(static_cast<std::size_t>(n));
    // sup_t E|Y_t| over grid nodes.
    for (int i = 0; i <= N; ++i) {
      for (long p = 0; p < n; ++p) {
        double l1 = 0.0;
        for (double v : ens.y(p, i)) l1 += std::fabs(v);
        vals[static_cast<std::size_t>(p)] = l1;
      }
      row.sup_mean_abs_y = std::max(row.sup_mean_abs_y, mean(vals));
    }
    // sup_t E|int Z dW|: cumulative stochastic integral per path.
    {
      std::vector<double> integral(static_cast<std::size_t>(n) * k, 0.0);
      for (int i = 0; i < N; ++i) {
        for (long p = 0; p < n; ++p) {
          const auto zp = ens.z(p, i);
          const auto wp = ens.dw(p, i);
          double l1 = 0.0;
          for (std::size_t cc = 0; cc < k; ++cc) {
            double incr = 0.0;
            for (std::size_t r = 0; r < m; ++r) incr += zp[cc * m + r] * wp[r];
            double& acc = integral[static_cast<std::size_t>(p) * k + cc];
            acc += incr;
            l1 += std::fabs(acc);
          }
          vals[static_cast<std::size_t>(p)] = l1;
        }
        row.sup_mean_abs_zint = std::max(row.sup_mean_abs_zint, mean(vals));
      }
    }
    // E sup |X|^2 and E sup |Y|^2.
    {
      std::vector<double> ysup(static_cast<std::size_t>(n));
      for (long p = 0; p < n; ++p) {
        double sx = 0.0, sy = 0.0;
        for (int i = 0; i <= N; ++i) {
          double nx = 0.0;
          for (double v : ens.x(p, i)) nx += v * v;
          sx = std::max(sx, nx);
          double ny = 0.0;
          for (double v : ens.y(p, i)) ny += v * v;
          sy = std::max(sy, ny);
        }
        vals[static_cast<std::size_t>(p)] = sx;
        ysup[static_cast<std::size_t>(p)] = sy;
      }
      row.mean_sup_x2 = mean(vals);
      row.mean_sup_y2 = mean(ysup);
    }
    // E int |Z|^2 ds with the per-step regression bias removed; the bias of a
    // fitted value's second moment is leverage * residual variance, recorded
    // by the backward pass.
    {
      for (long p = 0; p < n; ++p) {
        double acc = 0.0;
        for (int i = 0; i < N; ++i) {
          double nz = 0.0;
          for (double v : ens.z(p, i)) nz += v * v;
          acc += nz * dt;
        }
        vals[static_cast<std::size_t>(p)] = acc;
      }
      double bias = 0.0;
      for (double b : ens.z_bias_correction) bias += b * dt;
      row.z_l2 = std::max(0.0, mean(vals) - bias);
      row.z_l2_std_error = std_error(vals);
    }
    // Up-crossing ladder from the coarsest level's empirical Y range.
    if (li == 0) {
      double lo = ens.y(0, 0)[0], hi = lo;
      for (long p = 0; p < n; ++p)
        for (int i = 0; i <= N; ++i) {
          const double v = ens.y(p, i)[0];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      if (!(hi - lo > 1e-9)) {
        lo -= 0.5;
        hi += 0.5;
      }
      for (int j = 1; j <= 8; ++j) {
        const double a = lo + (hi - lo) * j / 9.0;
        const double b = lo + (hi - lo) * (j + 1) / 9.0;
        report.ladder.emplace_back(a, b);
      }
    }
    {
      std::vector<double> series(static_cast<std::size_t>(N + 1));
      std::vector<double> counts(static_cast<std::size_t>(n));
      for (const auto& [a, b] : report.ladder) {
        for (long p = 0; p < n; ++p) {
          for (int i = 0; i <= N; ++i) series[static_cast<std::size_t>(i)] = ens.y(p, i)[0];
          counts[static_cast<std::size_t>(p)] =
              static_cast<double>(upcrossings(series, a, b));
        }
        row.upcross_p99.push_back(quantile(counts, 0.99));
      }
    }
    report.rows.push_back(std::move(row));
  }

  auto column = [&](auto proj) {
    std::vector<double> col;
    for (const auto& r : report.rows) col.push_back(proj(r));
    return col;
  };
  report.cv_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.cv; }));
  report.y_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.sup_mean_abs_y; }));
  report.zint_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.sup_mean_abs_zint; }));
  report.x2_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.mean_sup_x2; }));
  report.y2_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.mean_sup_y2; }));
  report.z2_bounded = detail::envelope_bounded(column([](const TightnessRow& r) { return r.z_l2; }));
  report.all_bounded = report.cv_bounded && report.y_bounded && report.zint_bounded &&
                       report.x2_bounded && report.y2_bounded && report.z2_bounded;
  return report;
}

struct OrthogonalRemainder {
  double value = 0.0;
  double noise_floor = 0.0;
};

// E[ sup_t | Y_t - Y_0 + sum h-bar dt - sum Z dW |^2 ]: the squared remainder
// after removing the compensator and the Brownian integral from Y. On the
// Brownian filtration the martingale-representation remainder vanishes, so
// anything above the regression noise floor signals a defect. The floor is
// Doob's L2 bound (factor 4) on the accumulated per-step regression noise of
// the continuation and Z fits.
inline OrthogonalRemainder orthogonal_remainder(const CoefficientSet& c,
                                                const RelaxedControl& q,
                                                const PathEnsemble& ens,
                                                const RegressionSpec& reg) {
  c.validate();
  ens.require_backward("orthogonal_remainder");
  if (!ens.grid.refines(q.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");
  const int ratio = ens.grid.steps / q.grid().steps;
  const int N = ens.grid.steps;
  const double dt = ens.grid.dt();
  const long n = ens.n_paths;
  const std::size_t k = static_cast<std::size_t>(c.k);
  const std::size_t m = static_cast<std::size_t>(c.m);

  std::vector<double> h(k), hbar(k);
  std::vector<double> resid(static_cast<std::size_t>(n) * k);
  std::vector<double> sup2(static_cast<std::size_t>(n), 0.0);

  for (long p = 0; p < n; ++p) {
    double worst = 0.0;
    for (std::size_t cc = 0; cc < k; ++cc) resid[static_cast<std::size_t>(p) * k + cc] = 0.0;
    for (int i = 0; i < N; ++i) {
      const auto row = q.cell_weights(static_cast<std::size_t>(i / ratio));
      std::fill(hbar.begin(), hbar.end(), 0.0);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] == 0.0) continue;
        c.driver(ens.grid.node(i), ens.x(p, i), ens.y(p, i), q.space().atom(j), h);
        for (std::size_t cc = 0; cc < k; ++cc) hbar[cc] += row[j] * h[cc];
      }
      const auto zp = ens.z(p, i);
      const auto wp = ens.dw(p, i);
      const auto ylo = ens.y(p, i);
      const auto yhi = ens.y(p, i + 1);
      double norm2 = 0.0;
      for (std::size_t cc = 0; cc < k; ++cc) {
        double zdw = 0.0;
        for (std::size_t r = 0; r < m; ++r) zdw += zp[cc * m + r] * wp[r];
        double& acc = resid[static_cast<std::size_t>(p) * k + cc];
        acc += (yhi[cc] - ylo[cc]) + hbar[cc] * dt - zdw;
        norm2 += acc * acc;
      }
      worst = std::max(worst, norm2);
    }
    sup2[static_cast<std::size_t>(p)] = worst;
  }

  // Refit the backward regressions on the stored targets to price their
  // per-path noise: identical inputs reproduce the solver's own fits.
  double floor = 0.0;
  std::vector<double> states(static_cast<std::size_t>(n) * static_cast<std::size_t>(ens.d));
  std::vector<double> ytarget(static_cast<std::size_t>(n) * k);
  std::vector<double> ztarget(static_cast<std::size_t>(n) * k * m);
  for (int i = 0; i < N; ++i) {
    for (long p = 0; p < n; ++p) {
      const auto xs = ens.x(p, i);
      std::copy(xs.begin(), xs.end(),
                states.begin() + p * static_cast<long>(ens.d));
      const auto yn = ens.y(p, i + 1);
      std::copy(yn.begin(), yn.end(), ytarget.begin() + p * static_cast<long>(k));
      const auto wp = ens.dw(p, i);
      for (std::size_t cc = 0; cc < k; ++cc)
        for (std::size_t r = 0; r < m; ++r)
          ztarget[(static_cast<std::size_t>(p) * k + cc) * m + r] =
              yn[cc] * wp[r] / dt;
    }
    RegressionModel cont(states, ens.d, ytarget, static_cast<int>(k), reg, i);
    RegressionModel zfit(states, ens.d, ztarget, static_cast<int>(k * m), reg, i);
    double step_noise = 0.0;
    for (double rv : cont.residual_variance())
      step_noise += cont.leverage() * std::max(rv, 0.0);
    for (double rv : zfit.residual_variance())
      step_noise += dt * zfit.leverage() * std::max(rv, 0.0);
    floor += step_noise;
  }

  OrthogonalRemainder out;
  out.value = mean(sup2);
  // Doob's constant covers the accumulated martingale part, but the running
  // sup also rides on the per-node refit noise, which does not telescope the
  // way the final sum does; 6x leaves headroom for that max-over-nodes term.
  out.noise_floor = 6.0 * floor;
  return out;
}

}  // namespace fbsdelab
