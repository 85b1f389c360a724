#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/backward.hpp"
#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/numerics.hpp"
#include "fbsdelab/rng.hpp"

namespace fbsdelab {

struct CostReport {
  double estimate = 0.0;
  double std_error = 0.0;
  // components: estimate = terminal + initial + running
  double terminal = 0.0;
  double initial = 0.0;
  double running = 0.0;
  long n_paths = 0;
  std::uint64_t seed = 0;
  long bound_violations = 0;
  double coefficient_max_abs = 0.0;
  int bootstrap_resamples = 0;
};

// J(q) = E[psi(X_T)] + g(Y_0) + E[int avg_u l(t, X, Y, u) q_t(du) dt],
// running cost by left-endpoint quadrature (the rule the Euler scheme uses).
// The pathwise std error covers the terminal and running parts; the g(Y_0)
// part is a functional of a regression, so its contribution comes from a
// nested bootstrap over the stored step-0 regression targets.
inline CostReport evaluate_cost(const CoefficientSet& c, const RelaxedControl& q,
                                const PathEnsemble& ens,
                                int bootstrap_resamples = 50) {
  c.validate();
  ens.require_backward("evaluate_cost");
  if (!ens.grid.refines(q.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");
  const int N = ens.grid.steps;
  const long n = ens.n_paths;
  const double dt = ens.grid.dt();
  const int ratio = N / q.grid().steps;

  CostReport report;
  report.n_paths = n;
  report.seed = ens.seed;

  BoundMonitor monitor = ens.bounds;

  std::vector<double> pathwise(static_cast<std::size_t>(n), 0.0);
  std::vector<double> terminal_vals(static_cast<std::size_t>(n), 0.0);
  std::vector<double> running_vals(static_cast<std::size_t>(n), 0.0);
  std::vector<double> cell(static_cast<std::size_t>(N));

  for (long p = 0; p < n; ++p) {
    double term = 0.0;
    if (c.terminal_cost) {
      term = c.terminal_cost(ens.x(p, N));
      if (!std::isfinite(term))
        throw EvaluationError("terminal_cost returned a non-finite value");
      monitor.observe(term, c.bound);
    }
    double run = 0.0;
    if (c.running_cost) {
      for (int i = 0; i < N; ++i) {
        const double t = ens.grid.node(i);
        const auto row = q.cell_weights(static_cast<std::size_t>(i / ratio));
        double avg = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
          if (row[j] == 0.0) continue;
          const double v = c.running_cost(t, ens.x(p, i), ens.y(p, i),
                                          q.space().atom(j));
          if (!std::isfinite(v))
            throw EvaluationError("running_cost returned a non-finite value");
          monitor.observe(v, c.bound);
          avg += row[j] * v;
        }
        cell[static_cast<std::size_t>(i)] = avg * dt;
      }
      run = pairwise_sum(cell);
    }
    terminal_vals[static_cast<std::size_t>(p)] = term;
    running_vals[static_cast<std::size_t>(p)] = run;
    pathwise[static_cast<std::size_t>(p)] = term + run;
  }

  report.terminal = mean(terminal_vals);
  report.running = mean(running_vals);
  double se_path = std_error(pathwise);

  double se_g = 0.0;
  if (c.initial_cost) {
    std::vector<double> g_vals(static_cast<std::size_t>(n));
    for (long p = 0; p < n; ++p) {
      const double g = c.initial_cost(ens.y(p, 0));
      if (!std::isfinite(g))
        throw EvaluationError("initial_cost returned a non-finite value");
      g_vals[static_cast<std::size_t>(p)] = g;
    }
    report.initial = mean(g_vals);

    if (bootstrap_resamples > 0 && !ens.y0_targets.empty()) {
      report.bootstrap_resamples = bootstrap_resamples;
      const CounterRng rng(CounterRng::derive(ens.seed, 0xB007));
      std::vector<double> g_boot(static_cast<std::size_t>(bootstrap_resamples));
      std::vector<double> y0(static_cast<std::size_t>(c.k));
      for (int b = 0; b < bootstrap_resamples; ++b) {
        std::fill(y0.begin(), y0.end(), 0.0);
        for (long p = 0; p < n; ++p) {
          const double u = rng.uniform(Stream::kBootstrap,
                                       static_cast<std::uint64_t>(p),
                                       static_cast<std::uint32_t>(b), 0);
          const long idx = std::min<long>(n - 1, static_cast<long>(u * n));
          for (int r = 0; r < c.k; ++r)
            y0[static_cast<std::size_t>(r)] +=
                ens.y0_targets[static_cast<std::size_t>(idx * c.k + r)];
        }
        for (int r = 0; r < c.k; ++r) y0[static_cast<std::size_t>(r)] /= static_cast<double>(n);
        g_boot[static_cast<std::size_t>(b)] = c.initial_cost(y0);
      }
      se_g = sample_stddev(g_boot);
    }
  }

  report.estimate = report.terminal + report.initial + report.running;
  report.std_error = std::sqrt(se_path * se_path + se_g * se_g);
  report.bound_violations = monitor.violations;
  report.coefficient_max_abs = monitor.max_abs;
  return report;
}

// Bolza-to-Mayer reduction: one extra backward component accumulates the
// running cost through its driver, the terminal cost moves into the terminal
// condition, and the initial cost reads the extra component at time zero.
inline CoefficientSet bolza_to_mayer(const CoefficientSet& c) {
  c.validate();
  CoefficientSet out;
  out.d = c.d;
  out.m = c.m;
  out.k = c.k + 1;
  out.coupling = c.coupling;
  out.sigma_controlled = c.sigma_controlled;
  out.bound = c.bound;
  out.lipschitz = c.lipschitz;

  const int k = c.k;
  auto narrow = [k](std::span<const double> y) { return y.first(static_cast<std::size_t>(k)); };

  out.drift = [c, narrow](double t, std::span<const double> x, std::span<const double> y,
                          std::span<const double> u, std::span<double> o) {
    c.drift(t, x, narrow(y), u, o);
  };
  out.diffusion = [c, narrow](double t, std::span<const double> x, std::span<const double> y,
                              std::span<const double> u, std::span<double> o) {
    c.diffusion(t, x, narrow(y), u, o);
  };
  out.driver = [c, narrow, k](double t, std::span<const double> x, std::span<const double> y,
                              std::span<const double> u, std::span<double> o) {
    c.driver(t, x, narrow(y), u, o.first(static_cast<std::size_t>(k)));
    o[static_cast<std::size_t>(k)] =
        c.running_cost ? c.running_cost(t, x, narrow(y), u) : 0.0;
  };
  out.terminal = [c, k](std::span<const double> x, std::span<double> o) {
    c.terminal(x, o.first(static_cast<std::size_t>(k)));
    o[static_cast<std::size_t>(k)] = c.terminal_cost ? c.terminal_cost(x) : 0.0;
  };
  out.running_cost = nullptr;
  out.terminal_cost = nullptr;
  out.initial_cost = [c, narrow, k](std::span<const double> y) {
    const double g = c.initial_cost ? c.initial_cost(narrow(y)) : 0.0;
    return g + y[static_cast<std::size_t>(k)];
  };
  return out;
}

// Full pipeline evaluation used by the optimizer and strictification: solve
// under q and report the cost. Coupled problems run the Picard loop.
inline CostReport evaluate_control(const CoefficientSet& c, const RelaxedControl& q,
                                   const TimeGrid& grid, std::span<const double> x0,
                                   long n_paths, std::uint64_t seed,
                                   const RegressionSpec& reg,
                                   const std::optional<PicardConfig>& picard = std::nullopt) {
  if (c.coupling == Coupling::kCoupled) {
    const PicardConfig pc = picard.value_or(PicardConfig{});
    CoupledResult r = solve_coupled(c, q, grid, x0, n_paths, seed, reg, pc);
    return evaluate_cost(c, q, r.ensemble);
  }
  PathEnsemble ens = solve_decoupled(c, q, grid, x0, n_paths, seed, reg);
  return evaluate_cost(c, q, ens);
}

}  // namespace fbsdelab
