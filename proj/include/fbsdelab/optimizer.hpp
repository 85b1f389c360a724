#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/controls.hpp"
#include "fbsdelab/cost.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/numerics.hpp"

namespace fbsdelab {

struct OptimizerConfig {
  enum class StepRule { kExhaustiveVertex, kProjectedGradient };
  enum class Init { kUniform, kDirac };

  StepRule rule = StepRule::kProjectedGradient;
  Init init = Init::kUniform;
  int init_atom = 0;

  int control_cells = 8;     // cells of the optimized control
  int max_sweeps = 12;
  double cost_tolerance = 0.0;  // sweep terminates the run when a full sweep
                                // improves the cost by no more than this
  double step_size = 0.25;      // projected-gradient probe and initial step
  double shrink = 0.5;          // step shrink factor on a rejected candidate

  long eval_paths = 256;
  std::uint64_t seed = 1;       // common random numbers for all evaluations
  RegressionSpec reg{RegressionSpec::Basis::kPolynomial, 1, 1e-10};
  std::optional<PicardConfig> picard;      // coupled problems only
  std::optional<int> refine_to_cells;      // per-sweep cell doubling target

  void validate() const {
    if (control_cells < 1) throw ValidationError("optimizer.control_cells", "must be >= 1");
    if (max_sweeps < 1) throw ValidationError("optimizer.max_sweeps", "must be >= 1");
    if (!(cost_tolerance >= 0.0))
      throw ValidationError("optimizer.cost_tolerance", "must be >= 0");
    if (!(step_size > 0.0 && step_size <= 1.0))
      throw ValidationError("optimizer.step_size", "must be in (0, 1]");
    if (!(shrink > 0.0 && shrink < 1.0))
      throw ValidationError("optimizer.shrink", "must be in (0, 1)");
    if (eval_paths < 1) throw ValidationError("optimizer.eval_paths", "must be >= 1");
    if (refine_to_cells && *refine_to_cells < control_cells)
      throw ValidationError("optimizer.refine_to_cells",
                            "must be >= control_cells");
  }
};

struct TraceEntry {
  int sweep = 0;
  std::string control_digest;
  double cost = 0.0;
  double std_error = 0.0;
};

struct MinimizingTrace {
  std::vector<TraceEntry> entries;  // initial state plus every accepted move
  std::vector<double> final_weights;  // row-major cells x atoms
  int final_cells = 0;
  double final_cost = 0.0;
  double final_std_error = 0.0;
  int sweeps_run = 0;
  bool converged = false;
  long evaluations = 0;
};

// Content digest of a control (grid, atoms, weights), for trace bookkeeping.
inline std::string control_digest(const RelaxedControl& q) {
  std::string bytes;
  auto push = [&bytes](double v) {
    char buf[sizeof(double)];
    std::memcpy(buf, &v, sizeof(double));
    bytes.append(buf, sizeof(double));
  };
  push(q.grid().horizon);
  push(static_cast<double>(q.grid().steps));
  for (std::size_t j = 0; j < q.n_atoms(); ++j)
    for (double cmp : q.space().atom(j)) push(cmp);
  for (double w : q.raw_weights()) push(w);
  return hex64(fnv1a64(bytes));
}

namespace detail {

struct EvalCache {
  const CoefficientSet* c;
  const TimeGrid* grid;
  std::span<const double> x0;
  const OptimizerConfig* cfg;
  long count = 0;

  CostReport operator()(const RelaxedControl& q) {
    ++count;
    return evaluate_control(*c, q, *grid, x0, cfg->eval_paths, cfg->seed,
                            cfg->reg, cfg->picard);
  }
};

}  // namespace detail

// Coordinate descent over the per-cell simplex weights. All candidate costs
// are evaluated with common random numbers (one seed for the whole run), so
// accepted moves strictly decrease the estimate and the trace is monotone by
// construction. The exhaustive-vertex rule searches strict controls only;
// projected-gradient admits interior (genuinely relaxed) weights.
inline MinimizingTrace minimize_relaxed(const CoefficientSet& c, const TimeGrid& grid,
                                        std::span<const double> x0,
                                        const ActionSpace& space,
                                        const OptimizerConfig& cfg) {
  c.validate();
  cfg.validate();
  cfg.reg.validate();
  if (grid.steps % cfg.control_cells != 0)
    throw ConfigError("control_cells must divide the simulation grid");
  if (cfg.refine_to_cells && grid.steps % *cfg.refine_to_cells != 0)
    throw ConfigError("refine_to_cells must divide the simulation grid");

  const std::size_t m = space.size();
  TimeGrid cgrid(grid.horizon, cfg.control_cells);
  RelaxedControl q = [&] {
    if (cfg.init == OptimizerConfig::Init::kUniform)
      return RelaxedControl::uniform(cgrid, space);
    if (cfg.init_atom < 0 || cfg.init_atom >= static_cast<int>(m))
      throw ValidationError("optimizer.init_atom", "outside the action space");
    std::vector<int> atoms(static_cast<std::size_t>(cgrid.steps), cfg.init_atom);
    return dirac_embed(StrictControl(cgrid, space, std::move(atoms)));
  }();

  detail::EvalCache eval{&c, &grid, x0, &cfg};
  MinimizingTrace trace;

  CostReport best = eval(q);
  trace.entries.push_back({0, control_digest(q), best.estimate, best.std_error});

  std::vector<double> step(static_cast<std::size_t>(cfg.control_cells), cfg.step_size);

  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    trace.sweeps_run = sweep;
    double sweep_improvement = 0.0;

    for (int cell = 0; cell < q.grid().steps; ++cell) {
      const auto row = q.cell_weights(static_cast<std::size_t>(cell));
      std::vector<double> best_row;
      double best_cost = best.estimate;
      CostReport best_report = best;

      if (cfg.rule == OptimizerConfig::StepRule::kExhaustiveVertex) {
        for (std::size_t j = 0; j < m; ++j) {
          if (row[j] == 1.0) continue;
          std::vector<double> cand(m, 0.0);
          cand[j] = 1.0;
          RelaxedControl qc = q.with_cell_weights(static_cast<std::size_t>(cell), cand);
          CostReport r = eval(qc);
          if (r.estimate < best_cost) {
            best_cost = r.estimate;
            best_row = cand;
            best_report = r;
          }
        }
      } else {
        // One-sided directional differences toward each vertex at the probe
        // scale, then a projected step. Probes that already improve compete
        // as candidates so a lucky direction is never thrown away.
        const double delta = cfg.step_size;
        std::vector<double> gradient(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
          std::vector<double> probe(row.begin(), row.end());
          for (std::size_t i = 0; i < m; ++i) probe[i] *= (1.0 - delta);
          probe[j] += delta;
          RelaxedControl qp = q.with_cell_weights(static_cast<std::size_t>(cell), probe);
          CostReport r = eval(qp);
          gradient[j] = (r.estimate - best.estimate) / delta;
          if (r.estimate < best_cost) {
            best_cost = r.estimate;
            best_row = probe;
            best_report = r;
          }
        }
        std::vector<double> moved(m);
        const double eta = step[static_cast<std::size_t>(cell)];
        // Normalize so the step length is controlled by eta alone.
        double gnorm = 0.0;
        for (double g : gradient) gnorm = std::max(gnorm, std::fabs(g));
        if (gnorm > 0.0) {
          for (std::size_t j = 0; j < m; ++j)
            moved[j] = row[j] - eta * gradient[j] / gnorm;
          std::vector<double> projected = project_simplex(moved);
          RelaxedControl qm = q.with_cell_weights(static_cast<std::size_t>(cell), projected);
          CostReport r = eval(qm);
          if (r.estimate < best_cost) {
            best_cost = r.estimate;
            best_row = projected;
            best_report = r;
          } else if (best_row.empty()) {
            step[static_cast<std::size_t>(cell)] =
                std::max(1e-4, eta * cfg.shrink);
          }
        }
      }

      if (!best_row.empty() && best_cost < best.estimate) {
        sweep_improvement += best.estimate - best_cost;
        q = q.with_cell_weights(static_cast<std::size_t>(cell), best_row);
        best = best_report;
        trace.entries.push_back(
            {sweep, control_digest(q), best.estimate, best.std_error});
      }
    }

    // Optional refinement: exact reweighting onto the doubled grid changes
    // neither the realized measure nor the cost, so the trace stays monotone.
    if (cfg.refine_to_cells && q.grid().steps * 2 <= *cfg.refine_to_cells) {
      q = resample_control(q, TimeGrid(grid.horizon, q.grid().steps * 2));
      step.assign(static_cast<std::size_t>(q.grid().steps), cfg.step_size);
    }

    if (sweep_improvement <= cfg.cost_tolerance) {
      trace.converged = true;
      break;
    }
  }

  trace.final_weights = q.raw_weights();
  trace.final_cells = q.grid().steps;
  trace.final_cost = best.estimate;
  trace.final_std_error = best.std_error;
  trace.evaluations = eval.count;
  return trace;
}

struct StrictificationReport {
  std::vector<int> selected_atoms;   // per control cell
  double realization_gap = 0.0;      // max over sampled (path, cell)
  std::vector<double> per_cell_gap;  // audited over sampled paths
  double cost_relaxed = 0.0;
  double cost_strict = 0.0;
  double cost_gap = 0.0;           // |relaxed - strict|
  double combined_std_error = 0.0; // sqrt(se_r^2 + se_s^2), fresh seed
  std::uint64_t fresh_seed = 0;
  bool sigma_in_tuple = false;
};

namespace detail {

// Coefficient tuple at one (t, x, y, u): (b, [sigma sigma^T,] h, l). The
// diffusion block enters only when the diffusion is actually controlled.
inline void coefficient_tuple(const CoefficientSet& c, double t,
                              std::span<const double> x, std::span<const double> y,
                              std::span<const double> u, std::span<double> out) {
  std::size_t o = 0;
  std::vector<double> b(static_cast<std::size_t>(c.d));
  c.drift(t, x, y, u, b);
  for (double v : b) out[o++] = v;
  if (c.sigma_controlled) {
    std::vector<double> s(static_cast<std::size_t>(c.d * c.m));
    c.diffusion(t, x, y, u, s);
    for (int r = 0; r < c.d; ++r)
      for (int r2 = 0; r2 < c.d; ++r2) {
        double a = 0.0;
        for (int j = 0; j < c.m; ++j)
          a += s[static_cast<std::size_t>(r * c.m + j)] *
               s[static_cast<std::size_t>(r2 * c.m + j)];
        out[o++] = a;
      }
  }
  std::vector<double> h(static_cast<std::size_t>(c.k));
  c.driver(t, x, y, u, h);
  for (double v : h) out[o++] = v;
  out[o++] = c.running_cost ? c.running_cost(t, x, y, u) : 0.0;
}

}  // namespace detail

// Measurable-selection surrogate: per control cell, pick the atom whose
// coefficient tuple at the cell's median state is closest (Euclidean) to the
// measure-averaged tuple; ties break to the lowest atom index. The gap is
// audited at sampled path states and the cost gap re-evaluated on a fresh
// seed. A Dirac control reproduces itself with zero gap.
inline StrictificationReport strictify(const CoefficientSet& c,
                                       const RelaxedControl& q_hat,
                                       const PathEnsemble& ens,
                                       const RegressionSpec& reg = {},
                                       const std::optional<PicardConfig>& picard = std::nullopt) {
  c.validate();
  if (!ens.grid.refines(q_hat.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");
  const int cells = q_hat.grid().steps;
  const int ratio = ens.grid.steps / cells;
  const long n = ens.n_paths;
  const std::size_t m = q_hat.n_atoms();
  const std::size_t tuple_dim = static_cast<std::size_t>(
      c.d + (c.sigma_controlled ? c.d * c.d : 0) + c.k + 1);

  StrictificationReport report;
  report.sigma_in_tuple = c.sigma_controlled;
  report.selected_atoms.resize(static_cast<std::size_t>(cells));
  report.per_cell_gap.assign(static_cast<std::size_t>(cells), 0.0);

  std::vector<double> tup(tuple_dim), avg(tuple_dim);
  std::vector<double> xmed(static_cast<std::size_t>(c.d));
  std::vector<double> ymed(static_cast<std::size_t>(c.k), 0.0);
  std::vector<double> col(static_cast<std::size_t>(n));

  const long audit_stride = std::max<long>(1, n / 64);

  for (int cell = 0; cell < cells; ++cell) {
    const int mid_step = cell * ratio + ratio / 2;
    const double t = ens.grid.node(mid_step);
    const auto row = q_hat.cell_weights(static_cast<std::size_t>(cell));

    for (int r = 0; r < c.d; ++r) {
      for (long p = 0; p < n; ++p) col[static_cast<std::size_t>(p)] = ens.x(p, mid_step)[static_cast<std::size_t>(r)];
      xmed[static_cast<std::size_t>(r)] = median(col);
    }
    if (ens.has_backward)
      for (int r = 0; r < c.k; ++r) {
        for (long p = 0; p < n; ++p) col[static_cast<std::size_t>(p)] = ens.y(p, mid_step)[static_cast<std::size_t>(r)];
        ymed[static_cast<std::size_t>(r)] = median(col);
      }

    auto averaged_tuple = [&](std::span<const double> x, std::span<const double> y,
                              std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        if (row[j] == 0.0) continue;
        detail::coefficient_tuple(c, t, x, y, q_hat.space().atom(j), tup);
        for (std::size_t i = 0; i < tuple_dim; ++i) out[i] += row[j] * tup[i];
      }
    };

    averaged_tuple(xmed, ymed, avg);
    int best_atom = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      detail::coefficient_tuple(c, t, xmed, ymed, q_hat.space().atom(j), tup);
      double d2 = 0.0;
      for (std::size_t i = 0; i < tuple_dim; ++i)
        d2 += (tup[i] - avg[i]) * (tup[i] - avg[i]);
      if (d2 < best_dist) {  // strict: ties keep the lowest index
        best_dist = d2;
        best_atom = static_cast<int>(j);
      }
    }
    report.selected_atoms[static_cast<std::size_t>(cell)] = best_atom;

    // Audit the gap at sampled path states, not only the median.
    double gap = 0.0;
    std::vector<double> avg_p(tuple_dim);
    for (long p = 0; p < n; p += audit_stride) {
      const auto xp = ens.x(p, mid_step);
      const auto yp = ens.has_backward
                          ? ens.y(p, mid_step)
                          : std::span<const double>(ymed.data(), ymed.size());
      averaged_tuple(xp, yp, avg_p);
      detail::coefficient_tuple(c, t, xp, yp,
                                q_hat.space().atom(static_cast<std::size_t>(best_atom)), tup);
      double d2 = 0.0;
      for (std::size_t i = 0; i < tuple_dim; ++i)
        d2 += (tup[i] - avg_p[i]) * (tup[i] - avg_p[i]);
      gap = std::max(gap, std::sqrt(d2));
    }
    report.per_cell_gap[static_cast<std::size_t>(cell)] = gap;
    report.realization_gap = std::max(report.realization_gap, gap);
  }

  // Cost gap on a fresh seed, full pipeline for both controls.
  report.fresh_seed = CounterRng::derive(ens.seed, 0xF8E5);
  std::vector<double> x0(ens.x(0, 0).begin(), ens.x(0, 0).end());
  StrictControl u(q_hat.grid(), q_hat.space(),
                  std::vector<int>(report.selected_atoms));
  const CostReport cr = evaluate_control(c, q_hat, ens.grid, x0, n,
                                         report.fresh_seed, reg, picard);
  const CostReport cs = evaluate_control(c, dirac_embed(u), ens.grid, x0, n,
                                         report.fresh_seed, reg, picard);
  report.cost_relaxed = cr.estimate;
  report.cost_strict = cs.estimate;
  report.cost_gap = std::fabs(cr.estimate - cs.estimate);
  report.combined_std_error = std::sqrt(cr.std_error * cr.std_error +
                                        cs.std_error * cs.std_error);
  return report;
}

}  // namespace fbsdelab
