#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/numerics.hpp"

namespace fbsdelab {

// Twice continuously differentiable scalar test function of the state.
struct TestFunctionC2 {
  std::string name;
  std::function<double(std::span<const double>)> value;
  // gradient: out has size d; hessian: out has size d*d, row-major.
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  std::function<void(std::span<const double>, std::span<double>)> hessian;
};

inline TestFunctionC2 test_constant(double v) {
  return {"const",
          [v](std::span<const double>) { return v; },
          [](std::span<const double>, std::span<double> g) {
            std::fill(g.begin(), g.end(), 0.0);
          },
          [](std::span<const double>, std::span<double> h) {
            std::fill(h.begin(), h.end(), 0.0);
          }};
}

inline TestFunctionC2 test_coordinate(int i = 0) {
  return {"x" + std::to_string(i),
          [i](std::span<const double> x) { return x[static_cast<std::size_t>(i)]; },
          [i](std::span<const double> x, std::span<double> g) {
            std::fill(g.begin(), g.end(), 0.0);
            g[static_cast<std::size_t>(i)] = 1.0;
            (void)x;
          },
          [](std::span<const double>, std::span<double> h) {
            std::fill(h.begin(), h.end(), 0.0);
          }};
}

inline TestFunctionC2 test_square() {
  return {"|x|^2",
          [](std::span<const double> x) {
            double s = 0.0;
            for (double v : x) s += v * v;
            return s;
          },
          [](std::span<const double> x, std::span<double> g) {
            for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i];
          },
          [](std::span<const double> x, std::span<double> h) {
            std::fill(h.begin(), h.end(), 0.0);
            const std::size_t d = x.size();
            for (std::size_t i = 0; i < d; ++i) h[i * d + i] = 2.0;
          }};
}

// Bounded surrogate for exp: f(x) = exp(cap * tanh(x0 / cap)), acting on the
// first coordinate. Agrees with exp(x0) to O(x0^3/cap^2) near the origin and
// is globally bounded by exp(cap), so all moments exist under any path law.
inline TestFunctionC2 test_capped_exp(double cap = 4.0) {
  if (!(cap > 0.0)) throw ParameterError("test_capped_exp: cap must be > 0");
  auto val = [cap](std::span<const double> x) {
    return std::exp(cap * std::tanh(x[0] / cap));
  };
  return {"exp-capped",
          val,
          [cap, val](std::span<const double> x, std::span<double> g) {
            std::fill(g.begin(), g.end(), 0.0);
            const double tau = std::tanh(x[0] / cap);
            g[0] = (1.0 - tau * tau) * val(x);
          },
          [cap, val](std::span<const double> x, std::span<double> h) {
            std::fill(h.begin(), h.end(), 0.0);
            const double tau = std::tanh(x[0] / cap);
            const double sech2 = 1.0 - tau * tau;
            h[0] = (sech2 * sech2 - 2.0 * tau * sech2 / cap) * val(x);
          }};
}

// Lf(t,x,y,u) = sum_i b_i df/dx_i + (1/2) sum_ij a_ij d2f/dx_i dx_j,
// a = sigma sigma^T evaluated at (t,x,y,u).
inline double apply_generator(const CoefficientSet& c, const TestFunctionC2& f,
                              double t, std::span<const double> x,
                              std::span<const double> y, std::span<const double> u) {
  if (x.size() != static_cast<std::size_t>(c.d))
    throw ParameterError("apply_generator: x has dimension " +
                         std::to_string(x.size()) + ", expected " + std::to_string(c.d));
  if (y.size() != static_cast<std::size_t>(c.k))
    throw ParameterError("apply_generator: y has dimension " +
                         std::to_string(y.size()) + ", expected " + std::to_string(c.k));
  if (!f.value || !f.gradient || !f.hessian)
    throw ParameterError("apply_generator: test function lacks callbacks");

  const std::size_t d = static_cast<std::size_t>(c.d);
  const std::size_t m = static_cast<std::size_t>(c.m);
  std::vector<double> b(d), s(d * m), grad(d), hess(d * d);
  c.drift(t, x, y, u, b);
  c.diffusion(t, x, y, u, s);
  f.gradient(x, grad);
  f.hessian(x, hess);

  double lf = 0.0;
  for (std::size_t i = 0; i < d; ++i) lf += b[i] * grad[i];
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double a_ij = 0.0;
      for (std::size_t r = 0; r < m; ++r) a_ij += s[i * m + r] * s[j * m + r];
      lf += 0.5 * a_ij * hess[i * d + j];
    }
  if (!std::isfinite(lf))
    throw EvaluationError("apply_generator: non-finite value for '" + f.name + "'");
  return lf;
}

// Generator averaged against one cell of the relaxed control's measure.
inline double averaged_generator(const CoefficientSet& c, const RelaxedControl& q,
                                 std::size_t cell, const TestFunctionC2& f, double t,
                                 std::span<const double> x, std::span<const double> y) {
  const auto w = q.cell_weights(cell);
  double lf = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] == 0.0) continue;
    lf += w[j] * apply_generator(c, f, t, x, y, q.space().atom(j));
  }
  return lf;
}

struct MartingaleResidual {
  double estimate = 0.0;
  double std_error = 0.0;
  long n_paths = 0;
};

// Bounded functional of the path up to the given step; implementations must
// not read the ensemble beyond that step (adaptedness is the caller's
// contract, it cannot be enforced here).
using PathFunctional = std::function<double(const PathEnsemble&, long path, int step)>;

// Monte Carlo estimate of E[ Phi_s * (C_t f - C_s f) ] where
// C_t f = f(X_t) - f(X_0) - sum_{i<t} (averaged Lf)(t_i, X_i) dt. Under the
// relaxed dynamics this is a martingale increment, so the estimate vanishes
// up to O(dt) scheme bias plus Monte Carlo noise.
inline MartingaleResidual martingale_residual(const CoefficientSet& c,
                                              const PathEnsemble& ens,
                                              const RelaxedControl& q,
                                              const TestFunctionC2& f, int s, int t,
                                              const PathFunctional& phi = nullptr) {
  c.validate();
  if (s >= t) throw ParameterError("martingale_residual: requires s < t");
  if (s < 0 || t > ens.grid.steps)
    throw ParameterError("martingale_residual: time indices outside the grid");
  if (!ens.grid.refines(q.grid()))
    throw ConfigError("control grid is not a coarsening of the ensemble grid");

  const int ratio = ens.grid.steps / q.grid().steps;
  const double dt = ens.grid.dt();
  const std::vector<double> y_zero(static_cast<std::size_t>(c.k), 0.0);

  std::vector<double> vals(static_cast<std::size_t>(ens.n_paths));
  for (long p = 0; p < ens.n_paths; ++p) {
    double comp = 0.0;  // compensator over [s, t)
    for (int i = s; i < t; ++i) {
      const auto yi = ens.has_backward ? ens.y(p, i)
                                       : std::span<const double>(y_zero);
      comp += averaged_generator(c, q, static_cast<std::size_t>(i / ratio), f,
                                 ens.grid.node(i), ens.x(p, i), yi) * dt;
    }
    const double incr = f.value(ens.x(p, t)) - f.value(ens.x(p, s)) - comp;
    const double weight = phi ? phi(ens, p, s) : 1.0;
    vals[static_cast<std::size_t>(p)] = weight * incr;
  }
  MartingaleResidual out;
  out.estimate = mean(vals);
  out.std_error = std_error(vals);
  out.n_paths = ens.n_paths;
  if (!std::isfinite(out.estimate))
    throw EvaluationError("martingale_residual: non-finite estimate");
  return out;
}

}  // namespace fbsdelab
