#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

enum class Coupling { kDecoupled, kCoupled };

// Problem data for the controlled system
//   dX = b(t, X, [Y], u) dt + sigma(t, X, [Y|u]) dW,
//   -dY = h(t, X, Y, u) dt - Z dW,  Y_T = phi(X_T),
// plus the cost integrands. Callbacks write through caller-provided spans and
// must be pure: the solvers evaluate them from multiple passes in any order.
// Conventions the type system cannot enforce (spot-checked at runtime against
// `bound`): decoupled b, sigma ignore y; coupled sigma ignores u.
struct CoefficientSet {
  using StateFn = std::function<void(double t, std::span<const double> x,
                                     std::span<const double> y,
                                     std::span<const double> u,
                                     std::span<double> out)>;
  using ScalarFn = std::function<double(double t, std::span<const double> x,
                                        std::span<const double> y,
                                        std::span<const double> u)>;

  int d = 1;  // forward dimension
  int m = 1;  // Brownian dimension
  int k = 1;  // backward dimension
  Coupling coupling = Coupling::kDecoupled;
  bool sigma_controlled = false;  // diffusion actually reads u (decoupled only)

  double bound = 1e6;     // declared sup bound for coefficient spot checks
  double lipschitz = 0.0; // declared Lipschitz constant of h in y

  StateFn drift;                                    // out: d
  StateFn diffusion;                                // out: d x m, row-major
  StateFn driver;                                   // out: k
  std::function<void(std::span<const double> x, std::span<double> out)> terminal;  // phi, out: k
  ScalarFn running_cost;                            // l, optional (null = 0)
  std::function<double(std::span<const double> x)> terminal_cost;  // psi, optional
  std::function<double(std::span<const double> y)> initial_cost;   // g, optional

  void validate() const {
    if (d < 1 || m < 1 || k < 1)
      throw ValidationError("dimensions", "d, m, k must all be >= 1");
    if (!(bound > 0.0) || !std::isfinite(bound))
      throw ValidationError("bound", "must be finite and positive");
    if (!(lipschitz >= 0.0) || !std::isfinite(lipschitz))
      throw ValidationError("lipschitz", "must be finite and >= 0");
    if (!drift) throw ValidationError("drift", "callback not set");
    if (!diffusion) throw ValidationError("diffusion", "callback not set");
    if (!driver) throw ValidationError("driver", "callback not set");
    if (!terminal) throw ValidationError("terminal", "callback not set");
    if (coupling == Coupling::kCoupled && sigma_controlled)
      throw ValidationError("sigma_controlled",
                            "coupled diffusion may not depend on the control");
  }
};

// Tally of |coefficient| > bound observations. A violation is a model-
// declaration problem, not a numerical failure, so runs continue and report.
struct BoundMonitor {
  long violations = 0;
  double max_abs = 0.0;

  void observe(std::span<const double> values, double bound) {
    for (double v : values) {
      const double a = std::fabs(v);
      if (a > max_abs) max_abs = a;
      if (a > bound) violations += 1;
    }
  }
  void observe(double value, double bound) {
    observe(std::span<const double>(&value, 1), bound);
  }
  void merge(const BoundMonitor& other) {
    violations += other.violations;
    max_abs = std::max(max_abs, other.max_abs);
  }
};

}  // namespace fbsdelab
