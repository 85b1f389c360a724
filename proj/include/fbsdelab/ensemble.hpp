#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/grid.hpp"

namespace fbsdelab {

// Simulated paths in structure-of-arrays layout, row-major:
//   X  : n_paths x (N+1) x d      Y : n_paths x (N+1) x k
//   Z  : n_paths x  N    x (k*m)  dW: n_paths x  N    x m
// u_sample holds the atom index realized at each (path, step).
struct PathEnsemble {
  TimeGrid grid;
  long n_paths = 0;
  int d = 1, m = 1, k = 1;
  std::uint64_t seed = 0;
  bool has_backward = false;

  std::vector<double> X, Y, Z, dW;
  std::vector<int> u_sample;

  // Raw regression targets behind Y_0 (continuation + driver per path);
  // evaluate_cost bootstraps these for the g(Y_0) error bar.
  std::vector<double> y0_targets;
  // Per-step leverage corrections E|fit|^2 -> |truth|^2 for the Z column of
  // the tightness table: sum over components of basis/n * residual variance.
  std::vector<double> z_bias_correction;

  BoundMonitor bounds;

  int steps() const noexcept { return grid.steps; }

  std::span<const double> x(long p, int i) const {
    return std::span<const double>(X).subspan(
        (static_cast<std::size_t>(p) * (grid.steps + 1) + static_cast<std::size_t>(i)) * d,
        static_cast<std::size_t>(d));
  }
  std::span<double> x(long p, int i) {
    return std::span<double>(X).subspan(
        (static_cast<std::size_t>(p) * (grid.steps + 1) + static_cast<std::size_t>(i)) * d,
        static_cast<std::size_t>(d));
  }
  std::span<const double> y(long p, int i) const {
    return std::span<const double>(Y).subspan(
        (static_cast<std::size_t>(p) * (grid.steps + 1) + static_cast<std::size_t>(i)) * k,
        static_cast<std::size_t>(k));
  }
  std::span<double> y(long p, int i) {
    return std::span<double>(Y).subspan(
        (static_cast<std::size_t>(p) * (grid.steps + 1) + static_cast<std::size_t>(i)) * k,
        static_cast<std::size_t>(k));
  }
  std::span<const double> z(long p, int i) const {
    return std::span<const double>(Z).subspan(
        (static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)) *
            static_cast<std::size_t>(k * m),
        static_cast<std::size_t>(k * m));
  }
  std::span<double> z(long p, int i) {
    return std::span<double>(Z).subspan(
        (static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)) *
            static_cast<std::size_t>(k * m),
        static_cast<std::size_t>(k * m));
  }
  std::span<const double> dw(long p, int i) const {
    return std::span<const double>(dW).subspan(
        (static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)) * m,
        static_cast<std::size_t>(m));
  }
  std::span<double> dw(long p, int i) {
    return std::span<double>(dW).subspan(
        (static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)) * m,
        static_cast<std::size_t>(m));
  }
  int atom(long p, int i) const {
    return u_sample[static_cast<std::size_t>(p) * grid.steps + static_cast<std::size_t>(i)];
  }

  void require_backward(const char* op) const {
    if (!has_backward)
      throw StateError(std::string(op) + " requires a backward pass on the ensemble");
  }
};

inline PathEnsemble make_forward_ensemble(const TimeGrid& grid, long n_paths,
                                          int d, int m, int k,
                                          std::uint64_t seed) {
  if (n_paths < 1) throw ValidationError("n_paths", "must be >= 1");
  PathEnsemble e;
  e.grid = grid;
  e.n_paths = n_paths;
  e.d = d;
  e.m = m;
  e.k = k;
  e.seed = seed;
  e.X.assign(static_cast<std::size_t>(n_paths) * (grid.steps + 1) * d, 0.0);
  e.Y.assign(static_cast<std::size_t>(n_paths) * (grid.steps + 1) * k, 0.0);
  e.Z.assign(static_cast<std::size_t>(n_paths) * grid.steps * k * m, 0.0);
  e.dW.assign(static_cast<std::size_t>(n_paths) * grid.steps * m, 0.0);
  e.u_sample.assign(static_cast<std::size_t>(n_paths) * grid.steps, 0);
  return e;
}

}  // namespace fbsdelab
