#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

// Cross-sectional regression spec for the backward pass and the diagnostics.
//   kPolynomial: all monomials of total degree <= order, ridge-regularized.
//   kBins: equal-mass product binning with per-cell sample means.
struct RegressionSpec {
  enum class Basis { kPolynomial, kBins };
  Basis basis = Basis::kPolynomial;
  int order = 2;        // polynomial degree, or bins per dimension
  double ridge = 1e-10; // relative to the mean diagonal of the normal matrix

  void validate() const {
    if (order < 0) throw ValidationError("regression.order", "must be >= 0");
    if (basis == Basis::kBins && order < 1)
      throw ValidationError("regression.order", "bins basis needs order >= 1");
    if (!(ridge >= 0.0) || !std::isfinite(ridge))
      throw ValidationError("regression.ridge", "must be finite and >= 0");
  }
};

namespace detail {

// Exponent tuples with 1 <= total degree <= `degree`, graded lex order.
inline std::vector<std::vector<int>> monomial_exponents(int dim, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(dim), 0);
  // Enumerate all tuples with entries summing to exactly g, for g = 1..degree.
  std::function<void(int, int)> rec = [&](int pos, int remaining) {
    if (pos == dim - 1) {
      cur[static_cast<std::size_t>(pos)] = remaining;
      out.push_back(cur);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[static_cast<std::size_t>(pos)] = e;
      rec(pos + 1, remaining - e);
    }
  };
  for (int g = 1; g <= degree; ++g) rec(0, g);
  return out;
}

}  // namespace detail

// Fitted conditional-expectation model E[target | state]. The intercept is
// unpenalized and features are centered/scaled from the training sample, so a
// degenerate state (all paths equal) collapses exactly to the sample mean.
class RegressionModel {
 public:
  // states: n x d row-major, targets: n x r row-major.
  RegressionModel(std::span<const double> states, int d,
                  std::span<const double> targets, int r,
                  const RegressionSpec& spec, int backward_step = -1)
      : d_(d), r_(r), spec_(spec) {
    spec_.validate();
    if (d < 1 || r < 1) throw ParameterError("regression dimensions must be >= 1");
    n_ = static_cast<long>(states.size()) / d;
    if (n_ < 1) throw RegressionError("no samples", backward_step);
    if (static_cast<long>(targets.size()) != n_ * r)
      throw RegressionError("state/target size mismatch", backward_step);
    if (spec_.basis == RegressionSpec::Basis::kPolynomial)
      fit_polynomial(states, targets, backward_step);
    else
      fit_bins(states, targets, backward_step);
  }

  int state_dim() const noexcept { return d_; }
  int target_dim() const noexcept { return r_; }
  long n_samples() const noexcept { return n_; }

  // Number of fitted basis functions including the intercept. Leverage
  // (basis_size / n) scales every noise-floor formula downstream.
  int basis_size() const noexcept { return basis_size_; }
  double leverage() const noexcept {
    return static_cast<double>(basis_size_) / static_cast<double>(n_);
  }
  // Per-target-component residual variance, dof-corrected.
  const std::vector<double>& residual_variance() const noexcept {
    return residual_variance_;
  }
  // Fitted values at the training points, n x r row-major.
  const std::vector<double>& fitted() const noexcept { return fitted_; }

  void eval(std::span<const double> x, std::span<double> out) const {
    if (static_cast<int>(x.size()) != d_ || static_cast<int>(out.size()) != r_)
      throw ParameterError("regression eval dimension mismatch");
    if (spec_.basis == RegressionSpec::Basis::kPolynomial)
      eval_polynomial(x, out);
    else
      eval_bins(x, out);
  }

 private:
  void fit_polynomial(std::span<const double> states,
                      std::span<const double> targets, int step) {
    exponents_ = detail::monomial_exponents(d_, spec_.order);
    const int B = static_cast<int>(exponents_.size());
    basis_size_ = B + 1;

    Eigen::MatrixXd design(n_, B);
    for (long p = 0; p < n_; ++p) {
      const double* x = states.data() + p * d_;
      for (int b = 0; b < B; ++b) {
        double v = 1.0;
        for (int j = 0; j < d_; ++j) {
          const int e = exponents_[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
          for (int rep = 0; rep < e; ++rep) v *= x[j];
        }
        design(p, b) = v;
      }
    }
    // Center and scale; columns that are constant across paths drop out of
    // the penalized solve entirely (scale pinned to 1, coefficient -> 0).
    center_.assign(static_cast<std::size_t>(B), 0.0);
    scale_.assign(static_cast<std::size_t>(B), 1.0);
    for (int b = 0; b < B; ++b) {
      center_[static_cast<std::size_t>(b)] = design.col(b).mean();
      design.col(b).array() -= center_[static_cast<std::size_t>(b)];
      const double sd = std::sqrt(design.col(b).squaredNorm() / static_cast<double>(n_));
      if (sd > 1e-300) {
        scale_[static_cast<std::size_t>(b)] = sd;
        design.col(b) /= sd;
      }
    }

    Eigen::MatrixXd normal = design.transpose() * design;
    const double diag_mean = normal.trace() / std::max(B, 1);
    const double lambda = spec_.ridge * std::max(diag_mean, 1.0);
    normal.diagonal().array() += lambda;

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        tgt(targets.data(), n_, r_);
    intercept_.assign(static_cast<std::size_t>(r_), 0.0);
    Eigen::MatrixXd centered_tgt = tgt;
    for (int c = 0; c < r_; ++c) {
      intercept_[static_cast<std::size_t>(c)] = centered_tgt.col(c).mean();
      centered_tgt.col(c).array() -= intercept_[static_cast<std::size_t>(c)];
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    Eigen::MatrixXd beta = ldlt.solve(design.transpose() * centered_tgt);
    if (!beta.allFinite())
      throw RegressionError(
          "singular regression design (rank-deficient beyond ridge)", step);
    coef_ = beta;  // B x r

    Eigen::MatrixXd fit = design * beta;
    fitted_.resize(static_cast<std::size_t>(n_ * r_));
    residual_variance_.assign(static_cast<std::size_t>(r_), 0.0);
    const double dof = std::max<double>(1.0, static_cast<double>(n_) - basis_size_);
    for (long p = 0; p < n_; ++p)
      for (int c = 0; c < r_; ++c) {
        const double f = fit(p, c) + intercept_[static_cast<std::size_t>(c)];
        fitted_[static_cast<std::size_t>(p * r_ + c)] = f;
        const double e = tgt(p, c) - f;
        residual_variance_[static_cast<std::size_t>(c)] += e * e;
      }
    for (int c = 0; c < r_; ++c) residual_variance_[static_cast<std::size_t>(c)] /= dof;
  }

  void eval_polynomial(std::span<const double> x, std::span<double> out) const {
    const int B = static_cast<int>(exponents_.size());
    for (int c = 0; c < r_; ++c) out[static_cast<std::size_t>(c)] = intercept_[static_cast<std::size_t>(c)];
    for (int b = 0; b < B; ++b) {
      double v = 1.0;
      for (int j = 0; j < d_; ++j) {
        const int e = exponents_[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
        for (int rep = 0; rep < e; ++rep) v *= x[static_cast<std::size_t>(j)];
      }
      const double z = (v - center_[static_cast<std::size_t>(b)]) / scale_[static_cast<std::size_t>(b)];
      for (int c = 0; c < r_; ++c) out[static_cast<std::size_t>(c)] += coef_(b, c) * z;
    }
  }

  void fit_bins(std::span<const double> states, std::span<const double> targets,
                int step) {
    const int bins = spec_.order;
    // Equal-mass edges per dimension from sample quantiles.
    edges_.assign(static_cast<std::size_t>(d_), {});
    std::vector<double> col(static_cast<std::size_t>(n_));
    for (int j = 0; j < d_; ++j) {
      for (long p = 0; p < n_; ++p) col[static_cast<std::size_t>(p)] = states[static_cast<std::size_t>(p * d_ + j)];
      std::sort(col.begin(), col.end());
      auto& e = edges_[static_cast<std::size_t>(j)];
      e.resize(static_cast<std::size_t>(bins - 1));
      for (int b = 1; b < bins; ++b) {
        const std::size_t idx = static_cast<std::size_t>(
            std::min<long>(n_ - 1, (static_cast<long>(b) * n_) / bins));
        e[static_cast<std::size_t>(b - 1)] = col[idx];
      }
    }
    long n_cells = 1;
    for (int j = 0; j < d_; ++j) n_cells *= bins;
    basis_size_ = static_cast<int>(std::min<long>(n_cells, n_));

    cell_sum_.assign(static_cast<std::size_t>(n_cells * r_), 0.0);
    cell_count_.assign(static_cast<std::size_t>(n_cells), 0);
    global_mean_.assign(static_cast<std::size_t>(r_), 0.0);
    for (long p = 0; p < n_; ++p) {
      const long cell = cell_index(states.subspan(static_cast<std::size_t>(p * d_), static_cast<std::size_t>(d_)));
      cell_count_[static_cast<std::size_t>(cell)] += 1;
      for (int c = 0; c < r_; ++c) {
        cell_sum_[static_cast<std::size_t>(cell * r_ + c)] += targets[static_cast<std::size_t>(p * r_ + c)];
        global_mean_[static_cast<std::size_t>(c)] += targets[static_cast<std::size_t>(p * r_ + c)];
      }
    }
    for (int c = 0; c < r_; ++c) global_mean_[static_cast<std::size_t>(c)] /= static_cast<double>(n_);
    (void)step;

    fitted_.resize(static_cast<std::size_t>(n_ * r_));
    residual_variance_.assign(static_cast<std::size_t>(r_), 0.0);
    std::vector<double> buf(static_cast<std::size_t>(r_));
    for (long p = 0; p < n_; ++p) {
      std::span<double> out(buf);
      eval_bins(states.subspan(static_cast<std::size_t>(p * d_), static_cast<std::size_t>(d_)), out);
      for (int c = 0; c < r_; ++c) {
        fitted_[static_cast<std::size_t>(p * r_ + c)] = out[static_cast<std::size_t>(c)];
        const double e = targets[static_cast<std::size_t>(p * r_ + c)] - out[static_cast<std::size_t>(c)];
        residual_variance_[static_cast<std::size_t>(c)] += e * e;
      }
    }
    const double dof = std::max<double>(1.0, static_cast<double>(n_) - basis_size_);
    for (int c = 0; c < r_; ++c) residual_variance_[static_cast<std::size_t>(c)] /= dof;
  }

  long cell_index(std::span<const double> x) const {
    long idx = 0;
    for (int j = 0; j < d_; ++j) {
      const auto& e = edges_[static_cast<std::size_t>(j)];
      const long b = std::upper_bound(e.begin(), e.end(), x[static_cast<std::size_t>(j)]) - e.begin();
      idx = idx * spec_.order + b;
    }
    return idx;
  }

  void eval_bins(std::span<const double> x, std::span<double> out) const {
    const long cell = cell_index(x);
    if (cell_count_[static_cast<std::size_t>(cell)] == 0) {
      for (int c = 0; c < r_; ++c) out[static_cast<std::size_t>(c)] = global_mean_[static_cast<std::size_t>(c)];
      return;
    }
    const double inv = 1.0 / static_cast<double>(cell_count_[static_cast<std::size_t>(cell)]);
    for (int c = 0; c < r_; ++c)
      out[static_cast<std::size_t>(c)] = cell_sum_[static_cast<std::size_t>(cell * r_ + c)] * inv;
  }

  int d_;
  int r_;
  long n_ = 0;
  RegressionSpec spec_;
  int basis_size_ = 0;
  std::vector<double> fitted_;
  std::vector<double> residual_variance_;

  // polynomial state
  std::vector<std::vector<int>> exponents_;
  std::vector<double> center_, scale_, intercept_;
  Eigen::MatrixXd coef_;

  // bins state
  std::vector<std::vector<double>> edges_;
  std::vector<double> cell_sum_, global_mean_;
  std::vector<long> cell_count_;
};

}  // namespace fbsdelab
