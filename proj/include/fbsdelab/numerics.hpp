#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

inline constexpr double kPi = 3.14159265358979323846;

// Pairwise (cascade) summation. Deterministic for a fixed input order and
// considerably more accurate than left-to-right accumulation on the long
// reductions the cost and diagnostics modules run.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw ParameterError("mean of empty range");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

// Unbiased sample variance (two-pass).
inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return pairwise_sum(sq) / static_cast<double>(v.size() - 1);
}

inline double sample_stddev(std::span<const double> v) {
  return std::sqrt(sample_variance(v));
}

// Standard error of the sample mean.
inline double std_error(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return sample_stddev(v) / std::sqrt(static_cast<double>(v.size()));
}

// Linear-interpolation quantile on a copy; p in [0,1].
inline double quantile(std::span<const double> v, double p) {
  if (v.empty()) throw ParameterError("quantile of empty range");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("quantile level outside [0,1]");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = p * static_cast<double>(s.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] * (1.0 - frac) + s[hi] * frac;
}

inline double median(std::span<const double> v) { return quantile(v, 0.5); }

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// FNV-1a 64-bit. Used for content digests of canonical serializations; not
// cryptographic, collision resistance at artifact-bookkeeping level only.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return out;
}

// Euclidean projection onto the probability simplex.
inline std::vector<double> project_simplex(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n == 0) throw ParameterError("projection of empty weight vector");
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double theta = 0.0;
  std::size_t rho = 0;
  for (std::size_t i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = i + 1;
      theta = t;
    }
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::max(v[i] - theta, 0.0);
  // Kill the O(eps) drift so downstream row-sum checks at 1e-12 hold exactly.
  const double s = pairwise_sum(w);
  for (double& x : w) x /= s;
  return w;
}

}  // namespace fbsdelab
