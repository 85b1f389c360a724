#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace fbsdelab {

// Counter-based randomness. Every draw is a pure function of
// (seed, stream, path, step, index), so simulation results do not depend on
// evaluation order and any path/step can be reproduced in isolation.

enum class Stream : std::uint32_t {
  kControl = 1,    // atom selection from a relaxed control cell
  kBrownian = 2,   // Brownian increments
  kBootstrap = 3,  // resampling inside standard-error estimation
  kOptimizer = 4,  // optimizer-internal evaluation seeds
  kFreshEval = 5,  // held-out cost evaluations (strictification)
};

namespace detail {

// Philox4x32-10 block cipher (counter mode).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::uint32_t k0,
                                               std::uint32_t k1) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += 0x9E3779B9u;
    k1 += 0xBB67AE85u;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Wichura's PPND16 (algorithm AS 241): inverse standard normal CDF,
// full double accuracy on (0,1).
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) *
                    r +
                4.5921953931549871457e+4) *
                   r +
               1.3731693765509461125e+4) *
                  r +
              1.9715909503065514427e+3) *
                 r +
             1.3314166789178437745e+2) *
                r +
            3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) *
                    r +
                2.1213794301586595867e+4) *
                   r +
               5.3941960214247511077e+3) *
                  r +
              6.8718700749205790830e+2) *
                 r +
             4.2313330701600911252e+1) *
                r +
            1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) *
                   r +
               1.27045825245236838258e+0) *
                  r +
              3.64784832476320460504e+0) *
                 r +
             5.76949722146069140550e+0) *
                r +
            4.63033784615654529590e+0) *
               r +
           1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) *
                   r +
               1.48103976427480074590e-1) *
                  r +
              6.89767334985100004550e-1) *
                 r +
             1.67638483018380384940e+0) *
                r +
            2.05319162663775882187e+0) *
               r +
           1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) *
                   r +
               2.65321895265761230930e-2) *
                  r +
              2.96560571828504891230e-1) *
                 r +
             1.78482653991729133580e+0) *
                r +
            5.46378491116411436990e+0) *
               r +
           6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) *
                   r +
               7.86869131145613259100e-4) *
                  r +
              1.48753612908506148525e-2) *
                 r +
             1.36929880922735805310e-1) *
                r +
            5.99832206555887937690e-1) *
               r +
           1.0);
  }
  return q < 0.0 ? -val : val;
}

}  // namespace detail

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Strictly inside (0,1); safe as input to the inverse normal CDF.
  double uniform(Stream stream, std::uint64_t path, std::uint32_t step,
                 std::uint32_t index) const {
    const std::uint64_t key =
        seed_ ^ detail::splitmix64(static_cast<std::uint64_t>(stream));
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(path),
        static_cast<std::uint32_t>(path >> 32), step, index};
    const auto out = detail::philox4x32(ctr, static_cast<std::uint32_t>(key),
                                        static_cast<std::uint32_t>(key >> 32));
    const std::uint64_t bits =
        (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    const std::uint64_t mantissa = bits >> 11;  // top 53 bits
    return (static_cast<double>(mantissa) + 0.5) * 0x1.0p-53;
  }

  double normal(Stream stream, std::uint64_t path, std::uint32_t step,
                std::uint32_t index) const {
    return detail::inverse_normal_cdf(uniform(stream, path, step, index));
  }

  // Independent sub-seed for nested procedures (optimizer sweeps, bootstrap).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    return detail::splitmix64(seed ^ detail::splitmix64(salt));
  }

 private:
  std::uint64_t seed_;
};

}  // namespace fbsdelab
