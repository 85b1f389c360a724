#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fbsdelab/regression.hpp"

namespace fl = fbsdelab;

namespace {

std::vector<double> linspace(double lo, double hi, long n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i)
    v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return v;
}

}  // namespace

TEST(RegressionSpec, Validation) {
  fl::RegressionSpec s;
  EXPECT_NO_THROW(s.validate());
  s.order = -1;
  EXPECT_THROW(s.validate(), fl::ValidationError);
  s = {fl::RegressionSpec::Basis::kBins, 0, 1e-10};
  EXPECT_THROW(s.validate(), fl::ValidationError);
  s = {fl::RegressionSpec::Basis::kPolynomial, 2, -1.0};
  EXPECT_THROW(s.validate(), fl::ValidationError);
}

TEST(RegressionModel, ConstantTargetIsExactIntercept) {
  const auto x = linspace(-1.0, 1.0, 50);
  const std::vector<double> y(50, 3.25);
  const fl::RegressionModel m(x, 1, y, 1, {});
  std::vector<double> out(1);
  for (double probe : {-2.0, 0.0, 0.7}) {
    m.eval(std::vector<double>{probe}, out);
    EXPECT_DOUBLE_EQ(out[0], 3.25);
  }
  EXPECT_DOUBLE_EQ(m.residual_variance()[0], 0.0);
}

TEST(RegressionModel, DegenerateStatesCollapseToSampleMean) {
  // All paths in the same state: the centered design is zero, so the fit is
  // the target mean regardless of ridge.
  const std::vector<double> x(8, 1.5);
  const std::vector<double> y = {0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  const fl::RegressionModel m(x, 1, y, 1, {});
  std::vector<double> out(1);
  m.eval(std::vector<double>{1.5}, out);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
}

TEST(RegressionModel, RecoversLinearFunction) {
  const auto x = linspace(-1.0, 2.0, 200);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i] + 1.0;
  const fl::RegressionModel m(x, 1, y, 1,
                              {fl::RegressionSpec::Basis::kPolynomial, 1, 1e-10});
  std::vector<double> out(1);
  for (double probe : {-0.5, 0.0, 1.75}) {
    m.eval(std::vector<double>{probe}, out);
    EXPECT_NEAR(out[0], 2.0 * probe + 1.0, 1e-8);
  }
  EXPECT_NEAR(m.residual_variance()[0], 0.0, 1e-12);
}

TEST(RegressionModel, RecoversQuadraticWithOrderTwo) {
  const auto x = linspace(-2.0, 2.0, 300);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i] - 0.5 * x[i];
  const fl::RegressionModel m(x, 1, y, 1, {});
  std::vector<double> out(1);
  for (double probe : {-1.0, 0.3, 1.9}) {
    m.eval(std::vector<double>{probe}, out);
    EXPECT_NEAR(out[0], probe * probe - 0.5 * probe, 1e-7);
  }
}

TEST(RegressionModel, MultiTargetColumnsAreIndependent) {
  const auto x = linspace(0.0, 1.0, 100);
  std::vector<double> y(2 * x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[2 * i] = 3.0 * x[i];
    y[2 * i + 1] = -1.0;
  }
  const fl::RegressionModel m(x, 1, y, 2,
                              {fl::RegressionSpec::Basis::kPolynomial, 1, 1e-10});
  std::vector<double> out(2);
  m.eval(std::vector<double>{0.5}, out);
  EXPECT_NEAR(out[0], 1.5, 1e-8);
  EXPECT_NEAR(out[1], -1.0, 1e-12);
}

TEST(RegressionModel, LargeRidgeShrinksTowardMean) {
  const auto x = linspace(-1.0, 1.0, 100);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
  const fl::RegressionModel m(x, 1, y, 1,
                              {fl::RegressionSpec::Basis::kPolynomial, 1, 1e12});
  std::vector<double> out(1);
  m.eval(std::vector<double>{1.0}, out);
  EXPECT_NEAR(out[0], 0.0, 1e-6);  // slope crushed, intercept (mean) survives
}

TEST(RegressionModel, LeverageAndBasisSize) {
  const auto x = linspace(0.0, 1.0, 10);
  const std::vector<double> y(10, 1.0);
  const fl::RegressionModel m(x, 1, y, 1, {});
  EXPECT_EQ(m.basis_size(), 3);  // 1, x, x^2
  EXPECT_DOUBLE_EQ(m.leverage(), 0.3);

  const auto x2 = linspace(0.0, 1.0, 40);
  std::vector<double> xy(80);
  for (int i = 0; i < 40; ++i) {
    xy[static_cast<std::size_t>(2 * i)] = x2[static_cast<std::size_t>(i)];
    xy[static_cast<std::size_t>(2 * i + 1)] = 1.0 - x2[static_cast<std::size_t>(i)];
  }
  const std::vector<double> t(40, 0.0);
  const fl::RegressionModel m2(xy, 2, t, 1, {});
  EXPECT_EQ(m2.basis_size(), 6);  // 1, x0, x1, x0^2, x0 x1, x1^2
}

TEST(RegressionModel, ResidualVarianceIsDofCorrected) {
  // Degenerate state, d = 1, order = 1: basis {1, x}, dof = n - 2.
  const std::vector<double> x(4, 1.0);
  const std::vector<double> y = {0.0, 1.0, 0.0, 1.0};
  const fl::RegressionModel m(x, 1, y, 1,
                              {fl::RegressionSpec::Basis::kPolynomial, 1, 1e-10});
  EXPECT_DOUBLE_EQ(m.residual_variance()[0], 0.5);  // SSE = 1, dof = 2
}

TEST(RegressionModel, ThrowsOnBadInput) {
  const std::vector<double> empty;
  EXPECT_THROW(fl::RegressionModel(empty, 1, empty, 1, fl::RegressionSpec{}),
               fl::RegressionError);
  const std::vector<double> x = {1.0, 2.0};
  const std::vector<double> y = {1.0};
  EXPECT_THROW(fl::RegressionModel(x, 1, y, 1, fl::RegressionSpec{}),
               fl::RegressionError);
  EXPECT_THROW(fl::RegressionModel(x, 0, x, 1, fl::RegressionSpec{}),
               fl::ParameterError);
}

TEST(RegressionModel, EvalValidatesDimensions) {
  const auto x = linspace(0.0, 1.0, 10);
  const std::vector<double> y(10, 1.0);
  const fl::RegressionModel m(x, 1, y, 1, {});
  std::vector<double> out(2);
  EXPECT_THROW(m.eval(std::vector<double>{0.5, 0.5}, out), fl::ParameterError);
}

TEST(RegressionModel, BinsBasisComputesCellMeans) {
  const long n = 100;
  const auto x = linspace(0.0, 1.0, n);
  std::vector<double> y(static_cast<std::size_t>(n));
  // Constant within each equal-mass half. The edge sits at the n/2-th order
  // statistic and states equal to it land in the upper bin, so the halves
  // split at index 50 exactly.
  for (long i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i < 50 ? 1.0 : 3.0;
  const fl::RegressionModel m(x, 1, y, 1,
                              {fl::RegressionSpec::Basis::kBins, 2, 0.0});
  std::vector<double> out(1);
  m.eval(std::vector<double>{0.0}, out);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  m.eval(std::vector<double>{1.0}, out);
  EXPECT_DOUBLE_EQ(out[0], 3.0);
  // Out-of-range states land in the end bins.
  m.eval(std::vector<double>{-5.0}, out);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  m.eval(std::vector<double>{5.0}, out);
  EXPECT_DOUBLE_EQ(out[0], 3.0);
}

TEST(RegressionModel, FittedValuesAlignWithEval) {
  const auto x = linspace(-1.0, 1.0, 60);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::sin(3.0 * x[i]);
  const fl::RegressionModel m(x, 1, y, 1, {});
  const auto& f = m.fitted();
  ASSERT_EQ(f.size(), x.size());
  std::vector<double> out(1);
  for (std::size_t i = 0; i < x.size(); i += 7) {
    m.eval(std::span<const double>(&x[i], 1), out);
    EXPECT_NEAR(out[0], f[i], 1e-12);
  }
}
