#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fbsdelab/controls.hpp"
#include "fbsdelab/forward.hpp"
#include "fbsdelab/generator.hpp"
#include "test_models.hpp"

namespace fl = fbsdelab;

namespace {

const double kY[] = {0.0};

double fd_gradient(const fl::TestFunctionC2& f, double x, double h = 1e-5) {
  const double xp[] = {x + h};
  const double xm[] = {x - h};
  return (f.value(xp) - f.value(xm)) / (2.0 * h);
}

double fd_hessian(const fl::TestFunctionC2& f, double x, double h = 1e-4) {
  const double xp[] = {x + h};
  const double xm[] = {x - h};
  const double xc[] = {x};
  return (f.value(xp) - 2.0 * f.value(xc) + f.value(xm)) / (h * h);
}

}  // namespace

TEST(Generator, ConstantFunctionIsAnnihilated) {
  const auto c = testmodels::controlled_drift(3.0);
  const double x[] = {0.4};
  const double u[] = {1.0};
  EXPECT_EQ(fl::apply_generator(c, fl::test_constant(7.0), 0.0, x, kY, u), 0.0);
}

TEST(Generator, CoordinateFunctionReadsTheDrift) {
  // f = x0: Lf = b = u, the diffusion term vanishes with the hessian.
  const auto c = testmodels::controlled_drift(2.0);
  const double x[] = {0.4};
  const double u[] = {-0.75};
  EXPECT_DOUBLE_EQ(fl::apply_generator(c, fl::test_coordinate(0), 0.0, x, kY, u),
                   -0.75);
}

TEST(Generator, SquareFunctionReadsDriftAndDiffusion) {
  // f = x^2: Lf = 2 x b + sigma^2.
  const auto c = testmodels::controlled_drift(2.0);
  const double x[] = {0.7};
  const double u[] = {-1.0};
  const double expected = 2.0 * 0.7 * -1.0 + 0.5 * (2.0 * 2.0) * 2.0;
  EXPECT_NEAR(fl::apply_generator(c, fl::test_square(), 0.0, x, kY, u), expected,
              1e-14);
}

TEST(Generator, SquareDerivativesAreExact) {
  const auto f = fl::test_square();
  const double x[] = {1.3, -0.2};
  std::vector<double> g(2), h(4);
  f.gradient(x, g);
  f.hessian(x, h);
  EXPECT_DOUBLE_EQ(g[0], 2.6);
  EXPECT_DOUBLE_EQ(g[1], -0.4);
  EXPECT_DOUBLE_EQ(h[0], 2.0);
  EXPECT_DOUBLE_EQ(h[3], 2.0);
  EXPECT_DOUBLE_EQ(h[1], 0.0);
}

TEST(Generator, CappedExpMatchesFiniteDifferences) {
  const auto f = fl::test_capped_exp();
  for (double x : {-2.0, -0.3, 0.0, 0.9, 3.0}) {
    const double xs[] = {x};
    std::vector<double> g(1), h(1);
    f.gradient(xs, g);
    f.hessian(xs, h);
    EXPECT_NEAR(g[0], fd_gradient(f, x), 1e-6) << "x=" << x;
    EXPECT_NEAR(h[0], fd_hessian(f, x), 1e-4) << "x=" << x;
  }
  EXPECT_THROW(fl::test_capped_exp(0.0), fl::ParameterError);
}

TEST(Generator, CappedExpIsBoundedAndTracksExpNearZero) {
  const auto f = fl::test_capped_exp(4.0);
  const double near[] = {0.1};
  EXPECT_NEAR(f.value(near), std::exp(0.1), 1e-4);
  const double far[] = {100.0};
  EXPECT_LE(f.value(far), std::exp(4.0) * (1.0 + 1e-12));
}

TEST(Generator, AveragedGeneratorMixesAtoms) {
  const auto c = testmodels::controlled_drift(0.0);
  const auto q = fl::RelaxedControl(fl::TimeGrid(1.0, 1),
                                    fl::ActionSpace::scalar({1.0, -1.0}),
                                    {0.3, 0.7});
  const double x[] = {0.2};
  const auto f = fl::test_coordinate(0);
  // Lf = u, so the average is 0.3 * 1 + 0.7 * (-1).
  EXPECT_NEAR(fl::averaged_generator(c, q, 0, f, 0.0, x, kY),
              0.3 - 0.7, 1e-15);
}

TEST(Generator, DimensionMismatchesThrow) {
  const auto c = testmodels::controlled_drift(1.0);
  const double x2[] = {0.0, 0.0};
  const double u[] = {0.0};
  EXPECT_THROW(fl::apply_generator(c, fl::test_square(), 0.0, x2, kY, u),
               fl::ParameterError);
  const double x[] = {0.0};
  const double y2[] = {0.0, 0.0};
  EXPECT_THROW(fl::apply_generator(c, fl::test_square(), 0.0, x, y2, u),
               fl::ParameterError);
}

TEST(MartingaleResidual, ConstantFunctionIsExactlyZero) {
  const fl::TimeGrid g(1.0, 8);
  const auto c = testmodels::brownian();
  const auto q = fl::RelaxedControl::uniform(g, fl::ActionSpace::scalar({0.0}));
  const double x0[] = {0.0};
  const auto ens = fl::simulate_forward(c, q, g, x0, 50, 3);
  const auto r = fl::martingale_residual(c, ens, q, fl::test_constant(2.0), 0, 8);
  EXPECT_EQ(r.estimate, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.n_paths, 50);
}

TEST(MartingaleResidual, BrownianSquareIsCenteredWithinNoise) {
  // f = x^2 under dX = dW: the compensator (t - s) removes the drift of X^2
  // exactly, even on the discrete grid.
  const fl::TimeGrid g(1.0, 16);
  const auto c = testmodels::brownian();
  const auto q = fl::RelaxedControl::uniform(g, fl::ActionSpace::scalar({0.0}));
  const double x0[] = {0.0};
  const auto ens = fl::simulate_forward(c, q, g, x0, 20000, 91);
  const auto r = fl::martingale_residual(c, ens, q, fl::test_square(), 4, 12);
  EXPECT_LE(std::fabs(r.estimate), 4.0 * r.std_error);
  EXPECT_GT(r.std_error, 0.0);
}

TEST(MartingaleResidual, AdaptedWeightKeepsTheCenter) {
  const fl::TimeGrid g(1.0, 16);
  const auto c = testmodels::brownian();
  const auto q = fl::RelaxedControl::uniform(g, fl::ActionSpace::scalar({0.0}));
  const double x0[] = {0.0};
  const auto ens = fl::simulate_forward(c, q, g, x0, 20000, 92);
  const fl::PathFunctional phi = [](const fl::PathEnsemble& e, long p, int s) {
    return e.x(p, s)[0];
  };
  const auto r =
      fl::martingale_residual(c, ens, q, fl::test_coordinate(0), 4, 12, phi);
  EXPECT_LE(std::fabs(r.estimate), 4.0 * r.std_error);
}

TEST(MartingaleResidual, ChatteringResidualIsSchemeExact) {
  // sigma = 0, b = u = +-1: the pathwise residual of f = x^2 over [s, t) is
  // sum_i (u_i dt)^2 = (t - s) dt, a pure quadrature identity.
  const auto q0 = fl::RelaxedControl::uniform(
      fl::TimeGrid(1.0, 1), fl::ActionSpace::scalar({1.0, -1.0}));
  const auto u = fl::chattering_approximation(q0, 16);
  const auto q = fl::dirac_embed(u);
  const auto c = testmodels::controlled_drift(0.0);
  const double x0[] = {0.0};
  const auto ens = fl::simulate_forward(c, u, u.grid(), x0, 1, 1);
  const auto r = fl::martingale_residual(c, ens, q, fl::test_square(), 2, 14);
  const double dt = u.grid().dt();
  EXPECT_NEAR(r.estimate, 12.0 * dt * dt, 1e-12);
}

TEST(MartingaleResidual, ValidatesTimeIndices) {
  const fl::TimeGrid g(1.0, 8);
  const auto c = testmodels::brownian();
  const auto q = fl::RelaxedControl::uniform(g, fl::ActionSpace::scalar({0.0}));
  const double x0[] = {0.0};
  const auto ens = fl::simulate_forward(c, q, g, x0, 4, 3);
  EXPECT_THROW(fl::martingale_residual(c, ens, q, fl::test_square(), 5, 5),
               fl::ParameterError);
  EXPECT_THROW(fl::martingale_residual(c, ens, q, fl::test_square(), 0, 9),
               fl::ParameterError);
}
