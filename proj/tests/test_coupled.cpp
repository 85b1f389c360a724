#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fbsdelab/backward.hpp"
#include "test_models.hpp"

namespace fl = fbsdelab;

namespace {

fl::RelaxedControl trivial_control(const fl::TimeGrid& g) {
  return fl::RelaxedControl::uniform(g, fl::ActionSpace::scalar({0.0}));
}

double y0_mean(const fl::PathEnsemble& ens) {
  double y0 = 0.0;
  for (long p = 0; p < ens.n_paths; ++p) y0 += ens.y(p, 0)[0];
  return y0 / static_cast<double>(ens.n_paths);
}

}  // namespace

TEST(Coupled, ForwardInsensitiveProblemExitsOnXFixedPoint) {
  // Declared coupled, but the forward coefficients ignore Y: the second
  // simulation reproduces X bitwise and the loop exits with one backward pass.
  const fl::TimeGrid g(1.0, 8);
  auto c = testmodels::brownian();
  c.coupling = fl::Coupling::kCoupled;
  const double x0[] = {0.0};
  const auto r = fl::solve_coupled(c, trivial_control(g), g, x0, 200, 7,
                                   fl::RegressionSpec{}, fl::PicardConfig{});
  EXPECT_TRUE(r.x_fixed_point);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.change_norms.size(), 1u);
  EXPECT_TRUE(r.ensemble.has_backward);

  // And the result coincides bitwise with the decoupled solve.
  auto cd = testmodels::brownian();
  const auto direct = fl::solve_decoupled(cd, trivial_control(g), g, x0, 200, 7,
                                          fl::RegressionSpec{});
  EXPECT_EQ(r.ensemble.X, direct.X);
  EXPECT_EQ(r.ensemble.Y, direct.Y);
}

TEST(Coupled, RiccatiOracle) {
  // dX = -Y dt + dW, -dY = -X dt - Z dW, phi = x. The ansatz Y_t = a(t) X_t
  // gives a' = 1 + a^2, a(T) = 1, so Y_0 = tan(pi/4 - T) x0.
  const fl::TimeGrid g(1.0, 64);
  const auto c = testmodels::coupled_linear();
  const double x0[] = {1.0};
  const auto r = fl::solve_coupled(c, trivial_control(g), g, x0, 20000, 2024,
                                   fl::RegressionSpec{}, fl::PicardConfig{});
  const double oracle = std::tan(fl::kPi / 4.0 - 1.0);
  EXPECT_NEAR(y0_mean(r.ensemble), oracle, 0.02 * std::fabs(oracle));
  EXPECT_FALSE(r.change_norms.empty());
  EXPECT_LT(r.change_norms.back(), fl::PicardConfig{}.tol);
}

TEST(Coupled, DampingReachesTheSameFixedPoint) {
  const fl::TimeGrid g(1.0, 32);
  const auto c = testmodels::coupled_linear();
  const double x0[] = {1.0};
  fl::PicardConfig full;
  full.damping = 1.0;
  fl::PicardConfig damped;
  damped.damping = 0.5;
  damped.max_iters = 60;
  const auto a = fl::solve_coupled(c, trivial_control(g), g, x0, 4000, 55,
                                   fl::RegressionSpec{}, full);
  const auto b = fl::solve_coupled(c, trivial_control(g), g, x0, 4000, 55,
                                   fl::RegressionSpec{}, damped);
  EXPECT_GT(b.iterations, a.iterations);  // damping slows the approach
  EXPECT_NEAR(y0_mean(a.ensemble), y0_mean(b.ensemble), 2.0 * full.tol);
}

TEST(Coupled, ChangeNormsDecreaseTowardTolerance) {
  const fl::TimeGrid g(1.0, 32);
  const auto c = testmodels::coupled_linear();
  const double x0[] = {1.0};
  const auto r = fl::solve_coupled(c, trivial_control(g), g, x0, 4000, 3,
                                   fl::RegressionSpec{}, fl::PicardConfig{});
  ASSERT_GE(r.change_norms.size(), 2u);
  EXPECT_LT(r.change_norms.back(), r.change_norms.front());
  EXPECT_LT(r.change_norms.back(), fl::PicardConfig{}.tol);
}

TEST(Coupled, ConvergenceFailureCarriesTheTrace) {
  const fl::TimeGrid g(1.0, 16);
  const auto c = testmodels::coupled_linear();
  const double x0[] = {1.0};
  fl::PicardConfig starved;
  starved.max_iters = 1;
  try {
    fl::solve_coupled(c, trivial_control(g), g, x0, 500, 1,
                      fl::RegressionSpec{}, starved);
    FAIL() << "expected ConvergenceError";
  } catch (const fl::ConvergenceError& e) {
    EXPECT_EQ(e.trace().size(), 1u);
    EXPECT_GT(e.trace().front(), starved.tol);
  }
}

TEST(Coupled, SolveAnyDispatchesOnCoupling) {
  const fl::TimeGrid g(1.0, 8);
  const double x0[] = {0.5};

  const auto cd = testmodels::brownian();
  const auto via_any =
      fl::solve_any(cd, trivial_control(g), g, x0, 100, 9, fl::RegressionSpec{});
  const auto direct =
      fl::solve_decoupled(cd, trivial_control(g), g, x0, 100, 9, fl::RegressionSpec{});
  EXPECT_EQ(via_any.X, direct.X);
  EXPECT_EQ(via_any.Y, direct.Y);

  const auto cc = testmodels::coupled_linear();
  const auto coupled_any =
      fl::solve_any(cc, trivial_control(g), g, x0, 2000, 9, fl::RegressionSpec{});
  const auto coupled_direct =
      fl::solve_coupled(cc, trivial_control(g), g, x0, 2000, 9,
                        fl::RegressionSpec{}, fl::PicardConfig{});
  EXPECT_EQ(coupled_any.Y, coupled_direct.ensemble.Y);
}

TEST(Coupled, PicardConfigValidation) {
  fl::PicardConfig p;
  EXPECT_NO_THROW(p.validate());
  p.damping = 0.0;
  EXPECT_THROW(p.validate(), fl::ValidationError);
  p = {};
  p.damping = 1.5;
  EXPECT_THROW(p.validate(), fl::ValidationError);
  p = {};
  p.tol = 0.0;
  EXPECT_THROW(p.validate(), fl::ValidationError);
  p = {};
  p.max_iters = 0;
  EXPECT_THROW(p.validate(), fl::ValidationError);
  p = {};
  p.probe_paths = 0;
  EXPECT_THROW(p.validate(), fl::ValidationError);
}
