#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fbsdelab/diagnostics.hpp"
#include "test_models.hpp"

namespace fl = fbsdelab;

namespace {

fl::RelaxedControl one_atom_control(double horizon) {
  return fl::RelaxedControl::uniform(fl::TimeGrid(horizon, 1),
                                     fl::ActionSpace::scalar({0.0}));
}

// Reverse the path order of an ensemble. Every statistic in this module is an
// exchangeable function of the paths, so this must not change any report.
fl::PathEnsemble reversed_paths(const fl::PathEnsemble& ens) {
  fl::PathEnsemble out = ens;
  const long n = ens.n_paths;
  for (long p = 0; p < n; ++p) {
    const long s = n - 1 - p;
    for (int i = 0; i <= ens.grid.steps; ++i) {
      const auto xs = ens.x(s, i);
      std::copy(xs.begin(), xs.end(), out.x(p, i).begin());
      const auto ys = ens.y(s, i);
      std::copy(ys.begin(), ys.end(), out.y(p, i).begin());
    }
    for (int i = 0; i < ens.grid.steps; ++i) {
      const auto zs = ens.z(s, i);
      std::copy(zs.begin(), zs.end(), out.z(p, i).begin());
      const auto ws = ens.dw(s, i);
      std::copy(ws.begin(), ws.end(), out.dw(p, i).begin());
      out.u_sample[static_cast<std::size_t>(p) * ens.grid.steps + i] =
          ens.atom(s, i);
    }
  }
  return out;
}

}  // namespace

TEST(ConditionalVariation, DeterministicCompensatorIsMeasuredExactly) {
  // Y_t = t on every path: each partition recovers the full variation T = 1
  // exactly (degenerate states make the conditional mean an exact sample
  // mean, and dyadic increments add without rounding).
  fl::PathEnsemble ens = fl::make_forward_ensemble(fl::TimeGrid(1.0, 8), 16, 1, 1, 1, 5);
  for (long p = 0; p < ens.n_paths; ++p)
    for (int i = 0; i <= 8; ++i) ens.y(p, i)[0] = ens.grid.node(i);
  ens.has_backward = true;

  const auto report = fl::conditional_variation(ens, fl::RegressionSpec{});
  EXPECT_DOUBLE_EQ(report.value, 1.0);
  EXPECT_DOUBLE_EQ(report.noise_floor, 0.0);
  EXPECT_EQ(report.conditioning, "state");
  ASSERT_EQ(report.per_partition.size(), 4u);  // 8, 4, 2, 1 intervals
  for (const auto& row : report.per_partition) {
    EXPECT_DOUBLE_EQ(row.cv, 1.0);
    EXPECT_DOUBLE_EQ(row.noise_floor, 0.0);
  }
}

TEST(ConditionalVariation, MartingaleStaysAtTheNoiseFloor) {
  const auto c = testmodels::brownian();
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 16), x0, 8000, 41, fl::RegressionSpec{});
  const auto report = fl::conditional_variation(ens, fl::RegressionSpec{});
  EXPECT_GT(report.noise_floor, 0.0);
  EXPECT_LE(report.value, 3.0 * report.noise_floor);
}

TEST(ConditionalVariation, BoundedByTheDriverMass) {
  const auto c = testmodels::linear_driver();
  const auto q = one_atom_control(1.0);
  const double x0[] = {1.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 16), x0, 4000, 43, fl::RegressionSpec{});
  const double mass = fl::driver_l1(c, q, ens);
  const auto report = fl::conditional_variation(ens, fl::RegressionSpec{});
  EXPECT_GT(mass, 0.3);
  EXPECT_LE(report.value, 1.05 * mass + 3.0 * report.noise_floor);
  EXPECT_GT(report.value, 0.25 * mass);  // the statistic actually sees the driver
}

TEST(ConditionalVariation, ValidatesPartitionsAndState) {
  const auto c = testmodels::brownian();
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 8), x0, 32, 3, fl::RegressionSpec{});
  EXPECT_THROW(fl::conditional_variation(ens, fl::RegressionSpec{}, std::vector<int>{3}),
               fl::ParameterError);
  EXPECT_THROW(fl::conditional_variation(ens, fl::RegressionSpec{}, std::vector<int>{}),
               fl::ParameterError);
  const auto fwd = fl::simulate_forward(c, q, fl::TimeGrid(1.0, 8), x0, 32, 3);
  EXPECT_THROW(fl::conditional_variation(fwd, fl::RegressionSpec{}), fl::StateError);
}

TEST(DriverL1, StateFreeDriversIntegrateExactly) {
  auto c = testmodels::brownian();
  c.driver = [](double, std::span<const double>, std::span<const double>,
                std::span<const double>, std::span<double> o) { o[0] = 1.0; };
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 8), x0, 32, 7, fl::RegressionSpec{});
  EXPECT_DOUBLE_EQ(fl::driver_l1(c, q, ens), 1.0);

  // h = u over atoms {-2, 1} with weights (1/4, 3/4): the averaged |h| is
  // 1/4 * 2 + 3/4 * 1 = 5/4 per unit time, everything dyadic.
  auto cu = testmodels::brownian();
  cu.driver = [](double, std::span<const double>, std::span<const double>,
                 std::span<const double> u, std::span<double> o) { o[0] = u[0]; };
  std::vector<double> w = {0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75};
  const fl::RelaxedControl qm(fl::TimeGrid(1.0, 4),
                              fl::ActionSpace::scalar({-2.0, 1.0}), std::move(w));
  const auto ens2 =
      fl::solve_decoupled(cu, qm, fl::TimeGrid(1.0, 8), x0, 32, 7, fl::RegressionSpec{});
  EXPECT_DOUBLE_EQ(fl::driver_l1(cu, qm, ens2), 1.25);

  const auto mismatched = fl::RelaxedControl::uniform(
      fl::TimeGrid(2.0, 4), fl::ActionSpace::scalar({0.0}));
  EXPECT_THROW(fl::driver_l1(cu, mismatched, ens2), fl::ConfigError);
}

TEST(Upcrossings, CountsCompletedTransitions) {
  const std::vector<double> ramp = {0.0, 0.25, 0.5, 0.75, 1.0};
  EXPECT_EQ(fl::upcrossings(ramp, 0.2, 0.8), 1);

  const std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(fl::upcrossings(flat, 0.2, 0.8), 0);

  std::vector<double> sawtooth;
  for (int i = 0; i < 5; ++i) {
    sawtooth.push_back(-1.0);
    sawtooth.push_back(1.0);
  }
  EXPECT_EQ(fl::upcrossings(sawtooth, -0.5, 0.5), 5);

  // Strictly below a, strictly above b; the counter re-arms only below a.
  EXPECT_EQ(fl::upcrossings(std::vector<double>{0.2, 0.9}, 0.2, 0.8), 0);
  EXPECT_EQ(fl::upcrossings(std::vector<double>{0.1, 0.8}, 0.2, 0.8), 0);
  EXPECT_EQ(fl::upcrossings(std::vector<double>{-1.0, 1.0, 0.5, 1.0}, -0.5, 0.5), 1);

  EXPECT_THROW(fl::upcrossings(ramp, 0.5, 0.5), fl::ParameterError);
  EXPECT_THROW(fl::upcrossings(ramp, 0.8, 0.2), fl::ParameterError);
}

TEST(OrthogonalRemainder, VanishesOnTheBrownianFiltration) {
  const auto c = testmodels::brownian();
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 16), x0, 4000, 47, fl::RegressionSpec{});
  const auto rem = fl::orthogonal_remainder(c, q, ens, fl::RegressionSpec{});
  EXPECT_GT(rem.noise_floor, 0.0);
  EXPECT_LE(rem.value, rem.noise_floor);
}

TEST(OrthogonalRemainder, StaysSmallWithADriver) {
  const auto c = testmodels::linear_driver();
  const auto q = one_atom_control(1.0);
  const double x0[] = {1.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 16), x0, 4000, 49, fl::RegressionSpec{});
  const auto rem = fl::orthogonal_remainder(c, q, ens, fl::RegressionSpec{});
  EXPECT_LE(rem.value, rem.noise_floor);
}

TEST(OrthogonalRemainder, DetectsACorruptedMartingalePart) {
  const auto c = testmodels::brownian();
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 16), x0, 4000, 47, fl::RegressionSpec{});
  std::fill(ens.Z.begin(), ens.Z.end(), 0.0);
  const auto rem = fl::orthogonal_remainder(c, q, ens, fl::RegressionSpec{});
  EXPECT_GE(rem.value, 10.0 * rem.noise_floor);

  const auto fwd = fl::simulate_forward(c, q, fl::TimeGrid(1.0, 8), x0, 32, 3);
  EXPECT_THROW(fl::orthogonal_remainder(c, q, fwd, fl::RegressionSpec{}), fl::StateError);
}

TEST(Diagnostics, StatisticsAreExchangeableOverPaths) {
  const auto c = testmodels::linear_driver();
  const auto q = one_atom_control(1.0);
  const double x0[] = {1.0};
  const auto ens =
      fl::solve_decoupled(c, q, fl::TimeGrid(1.0, 8), x0, 512, 53, fl::RegressionSpec{});
  const auto flipped = reversed_paths(ens);

  // Pairwise summation reorders the reductions, so agreement is to relative
  // rounding, not bitwise.
  const auto a = fl::conditional_variation(ens, fl::RegressionSpec{});
  const auto b = fl::conditional_variation(flipped, fl::RegressionSpec{});
  EXPECT_NEAR(a.value, b.value, 1e-10 * std::max(1.0, std::fabs(a.value)));

  const double da = fl::driver_l1(c, q, ens);
  const double db = fl::driver_l1(c, q, flipped);
  EXPECT_NEAR(da, db, 1e-10 * std::max(1.0, std::fabs(da)));

  const auto ra = fl::orthogonal_remainder(c, q, ens, fl::RegressionSpec{});
  const auto rb = fl::orthogonal_remainder(c, q, flipped, fl::RegressionSpec{});
  EXPECT_NEAR(ra.value, rb.value, 1e-10 * std::max(1.0, std::fabs(ra.value)));
}

TEST(MeyerZheng, TableFlagsABoundedFamily) {
  const auto c = testmodels::brownian();
  const auto q = one_atom_control(1.0);
  const double x0[] = {0.0};
  const auto report = fl::meyer_zheng_table(c, q, x0, 1500, 59, fl::RegressionSpec{},
                                            std::vector<int>{8, 16});
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].steps, 8);
  EXPECT_EQ(report.rows[1].steps, 16);
  ASSERT_EQ(report.ladder.size(), 8u);
  for (const auto& [a, b] : report.ladder) EXPECT_LT(a, b);
  for (const auto& row : report.rows) {
    EXPECT_EQ(row.upcross_p99.size(), 8u);
    EXPECT_GT(row.mean_sup_x2, 0.0);
    EXPECT_GT(row.z_l2_std_error, 0.0);
  }
  // Y_t = X_t here, so Z is 1 and the quadratic Z mass is the horizon.
  EXPECT_NEAR(report.rows[1].z_l2, 1.0, 0.15);
  EXPECT_TRUE(report.cv_bounded);
  EXPECT_TRUE(report.y_bounded);
  EXPECT_TRUE(report.zint_bounded);
  EXPECT_TRUE(report.x2_bounded);
  EXPECT_TRUE(report.y2_bounded);
  EXPECT_TRUE(report.z2_bounded);
  EXPECT_TRUE(report.all_bounded);
  EXPECT_EQ(report.conditioning, "state");

  EXPECT_THROW(fl::meyer_zheng_table(c, q, x0, 100, 1, fl::RegressionSpec{},
                                     std::vector<int>{}),
               fl::ParameterError);
}
