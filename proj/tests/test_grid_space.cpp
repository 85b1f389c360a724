#include <gtest/gtest.h>

#include "fbsdelab/action_space.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/grid.hpp"

namespace fl = fbsdelab;

TEST(TimeGrid, NodesAreExactFractions) {
  const fl::TimeGrid g(1.0, 64);
  EXPECT_DOUBLE_EQ(g.dt(), 1.0 / 64.0);
  EXPECT_DOUBLE_EQ(g.node(0), 0.0);
  EXPECT_DOUBLE_EQ(g.node(64), 1.0);
  EXPECT_DOUBLE_EQ(g.node(32), 0.5);
  EXPECT_DOUBLE_EQ(g.midpoint(0), 0.5 / 64.0);
}

TEST(TimeGrid, SharedNodesAreBitwiseEqualAcrossRefinements) {
  const fl::TimeGrid coarse(2.0, 10);
  const fl::TimeGrid fine(2.0, 30);
  for (int i = 0; i <= 10; ++i)
    EXPECT_EQ(coarse.node(i), fine.node(3 * i)) << "node " << i;
}

TEST(TimeGrid, RefinesRequiresDivisibilityAndHorizon) {
  EXPECT_TRUE(fl::TimeGrid(1.0, 64).refines(fl::TimeGrid(1.0, 16)));
  EXPECT_TRUE(fl::TimeGrid(1.0, 16).refines(fl::TimeGrid(1.0, 16)));
  EXPECT_FALSE(fl::TimeGrid(1.0, 48).refines(fl::TimeGrid(1.0, 32)));
  EXPECT_FALSE(fl::TimeGrid(2.0, 64).refines(fl::TimeGrid(1.0, 16)));
  EXPECT_FALSE(fl::TimeGrid(1.0, 16).refines(fl::TimeGrid(1.0, 64)));
}

TEST(TimeGrid, ValidatesInputs) {
  EXPECT_THROW(fl::TimeGrid(0.0, 4), fl::ValidationError);
  EXPECT_THROW(fl::TimeGrid(-1.0, 4), fl::ValidationError);
  EXPECT_THROW(fl::TimeGrid(1.0, 0), fl::ValidationError);
}

TEST(TimeGrid, CoarseCellMapping) {
  const fl::TimeGrid fine(1.0, 12);
  const fl::TimeGrid coarse(1.0, 4);
  EXPECT_EQ(fl::coarse_cell_of(fine, coarse, 0), 0);
  EXPECT_EQ(fl::coarse_cell_of(fine, coarse, 2), 0);
  EXPECT_EQ(fl::coarse_cell_of(fine, coarse, 3), 1);
  EXPECT_EQ(fl::coarse_cell_of(fine, coarse, 11), 3);
  EXPECT_THROW(fl::coarse_cell_of(fl::TimeGrid(1.0, 10), coarse, 0),
               fl::ConfigError);
}

TEST(ActionSpace, ScalarAndEquispaced) {
  const auto s = fl::ActionSpace::scalar({-1.0, 1.0});
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.dim(), 1u);
  EXPECT_DOUBLE_EQ(s.atom(0)[0], -1.0);
  EXPECT_DOUBLE_EQ(s.atom(1)[0], 1.0);

  const auto e = fl::ActionSpace::equispaced(-1.0, 1.0, 21);
  EXPECT_EQ(e.size(), 21u);
  EXPECT_DOUBLE_EQ(e.atom(0)[0], -1.0);
  EXPECT_DOUBLE_EQ(e.atom(10)[0], 0.0);
  EXPECT_DOUBLE_EQ(e.atom(20)[0], 1.0);

  const auto single = fl::ActionSpace::equispaced(0.25, 9.0, 1);
  EXPECT_EQ(single.size(), 1u);
  EXPECT_DOUBLE_EQ(single.atom(0)[0], 0.25);
}

TEST(ActionSpace, VectorAtoms) {
  const fl::ActionSpace space({{0.0, 1.0}, {1.0, 0.0}});
  EXPECT_EQ(space.size(), 2u);
  EXPECT_EQ(space.dim(), 2u);
  EXPECT_DOUBLE_EQ(space.atom(1)[0], 1.0);
}

TEST(ActionSpace, ValidatesAtoms) {
  EXPECT_THROW(fl::ActionSpace(std::vector<std::vector<double>>{}),
               fl::ValidationError);
  EXPECT_THROW(fl::ActionSpace(std::vector<std::vector<double>>{{}}),
               fl::ValidationError);
  EXPECT_THROW(fl::ActionSpace({{1.0}, {1.0, 2.0}}), fl::ValidationError);
  EXPECT_THROW(fl::ActionSpace::scalar({1.0, std::nan("")}), fl::ValidationError);
  EXPECT_THROW(fl::ActionSpace::equispaced(0.0, 1.0, 0), fl::ValidationError);
}

TEST(ActionSpace, EqualityComparesAtoms) {
  EXPECT_TRUE(fl::ActionSpace::scalar({1.0, 2.0}) ==
              fl::ActionSpace::scalar({1.0, 2.0}));
  EXPECT_FALSE(fl::ActionSpace::scalar({1.0, 2.0}) ==
               fl::ActionSpace::scalar({2.0, 1.0}));
}
