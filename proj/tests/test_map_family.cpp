#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "qlab/map_family.hpp"
#include "qlab/observable.hpp"

using namespace qlab;

TEST(MapFamily, DoublingValues) {
  const auto T = PiecewiseAffineMap::doubling();
  EXPECT_DOUBLE_EQ(T(0.3), 0.6);
  EXPECT_DOUBLE_EQ(T(0.75), 0.5);
  EXPECT_DOUBLE_EQ(T(0.5), 0.0);  // ties go right
}

TEST(MapFamily, TentValue) {
  EXPECT_DOUBLE_EQ(PiecewiseAffineMap::tent()(0.75), 0.5);
}

TEST(MapFamily, OutsideUnitIntervalThrows) {
  const auto T = PiecewiseAffineMap::doubling();
  EXPECT_THROW(T(1.0), DomainError);
  EXPECT_THROW(T(-0.1), DomainError);
}

TEST(MapFamily, DoublingInverses) {
  const auto pre = PiecewiseAffineMap::doubling().branch_inverses(0.4);
  ASSERT_EQ(pre.size(), 2u);
  EXPECT_DOUBLE_EQ(pre[0].x, 0.2);
  EXPECT_DOUBLE_EQ(pre[1].x, 0.7);
  EXPECT_DOUBLE_EQ(pre[0].weight, 0.5);
  EXPECT_DOUBLE_EQ(pre[1].weight, 0.5);
}

TEST(MapFamily, BetaThreeInversesOfZero) {
  const auto pre = PiecewiseAffineMap::beta_map(3.0).branch_inverses(0.0);
  ASSERT_EQ(pre.size(), 3u);
  const double want[] = {0.0, 1.0 / 3.0, 2.0 / 3.0};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(pre[i].x, want[i], 1e-15);
    EXPECT_NEAR(pre[i].weight, 1.0 / 3.0, 1e-15);
  }
}

TEST(MapFamily, TentNearTop) {
  const double y = 1.0 - 1e-9;
  const auto pre = PiecewiseAffineMap::tent().branch_inverses(y);
  ASSERT_EQ(pre.size(), 2u);
  for (const auto& p : pre) EXPECT_NEAR(p.x, 0.5, 1e-8);
}

TEST(MapFamily, InverseWeightsSumForFullBranches) {
  const auto T = PiecewiseAffineMap::beta_map(3.0);
  for (double y : {0.01, 0.37, 0.99}) {
    double s = 0.0;
    for (const auto& p : T.branch_inverses(y)) {
      s += p.weight;
      EXPECT_NEAR(T(p.x), y, 1e-14);
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(MapFamily, GoldenBetaHasPartialBranch) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const auto T = PiecewiseAffineMap::beta_map(phi);
  EXPECT_EQ(T.branches().size(), 2u);
  EXPECT_EQ(T.branch_inverses(0.9).size(), 1u);
  EXPECT_EQ(T.branch_inverses(0.1).size(), 2u);
}

TEST(MapFamily, SelectorRejectsWeakExpansion) {
  EXPECT_THROW(FiberSelector({PiecewiseAffineMap::beta_map(1.0005)}, 0.01), ExpansionError);
  FiberSelector sel({PiecewiseAffineMap::beta_map(2.0), PiecewiseAffineMap::beta_map(3.0)});
  EXPECT_NEAR(sel.expansion_margin(), 1.0, 1e-15);
  EXPECT_THROW(sel.map(2), DomainError);
}

TEST(MapFamily, TableMapValidation) {
  EXPECT_THROW(PiecewiseAffineMap::from_table({0.0, 0.5, 1.0}, {2.0}, {0.0}), DomainError);
  EXPECT_THROW(PiecewiseAffineMap::from_table({0.0, 0.5, 1.0}, {3.0, 3.0}, {0.0, 0.0}), DomainError);
  const auto T = PiecewiseAffineMap::from_table({0.0, 0.25, 1.0}, {4.0, 4.0 / 3.0}, {0.0, -1.0 / 3.0});
  EXPECT_NEAR(T(0.5), 1.0 / 3.0, 1e-15);
}

namespace {

Component cos_c() { return {{Term{BasisKind::Cos}}}; }
Component sin_c() { return {{Term{BasisKind::Sin}}}; }
Component rad_c() { return {{Term{BasisKind::Rademacher}}}; }

OmegaState some_state() {
  return OmegaState{std::make_shared<const BaseSystem>(BaseSystem::iid({0.5, 0.5}, 1)), 0};
}

}  // namespace

TEST(Observable, CatalogValues) {
  const auto w = some_state();
  EXPECT_DOUBLE_EQ(Observable({cos_c()}).eval(w, 0.0)[0], 1.0);
  EXPECT_DOUBLE_EQ(Observable({rad_c()}).eval(w, 0.7)[0], -1.0);
  const auto v = Observable({cos_c(), rad_c()}).eval(w, 0.25);
  EXPECT_NEAR(v[0], 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(v[1], 1.0);
}

TEST(Observable, LatticeFlags) {
  const auto r = Observable({rad_c()}).lattice_span();
  ASSERT_TRUE(r.has_value());
  EXPECT_DOUBLE_EQ(*r, 2.0);
  EXPECT_FALSE(Observable({cos_c()}).lattice());
  EXPECT_FALSE(Observable({cos_c(), sin_c()}).lattice());
  Component ind{{Term{BasisKind::Indicator, 1.0, 1.0, 0.0, 0.25}, Term{BasisKind::Constant, -0.25}}};
  EXPECT_TRUE(Observable({ind}).lattice());
  Component mixed{{Term{BasisKind::Indicator, 1.0, 1.0, 0.0, 0.0625}, Term{BasisKind::Cos, 0.1}}};
  EXPECT_FALSE(Observable({mixed}).lattice());
}

TEST(Observable, BoundAndModulation) {
  Observable g({cos_c()}, {1.0, -2.0});
  EXPECT_DOUBLE_EQ(g.bound(), 2.0);
  EXPECT_DOUBLE_EQ(g.raw(0, 1, 0.0), -2.0);
  EXPECT_THROW(g.scale(2), DomainError);
}

TEST(Observable, PartitionConstancy) {
  EXPECT_TRUE(Observable({rad_c()}).partition_constant(8));
  EXPECT_FALSE(Observable({cos_c()}).partition_constant(8));
  Component ind{{Term{BasisKind::Indicator, 1.0, 1.0, 0.0, 0.0625}}};
  EXPECT_TRUE(Observable({ind}).partition_constant(16));
  EXPECT_FALSE(Observable({ind}).partition_constant(8));
}

TEST(Observable, CenteringSubtractsPerFiber) {
  CenteringTable t(10, {{0.25}, {-0.5}}, {0, 1}, 2);
  EXPECT_TRUE(t.uniform_per_symbol());
  EXPECT_DOUBLE_EQ(t.constant(1000, 1, 0), -0.5);
  CenteringTable u(0, {{0.25}, {0.5}}, {0, 0}, 2);
  EXPECT_FALSE(u.uniform_per_symbol());
  EXPECT_THROW(u.constant(5, 0, 0), DomainError);
  CenteringTable once(0, {{0.25}}, {0}, 2);
  EXPECT_DOUBLE_EQ(once.constant(-9, 0, 0), 0.25);
  EXPECT_THROW(once.constant(-9, 1, 0), DomainError);
  Observable g = Observable({rad_c()}).with_centering(t);
  EXPECT_DOUBLE_EQ(g.value(0, 10, 0, 0.1), 0.75);
}
