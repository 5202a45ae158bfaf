#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "qlab/base_driver.hpp"

using namespace qlab;

namespace {

std::shared_ptr<const BaseSystem> iid_half(std::uint64_t seed) {
  return std::make_shared<const BaseSystem>(BaseSystem::iid({0.5, 0.5}, seed));
}

}  // namespace

TEST(BaseDriver, AdvanceByZeroIsIdentity) {
  OmegaState w{iid_half(3), 41};
  EXPECT_EQ(advance(w, 0), w);
}

TEST(BaseDriver, RationalRotationStep) {
  auto b = std::make_shared<const BaseSystem>(BaseSystem::rotation(0.25, 0.1));
  OmegaState w{b, 0};
  EXPECT_NEAR(advance(w, 2).point(), 0.6, 1e-15);
}

TEST(BaseDriver, IidSymbolIsStateless) {
  auto a = iid_half(7);
  auto b = iid_half(7);
  OmegaState w0{a, 0};
  OmegaState fresh{b, 5};
  EXPECT_EQ(symbol_at(advance(w0, 5)), symbol_at(fresh));
}

TEST(BaseDriver, DegenerateWeightsAlwaysZero) {
  auto b = std::make_shared<const BaseSystem>(BaseSystem::iid({1.0, 0.0}, 11));
  for (std::int64_t k = -500; k < 500; ++k) EXPECT_EQ(b->symbol(k), 0);
}

TEST(BaseDriver, FairFrequency) {
  auto b = iid_half(2024);
  const int n = 1'000'000;
  int zeros = 0;
  for (int k = 0; k < n; ++k) zeros += b->symbol(k) == 0;
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 0.002);
}

TEST(BaseDriver, RotationThreshold) {
  auto b = std::make_shared<const BaseSystem>(BaseSystem::rotation(0.25, 0.7));
  EXPECT_EQ(b->symbol(0), 1);
  EXPECT_EQ(b->symbol(1), 1);
  EXPECT_EQ(b->symbol(2), 0);
}

TEST(BaseDriver, GroupLawExact) {
  auto b = std::make_shared<const BaseSystem>(BaseSystem::rotation());
  OmegaState w{b, 17};
  for (std::int64_t a : {-1000000LL, -12345LL, 0LL, 999999LL})
    for (std::int64_t c : {-777777LL, 3LL, 1000000LL}) {
      const auto x = advance(w, a + c), y = advance(advance(w, a), c);
      EXPECT_EQ(x, y);
      EXPECT_EQ(x.point(), y.point());
    }
  EXPECT_EQ(advance(advance(w, 123456), -123456).point(), w.point());
}

TEST(BaseDriver, ReproducibleOrbits) {
  BaseOrbit o1(OmegaState{iid_half(99), 0}, 300, 300);
  BaseOrbit o2(OmegaState{iid_half(99), 0}, 300, 300);
  for (std::int64_t k = -300; k <= 300; ++k) {
    EXPECT_EQ(o1.symbol(k), o2.symbol(k));
    EXPECT_EQ(o1.state(k), advance(o1.origin(), k));
  }
  EXPECT_THROW(o1.symbol(301), DomainError);
}

TEST(BaseDriver, BirkhoffAverageOfSymbols) {
  auto b = std::make_shared<const BaseSystem>(BaseSystem::iid({0.2, 0.3, 0.5}, 5));
  const int n = 100000;
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += b->symbol(k);
  const double mean = 0.3 + 2 * 0.5;
  const double var = 0.3 + 4 * 0.5 - mean * mean;
  EXPECT_NEAR(s / n, mean, 3.0 * std::sqrt(var / n));
}

TEST(BaseDriver, RejectsBadWeights) {
  EXPECT_THROW(BaseSystem::iid({0.5, 0.6}, 1), DomainError);
  EXPECT_THROW(BaseSystem::iid({1.0}, 1), DomainError);
  EXPECT_THROW(BaseSystem::rotation(1.5), DomainError);
}
