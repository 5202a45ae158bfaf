#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>
#include <vector>

#include "qlab/limit_lab.hpp"
#include "qlab/quenched_mc.hpp"

using namespace qlab;

namespace {

Component term(BasisKind k, double coef = 1.0) { return {{Term{k, coef}}}; }

Cocycle deterministic(const PiecewiseAffineMap& T, std::vector<Component> g, int bins) {
  auto base = std::make_shared<const BaseSystem>(BaseSystem::iid({1.0, 0.0}, 1));
  return center_observable(Cocycle(base, FiberSelector({T, T}), Observable(std::move(g)), Partition(bins)), 0, 1);
}

Cocycle beta23(std::vector<Component> g, int bins) {
  auto base = std::make_shared<const BaseSystem>(BaseSystem::iid({0.5, 0.5}, 17));
  return center_observable(
      Cocycle(base, FiberSelector({PiecewiseAffineMap::beta_map(2.0), PiecewiseAffineMap::beta_map(3.0)}),
              Observable(std::move(g)), Partition(bins)),
      -100, 400);
}

double log_choose(int n, int k) { return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0); }

}  // namespace

TEST(Sampler, UniformKs) {
  const InitialSampler s(std::vector<double>(64, 1.0));
  const CounterRng rng(3);
  std::vector<double> xs;
  for (std::uint64_t i = 0; i < 100000; ++i) xs.push_back(sample_initial(s, rng, i));
  EXPECT_LT(ks_distance(xs, [](double x) { return std::clamp(x, 0.0, 1.0); }), 0.01);
}

TEST(Sampler, SingleBin) {
  std::vector<double> v(16, 0.0);
  v[5] = 16.0;
  const InitialSampler s(v);
  const CounterRng rng(9);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double x = sample_initial(s, rng, i);
    EXPECT_GE(x, 5.0 / 16);
    EXPECT_LT(x, 6.0 / 16);
  }
}

TEST(Sampler, ParryFrequencies) {
  const double phi = std::numbers::phi;
  const int nb = 1024;
  std::vector<double> v(nb);
  const double c = 1.0 / (1.0 / phi * (1 + 1 / phi) + (1 - 1 / phi));
  for (int i = 0; i < nb; ++i) {
    const double lo = double(i) / nb, hi = double(i + 1) / nb, cut = 1 / phi;
    const double left = std::clamp(cut, lo, hi) - lo;
    v[static_cast<std::size_t>(i)] = c * ((1 + 1 / phi) * left + (hi - lo - left)) * nb;
  }
  const InitialSampler s(v);
  const CounterRng rng(4);
  const int M = 200000;
  std::vector<int> counts(8, 0);
  for (std::uint64_t i = 0; i < M; ++i) ++counts[static_cast<std::size_t>(sample_initial(s, rng, i) * 8)];
  for (int g = 0; g < 8; ++g) {
    double p = 0.0;
    for (int i = g * nb / 8; i < (g + 1) * nb / 8; ++i) p += v[static_cast<std::size_t>(i)] / nb;
    const double se = std::sqrt(p * (1 - p) / M);
    EXPECT_NEAR(counts[static_cast<std::size_t>(g)] / double(M), p, 3 * se) << g;
  }
}

TEST(Sampler, RejectsNonDensity) {
  EXPECT_THROW(InitialSampler(std::vector<double>{1.0, -0.5, 1.5}), DomainError);
  EXPECT_THROW(InitialSampler(std::vector<double>{1.0, 2.0}), DomainError);
}

TEST(Birkhoff, RademacherSingleStep) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const auto b = birkhoff_batch(co, 0, {1}, 20000, {.seed = 2});
  std::size_t plus = 0;
  for (double v : b.component(0)) {
    EXPECT_TRUE(v == 1.0 || v == -1.0);
    if (v > 0) ++plus;
  }
  const auto p = wilson(plus, b.samples);
  EXPECT_LE(p.lo, 0.5);
  EXPECT_GE(p.hi, 0.5);
}

TEST(Birkhoff, ZeroObservable) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Constant, 0.0)}, 16);
  const auto b = birkhoff_batch(co, 0, {5, 50}, 100);
  for (std::size_t l = 0; l < 2; ++l)
    for (double v : b.component(l)) EXPECT_EQ(v, 0.0);
}

TEST(Birkhoff, BinomialDigits) {
  const int n = 20;
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const std::size_t M = 100000;
  const auto b = birkhoff_batch(co, 0, {n}, M, {.seed = 11});
  std::vector<double> counts(n + 1, 0.0);
  for (double v : b.component(0)) ++counts[static_cast<std::size_t>(std::lround((v + n) / 2))];
  // pool sparse tails so every cell has expectation >= 5
  double chi2 = 0.0, lo_obs = 0, lo_exp = 0, hi_obs = 0, hi_exp = 0;
  int cells = 0;
  for (int k = 0; k <= n; ++k) {
    const double e = M * std::exp(log_choose(n, k) - n * std::log(2.0));
    if (k <= 3) {
      lo_obs += counts[static_cast<std::size_t>(k)];
      lo_exp += e;
    } else if (k >= n - 3) {
      hi_obs += counts[static_cast<std::size_t>(k)];
      hi_exp += e;
    } else {
      chi2 += (counts[static_cast<std::size_t>(k)] - e) * (counts[static_cast<std::size_t>(k)] - e) / e;
      ++cells;
    }
  }
  chi2 += (lo_obs - lo_exp) * (lo_obs - lo_exp) / lo_exp + (hi_obs - hi_exp) * (hi_obs - hi_exp) / hi_exp;
  cells += 2;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(cells - 1), chi2));
  EXPECT_GT(p, 0.001) << chi2;
}

TEST(Birkhoff, MeanNearZeroRandomCocycle) {
  const auto co = beta23({term(BasisKind::Cos)}, 512);
  const std::size_t M = 20000;
  const auto b = birkhoff_batch(co, 0, {64}, M, {.seed = 5});
  const auto xs = b.component(0);
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= M;
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(1.0 / M) * 8.0);
}

TEST(Birkhoff, ReproducibleAcrossJobs) {
  const auto co = beta23({term(BasisKind::Cos), term(BasisKind::Sin)}, 256);
  const auto a = birkhoff_batch(co, 3, {10, 40}, 500, {.seed = 8, .jobs = 1});
  const auto b = birkhoff_batch(co, 3, {40, 10}, 500, {.seed = 8, .jobs = 3});
  EXPECT_EQ(a.sums, b.sums);
  const auto c = birkhoff_batch(co, 3, {10, 40}, 500, {.seed = 9});
  EXPECT_NE(a.sums, c.sums);
}

TEST(Birkhoff, QuenchedStationarity) {
  const auto co = beta23({term(BasisKind::Cos)}, 1024);
  const std::size_t M = 40000;
  for (std::int64_t k : {1, 7}) {
    const auto xs = pushed_points(co, 0, k, M, {.seed = 21});
    double mean = 0.0, sq = 0.0;
    const int s = co.symbol(k);
    for (double x : xs) {
      const double v = co.observable().value(0, k, s, x);
      mean += v;
      sq += v * v;
    }
    mean /= M;
    const double se = std::sqrt((sq / M - mean * mean) / M);
    EXPECT_LT(std::abs(mean), 3 * se + 1e-3) << k;
  }
}

TEST(Distances, KsSelfAndNormal) {
  std::vector<double> xs{0.1, 0.1, 0.4, 0.7, 0.7, 0.7};
  auto emp = [&](double x) { return static_cast<double>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin()) / xs.size(); };
  auto emp_left = [&](double x) { return static_cast<double>(std::lower_bound(xs.begin(), xs.end(), x) - xs.begin()) / xs.size(); };
  EXPECT_EQ(ks_distance(xs, emp, emp_left), 0.0);

  const CounterRng rng(31);
  const std::size_t M = 100000;
  std::vector<double> z(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double u1 = 1.0 - rng.uniform(i, 0, 0), u2 = rng.uniform(i, 0, 1);
    z[i] = std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
  }
  EXPECT_LE(ks_distance(z, normal_cdf), 1.36 / std::sqrt(double(M)) * 1.5);
}

TEST(Distances, RademacherBerryEsseen) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const std::int64_t n = 1 << 10;
  const auto b = birkhoff_batch(co, 0, {n}, 100000, {.seed = 12});
  auto xs = b.component(0);
  for (auto& v : xs) v /= std::sqrt(double(n));
  EXPECT_LE(ks_distance(xs, normal_cdf), 0.02);
}

TEST(Distances, CharacteristicFunction) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Cos), term(BasisKind::Sin)}, 1024);
  const auto b = birkhoff_batch(co, 0, {1 << 10}, 20000, {.seed = 13});
  const Mat s2{{0.5, 0.0}, {0.0, 0.5}};
  EXPECT_EQ(cf_distance(b, 0, s2, {{0.0, 0.0}}), 0.0);
  std::vector<std::vector<double>> grid;
  for (double t1 = -3; t1 <= 3; t1 += 1.5)
    for (double t2 = -3; t2 <= 3; t2 += 1.5) grid.push_back({t1, t2});
  EXPECT_LE(cf_distance(b, 0, s2, grid), 0.03);

  const auto zc = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Constant, 0.0)}, 16);
  const auto zb = birkhoff_batch(zc, 0, {8}, 100);
  EXPECT_EQ(cf_distance(zb, 0, {{0.0}}, {{1.0}, {2.5}}), 0.0);
}

TEST(Tails, DirectRademacher) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const int n = 100;
  const auto b = birkhoff_batch(co, 0, {n}, 1000000, {.seed = 14});
  const auto whole = tail_log_prob(b, 0, -2.0);
  EXPECT_EQ(whole.log_prob, 0.0);
  const auto e = tail_log_prob(b, 0, 0.2);
  double exact = 0.0;
  for (int k = 60; k <= n; ++k) exact += std::exp(log_choose(n, k) - n * std::log(2.0));
  EXPECT_LE(e.lo, std::log(exact) / n);
  EXPECT_GE(e.hi, std::log(exact) / n);
  EXPECT_THROW(tail_log_prob(b, 0, 0.9), ConvergenceError);
}

TEST(Tails, TiltedAgreesWithDirect) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const int n = 100;
  const double a = 0.15;
  const auto b = birkhoff_batch(co, 0, {n}, 200000, {.seed = 15});
  const auto d = tail_log_prob(b, 0, a);
  const auto t = tilted_tail_log_prob(co, 0, n, a, std::atanh(a), 20000, {.seed = 16});
  EXPECT_TRUE(t.tilted);
  EXPECT_LT(std::max(d.lo, t.lo), std::min(d.hi, t.hi));
  double exact = 0.0;
  for (int k = 58; k <= n; ++k) exact += std::exp(log_choose(n, k) - n * std::log(2.0));
  EXPECT_NEAR(t.probability / exact, 1.0, 0.05);
}

TEST(Tails, TiltedReachesDeepLevels) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 16);
  const int n = 1000;
  const auto t = tilted_tail_log_prob(co, 0, n, 0.2, std::atanh(0.2), 20000, {.seed = 17});
  double exact = 0.0;
  for (int k = 600; k <= n; ++k) exact += std::exp(log_choose(n, k) - n * std::log(2.0));
  EXPECT_NEAR(t.probability / exact, 1.0, 0.05);
}

TEST(Windows, TrivialAndFar) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Cos)}, 1024);
  const std::int64_t n = 256;
  const auto b = birkhoff_batch(co, 0, {n}, 20000, {.seed = 18});
  EXPECT_EQ(window_prob(b, 0, {0.0}, {1e300}).value, 1.0);
  const auto far = window_prob(b, 0, {10 * std::sqrt(double(n))}, {1.0});
  EXPECT_EQ(far.value, 0.0);
  EXPECT_LT(far.hi, 1e-3);
}

TEST(Windows, LocalLimitCos) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Cos)}, 1024);
  const std::int64_t n = 1024;
  const std::size_t M = 100000;
  const auto b = birkhoff_batch(co, 0, {n}, M, {.seed = 19});
  const double sigma = std::sqrt(0.5);
  const double delta = 0.05 * std::sqrt(double(n)) * sigma;
  const auto w = window_prob(b, 0, {0.0}, {delta});
  const double pred = lclt_mass({0.0}, double(n), {{0.5}}, {delta});
  EXPECT_NEAR(w.value / pred, 1.0, 0.1);
}

TEST(Summary, CsvHeader) {
  std::ostringstream os;
  write_summary_csv(os, {{100, 1000, "ks", 0.01, 0.0, 0.02}});
  EXPECT_EQ(os.str(), "n,M,statistic,value,ci_lo,ci_hi\n100,1000,ks,0.01,0,0.02\n");
}
