#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <memory>
#include <sstream>
#include <vector>

#include "qlab/twisted_cocycle.hpp"

using namespace qlab;

namespace {

Component term(BasisKind k, double coef = 1.0) { return {{Term{k, coef}}}; }

Cocycle deterministic(const PiecewiseAffineMap& T, std::vector<Component> g, int bins) {
  auto base = std::make_shared<const BaseSystem>(BaseSystem::iid({1.0, 0.0}, 1));
  return Cocycle(base, FiberSelector({T, T}), Observable(std::move(g)), Partition(bins));
}

Cocycle beta23(std::vector<Component> g, int bins, std::uint64_t seed = 17) {
  auto base = std::make_shared<const BaseSystem>(BaseSystem::iid({0.5, 0.5}, seed));
  return Cocycle(base, FiberSelector({PiecewiseAffineMap::beta_map(2.0), PiecewiseAffineMap::beta_map(3.0)}),
                 Observable(std::move(g)), Partition(bins));
}

// Continuous transfer operator of T^(2) (two fibers) at y, applied to h.
template <class H>
cplx transfer2(const PiecewiseAffineMap& T0, const PiecewiseAffineMap& T1, double y, H&& h) {
  cplx s{};
  for (const auto& p1 : T1.branch_inverses(y))
    for (const auto& p0 : T0.branch_inverses(p1.x)) s += p0.weight * p1.weight * h(p0.x);
  return s;
}

}  // namespace

TEST(TwistedCocycle, ZeroThetaIsUntwisted) {
  const auto co = beta23({term(BasisKind::Cos)}, 64);
  RealDensity f(std::vector<double>(64));
  for (int i = 0; i < 64; ++i) f[i] = 1.0 + std::sin(i * 0.3);
  const CVec th{0.0};
  const auto a = twisted_apply(co, th, 5, f);
  const auto b = apply_operator(co.op(5), f);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(a[i], cplx(b[i]));
}

TEST(TwistedCocycle, RademacherCosh) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 2);
  for (double t : {-0.7, 0.1, 0.45}) {
    const CVec th{t};
    const auto out = twisted_apply(co, th, 0, RealDensity::uniform(Partition(2)));
    EXPECT_NEAR(out.integral().real(), std::cosh(t), 1e-15);
  }
}

TEST(TwistedCocycle, ThetaDimensionMismatch) {
  const auto co = deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 8);
  const CVec th{0.1, 0.2};
  EXPECT_THROW(twisted_apply(co, th, 0, RealDensity::uniform(Partition(8))), DimensionError);
}

TEST(TwistedCocycle, TwoStepCocycleIdentityBruteForce) {
  const int n = 8;
  Component tab{{Term{BasisKind::Table, 1.0, 1.0, 0.0, 1.0, {0.3, -1.0, 0.5, 2.0, -0.25, 0.0, 1.5, -0.75}}}};
  const auto co = beta23({tab}, n, 5);
  const cplx theta(0.3, -0.2);
  const CVec th{theta};
  RealDensity f(std::vector<double>{1.0, 0.5, 2.0, 0.1, 0.0, 3.0, 1.2, 0.7});
  for (std::int64_t k0 : {0, 1, 2, 3}) {
    auto once = twisted_apply(co, th, k0, f);
    auto twice = twisted_apply(co, th, k0 + 1, once);
    const auto& T0 = co.map(k0);
    const auto& T1 = co.map(k0 + 1);
    auto g = [&](double x) { return tab.value(x); };
    for (int j = 0; j < n; ++j) {
      const double y = (j + 0.5) / n;
      const cplx want = transfer2(T0, T1, y, [&](double x) {
        const double s2 = g(x) + g(T0(x));
        return std::exp(theta * s2) * f[static_cast<std::size_t>(Partition(n).bin_of(x))];
      });
      EXPECT_NEAR(std::abs(twice[j] - want), 0.0, 1e-10) << "k0=" << k0 << " j=" << j;
    }
  }
}

TEST(TwistedCocycle, IntegralIdentityAllSteps) {
  const int n = 8;
  Component tab{{Term{BasisKind::Table, 1.0, 1.0, 0.0, 1.0, {0.3, -1.0, 0.5, 2.0, -0.25, 0.0, 1.5, -0.75}}}};
  for (const auto& T : {PiecewiseAffineMap::doubling(), PiecewiseAffineMap::tent(), PiecewiseAffineMap::beta_map(4.0)}) {
    const auto co = deterministic(T, {tab}, n);
    const CVec th{cplx(0.4, 0.3)};
    RealDensity f(std::vector<double>{1.0, 0.5, 2.0, 0.1, 0.0, 3.0, 1.2, 0.7});
    ComplexDensity cur = f.cast<cplx>();
    for (int steps = 1; steps <= 3; ++steps) {
      cur = twisted_apply(co, th, steps - 1, cur);
      // int e^{theta S_n g} f dm by exact quadrature on pieces of width 1/(8*4^3)
      const int sub = 4096;
      cplx want{};
      for (int i = 0; i < n; ++i)
        for (int s = 0; s < sub; ++s) {
          double x = (i + (s + 0.5) / sub) / n;
          double S = 0.0;
          for (int k = 0; k < steps; ++k) {
            S += tab.value(x);
            x = T(x);
          }
          want += std::exp(th[0] * S) * f[static_cast<std::size_t>(i)];
        }
      want /= static_cast<double>(n) * sub;
      EXPECT_NEAR(std::abs(cur.integral() - want), 0.0, 1e-10) << T.name() << " steps=" << steps;
    }
  }
}

TEST(TwistedCocycle, IntegerMixtureAcimIsUniform) {
  const auto co = beta23({term(BasisKind::Cos)}, 256);
  const auto fam = acim_pullback(co, -5, 20);
  for (const auto& d : fam.densities)
    for (double v : d.values()) EXPECT_NEAR(v, 1.0, 1e-13);
  EXPECT_LT(fam.max_equivariance_residual(), 1e-12);
  EXPECT_GE(fam.min_value(), 1.0 - 1e-12);
}

TEST(TwistedCocycle, GoldenBetaParryDensity) {
  // Parry density: 1 + 1/phi on [0, 1/phi), 1 on [1/phi, 1), normalized
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double lo = phi * phi / (1.0 + phi * phi), hi = lo * (1.0 + 1.0 / phi);
  for (int n : {256, 1024, 4096}) {
    const auto co = deterministic(PiecewiseAffineMap::beta_map(phi), {term(BasisKind::Cos)}, n);
    const auto fam = acim_pullback(co, 0, 3);
    double l1 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x0 = static_cast<double>(i) / n, x1 = static_cast<double>(i + 1) / n, cut = 1.0 / phi;
      const double avg = (std::max(0.0, std::min(x1, cut) - x0) * hi + std::max(0.0, x1 - std::max(x0, cut)) * lo) * n;
      l1 += std::abs(fam.densities[0][i] - avg) / n;
    }
    EXPECT_LT(l1 * n / std::log(n), 0.5) << n;
    EXPECT_LT(fam.max_equivariance_residual(), 1e-8);
    EXPECT_GT(fam.min_value(), 0.5);
  }
}

TEST(TwistedCocycle, LambdaConjugateSymmetry) {
  const auto co = center_observable(beta23({term(BasisKind::Cos)}, 128), -4000, 4200);
  const CVec a{cplx(0.1, 0.15)}, b{cplx(0.1, -0.15)};
  EXPECT_NEAR(std::abs(fiber_lambda(co, a, 7).lambda - std::conj(fiber_lambda(co, b, 7).lambda)), 0.0, 1e-13);
  const CVec z{0.0};
  EXPECT_NEAR(std::abs(fiber_lambda(co, z, 7).lambda - 1.0), 0.0, 1e-12);
}

TEST(TwistedCocycle, TwistedDensityEquivariance) {
  const auto co = center_observable(beta23({term(BasisKind::Cos)}, 128), -4000, 4200);
  const CVec th{cplx(0.2, 0.1)};
  const auto a = fiber_lambda(co, th, 10);
  const auto b = fiber_lambda(co, th, 11);
  const auto La = twisted_apply(co, th, 10, a.density);
  std::vector<cplx> diff(128);
  for (int i = 0; i < 128; ++i) diff[static_cast<std::size_t>(i)] = La[i] - a.lambda * b.density[i];
  EXPECT_LT(l1_norm<cplx>(diff), 1e-10);
  EXPECT_NEAR(std::abs(a.density.integral() - 1.0), 0.0, 1e-12);
}

TEST(TwistedCocycle, PullbackStabilityUnderDoubling) {
  const auto co = center_observable(beta23({term(BasisKind::Cos)}, 128), -4000, 4200);
  const CVec th{cplx(0.25, 0.0)};
  TwistWeights tw(co, th);
  const auto a = twisted_sweep(co, tw, 3, 1, 60).lambda[0];
  const auto b = twisted_sweep(co, tw, 3, 1, 120).lambda[0];
  EXPECT_LT(std::abs(a - b), 1e-9);
}

TEST(TwistedCocycle, PiTraceRademacherLogCosh) {
  const auto co = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 64), 0, 1);
  EXPECT_EQ(std::abs(pi_trace(co, CVec{0.0}, 0, 50).total()), 0.0);
  for (double t : {-0.5, 0.2, 0.5}) {
    const auto tr = pi_trace(co, CVec{t}, 0, 50);
    EXPECT_NEAR(tr.total().real(), 50.0 * std::log(std::cosh(t)), 1e-12);
    EXPECT_NEAR(tr.total().imag(), 0.0, 1e-14);
  }
}

TEST(TwistedCocycle, PiTraceAdditivity) {
  const auto co = center_observable(beta23({term(BasisKind::Cos), term(BasisKind::Sin, 0.5)}, 128), -4000, 4200);
  const CVec th{cplx(0.2, 0.1), cplx(-0.1, 0.05)};
  const auto whole = pi_trace(co, th, 100, 27).total();
  const auto head = pi_trace(co, th, 100, 10).total();
  const auto tail = pi_trace(co, th, 110, 17).total();
  EXPECT_LT(std::abs(whole - head - tail), 1e-9);
}

TEST(TwistedCocycle, LambdaGridRademacherAndConvexity) {
  const auto co = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 64), 0, 1);
  std::vector<std::vector<double>> grid;
  for (int i = -10; i <= 10; ++i) grid.push_back({0.05 * i});
  const auto g = lambda_grid(co, 0, 200, grid);
  for (std::size_t r = 0; r < grid.size(); ++r) EXPECT_NEAR(g.Lambda[r], std::log(std::cosh(grid[r][0])), 1e-9);
  EXPECT_EQ(g.Lambda[10], 0.0);

  const auto cc = center_observable(beta23({term(BasisKind::Cos)}, 256), -4000, 4500);
  const auto h = lambda_grid(cc, 0, 400, grid);
  for (std::size_t r = 1; r + 1 < grid.size(); ++r) EXPECT_GE(h.Lambda[r + 1] - 2 * h.Lambda[r] + h.Lambda[r - 1], -1e-8);
  std::ostringstream os;
  write_lambda_csv(os, h);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "theta_1,re_lambda,im_lambda,Lambda");
}

TEST(TwistedCocycle, DerivativesRademacher) {
  const auto co = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 64), 0, 1);
  const auto d = cumulant_derivs(co, 0, 100);
  EXPECT_NEAR(d.hessian[0][0] / 100.0, 1.0, 1e-9);
  EXPECT_NEAR(d.third / 100.0, 0.0, 1e-9);
  EXPECT_LT(std::abs(d.gradient[0]) / 100.0, 1e-7);
}

TEST(TwistedCocycle, DerivativesDoublingCos) {
  const auto co = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Cos)}, 1024), 0, 1);
  const auto d = cumulant_derivs(co, 0, 200);
  EXPECT_NEAR(d.hessian[0][0] / 200.0, 0.5, 1e-4);
  EXPECT_LT(std::abs(d.gradient[0]) / 200.0, 1e-7);
  EXPECT_LT(d.discrepancy, 1e-5);
}

TEST(TwistedCocycle, CenteredGradientVanishesRandom) {
  Component skew{{Term{BasisKind::Indicator, 1.0, 1.0, 0.0, 0.0625}, Term{BasisKind::Cos, 0.1}}};
  const auto co = center_observable(beta23({skew}, 512), -2000, 2400);
  const auto d = cumulant_derivs(co, 0, 256);
  EXPECT_LT(std::abs(d.gradient[0]) / 256.0, 1e-7);
  EXPECT_GT(d.hessian[0][0], 0.0);
}

TEST(TwistedCocycle, NormGrowthProbe) {
  const auto rad = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Rademacher)}, 256), 0, 1);
  const std::vector<double> pi{std::numbers::pi}, tiny{1e-8};
  EXPECT_NEAR(twisted_norm_growth(rad, pi, 0, 512), 0.0, 1e-12);
  EXPECT_NEAR(twisted_norm_growth(rad, tiny, 0, 512), 0.0, 1e-6);
  const auto cs = center_observable(deterministic(PiecewiseAffineMap::doubling(), {term(BasisKind::Cos)}, 1024), 0, 1);
  EXPECT_LT(twisted_norm_growth(cs, std::vector<double>{1.0}, 0, 4096), -0.05);
}

TEST(TwistedCocycle, OneStepNormBound) {
  const auto co = center_observable(beta23({term(BasisKind::Cos)}, 128), -100, 300);
  const UlamOperator* ops[] = {&co.op_for_symbol(0)};
  const UlamOperator* ops3[] = {&co.op_for_symbol(1)};
  const auto f2 = probe_lasota_yorke(ops, 16, 1), f3 = probe_lasota_yorke(ops3, 16, 1);
  const double KL = std::max({1.0 + f2.beta, f2.alpha, 1.0 + f3.beta, f3.alpha});
  const double M = co.observable().bound();
  double varg = 0.0;
  for (int s = 0; s < 2; ++s) varg = std::max(varg, variation<double>(co.raw_bins(s, 0)));
  CounterRng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const cplx theta(0.6 * (rng.uniform(trial, 0) - 0.5), 0.6 * (rng.uniform(trial, 1) - 0.5));
    ComplexDensity h(Partition(128));
    double level = 0.0;
    for (int i = 0; i < 128; ++i) h[i] = level += rng.uniform(trial, 10 + i) - 0.5;
    const auto out = twisted_apply(co, CVec{theta}, trial, h);
    EXPECT_LE(bv_norm(out), twisted_norm_constant(std::abs(theta), M, varg, KL) * bv_norm(h));
  }
}
