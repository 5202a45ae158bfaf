#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qlab/base_driver.hpp"
#include "qlab/error.hpp"
#include "qlab/map_family.hpp"
#include "qlab/observable.hpp"
#include "qlab/rng.hpp"
#include "qlab/ulam.hpp"

namespace qlab {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

/// Numerical knobs for pullbacks and twisted sweeps.
struct CocycleOptions {
  int acim_depth0 = 16;
  int acim_depth_max = 4096;
  double acim_tol = 1e-8;
  int burn0 = 24;
  int burn_max = 2048;
  double lambda_tol = 1e-12;
  double analyticity_radius = 0.5;
  double contour_radius = 0.25;
  int contour_nodes = 32;
};

/// Random cocycle of Ulam operators with its observable.
///
/// Immutable; copies share the operator storage.
class Cocycle {
 public:
  Cocycle(std::shared_ptr<const BaseSystem> base, FiberSelector selector, Observable observable, Partition part)
      : shared_(std::make_shared<Shared>(std::move(base), std::move(selector), part)),
        observable_(std::move(observable)) {
    if (observable_.modulation().size() > 0 &&
        observable_.modulation().size() < static_cast<std::size_t>(shared_->base->alphabet_size()))
      throw DomainError("observable modulation needs one factor per base symbol");
    if (shared_->selector.size() < static_cast<std::size_t>(shared_->base->alphabet_size()))
      throw DomainError("fiber selector needs one map per base symbol");
    rebuild_bins();
  }

  const BaseSystem& base() const noexcept { return *shared_->base; }
  std::shared_ptr<const BaseSystem> base_ptr() const noexcept { return shared_->base; }
  const FiberSelector& selector() const noexcept { return shared_->selector; }
  const Observable& observable() const noexcept { return observable_; }
  Partition partition() const noexcept { return shared_->part; }
  int bins() const noexcept { return shared_->part.size(); }
  std::size_t dim() const noexcept { return observable_.dim(); }
  int alphabet_size() const noexcept { return shared_->base->alphabet_size(); }
  int pullback_depth() const noexcept { return pullback_depth_; }

  int symbol(std::int64_t k) const { return shared_->base->symbol(k); }
  OmegaState state(std::int64_t k) const { return OmegaState{shared_->base, k}; }
  const PiecewiseAffineMap& map(std::int64_t k) const { return shared_->selector.map(symbol(k)); }
  const UlamOperator& op(std::int64_t k) const { return shared_->ops[static_cast<std::size_t>(symbol(k))]; }
  const UlamOperator& op_for_symbol(int s) const { return shared_->ops[static_cast<std::size_t>(s)]; }

  /// Uncentered bin values of component c on fibers labelled `symbol`.
  std::span<const double> raw_bins(int symbol, std::size_t c) const {
    return raw_bins_[static_cast<std::size_t>(symbol)][c];
  }

  /// Centering constant of component c at fiber k (0 when uncentered).
  double center(std::int64_t k, std::size_t c) const {
    const auto* t = observable_.centering();
    return t ? t->constant(k, symbol(k), c) : 0.0;
  }

  /// Centered bin values of component c at fiber k.
  std::vector<double> bins_at(std::int64_t k, std::size_t c) const {
    auto raw = raw_bins(symbol(k), c);
    const double m = center(k, c);
    std::vector<double> out(raw.begin(), raw.end());
    for (auto& v : out) v -= m;
    return out;
  }

  Cocycle with_observable(Observable obs) const {
    Cocycle c = *this;
    c.observable_ = std::move(obs);
    c.rebuild_bins();
    return c;
  }

  Cocycle with_pullback_depth(int depth) const {
    Cocycle c = *this;
    c.pullback_depth_ = depth;
    return c;
  }

 private:
  struct Shared {
    Shared(std::shared_ptr<const BaseSystem> b, FiberSelector s, Partition p)
        : base(std::move(b)), selector(std::move(s)), part(p) {
      for (int sym = 0; sym < base->alphabet_size(); ++sym) ops.push_back(build_ulam(selector.map(sym), part));
    }
    std::shared_ptr<const BaseSystem> base;
    FiberSelector selector;
    Partition part;
    std::vector<UlamOperator> ops;
  };

  void rebuild_bins() {
    raw_bins_.assign(static_cast<std::size_t>(alphabet_size()), {});
    for (int s = 0; s < alphabet_size(); ++s)
      for (std::size_t c = 0; c < dim(); ++c)
        raw_bins_[static_cast<std::size_t>(s)].push_back(observable_.raw_bin_values(c, s, bins()));
  }

  std::shared_ptr<const Shared> shared_;
  Observable observable_;
  std::vector<std::vector<std::vector<double>>> raw_bins_;
  int pullback_depth_ = 64;
};

// ---------------------------------------------------------------------------
// Twisted weights

/// Per-symbol weights exp(theta . g_raw) on every bin; the centering factor
/// exp(-theta . c_k) is a scalar per fiber and is applied separately.
class TwistWeights {
 public:
  TwistWeights(const Cocycle& co, std::span<const cplx> theta) : theta_(theta.begin(), theta.end()) {
    if (theta.size() != co.dim())
      throw DimensionError("theta has dimension " + std::to_string(theta.size()) + ", observable has " +
                           std::to_string(co.dim()));
    const int n = co.bins();
    for (int s = 0; s < co.alphabet_size(); ++s) {
      CVec w(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        cplx e{};
        for (std::size_t c = 0; c < co.dim(); ++c) e += theta_[c] * co.raw_bins(s, c)[static_cast<std::size_t>(i)];
        w[static_cast<std::size_t>(i)] = std::exp(e);
      }
      per_symbol_.push_back(std::move(w));
    }
  }

  std::span<const cplx> weights(int symbol) const { return per_symbol_[static_cast<std::size_t>(symbol)]; }
  const CVec& theta() const noexcept { return theta_; }

  /// exp(-theta . c_k).
  cplx center_factor(const Cocycle& co, std::int64_t k) const {
    if (!co.observable().centered()) return 1.0;
    cplx e{};
    for (std::size_t c = 0; c < theta_.size(); ++c) e -= theta_[c] * co.center(k, c);
    return std::exp(e);
  }

 private:
  CVec theta_;
  std::vector<CVec> per_symbol_;
};

/// out = L_k^theta(in) = L_k(exp(theta . g_k) in); scratch has the same length.
inline void twisted_apply_inplace(const Cocycle& co, const TwistWeights& tw, std::int64_t k, std::span<const cplx> in,
                                  std::span<cplx> out, std::span<cplx> scratch) {
  const int s = co.symbol(k);
  const auto w = tw.weights(s);
  const cplx cf = tw.center_factor(co, k);
  for (std::size_t i = 0; i < in.size(); ++i) scratch[i] = w[i] * in[i] * cf;
  co.op_for_symbol(s).apply<cplx>(scratch, out);
}

inline ComplexDensity twisted_apply(const Cocycle& co, std::span<const cplx> theta, std::int64_t k,
                                    const ComplexDensity& f) {
  if (f.size() != co.bins()) throw DimensionError("density partition does not match the cocycle");
  TwistWeights tw(co, theta);
  ComplexDensity out(co.partition());
  CVec scratch(static_cast<std::size_t>(co.bins()));
  twisted_apply_inplace(co, tw, k, f.span(), out.values(), scratch);
  return out;
}

inline ComplexDensity twisted_apply(const Cocycle& co, std::span<const cplx> theta, std::int64_t k,
                                    const RealDensity& f) {
  return twisted_apply(co, theta, k, f.cast<cplx>());
}

inline CVec real_theta(std::span<const double> t) { return CVec(t.begin(), t.end()); }

// ---------------------------------------------------------------------------
// Random acim

/// v^0 on fibers [first, first + count) together with convergence diagnostics.
struct AcimFamily {
  std::int64_t first = 0;
  std::vector<RealDensity> densities;
  int depth = 0;
  std::vector<double> pullback_residuals;     // ||v_k(depth) - v_k(2 depth)||_1
  std::vector<double> equivariance_residuals;  // ||L_k v_k - v_{k+1}||_1

  const RealDensity& at(std::int64_t k) const {
    if (k < first || k >= first + static_cast<std::int64_t>(densities.size()))
      throw DomainError("acim requested outside the computed window");
    return densities[static_cast<std::size_t>(k - first)];
  }
  double max_pullback_residual() const {
    return pullback_residuals.empty() ? 0.0 : *std::max_element(pullback_residuals.begin(), pullback_residuals.end());
  }
  double max_equivariance_residual() const {
    return equivariance_residuals.empty()
               ? 0.0
               : *std::max_element(equivariance_residuals.begin(), equivariance_residuals.end());
  }
  double min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& d : densities)
      for (double v : d.values()) m = std::min(m, v);
    return m;
  }
};

/// Untwisted normalized pullback: applies L from fiber `from` up to (not
/// including) fiber `to`, starting with the uniform density; calls
/// visit(k, v_k) for every k in [visit_from, to].
template <class Visit>
void acim_sweep(const Cocycle& co, std::int64_t from, std::int64_t to, std::int64_t visit_from, Visit&& visit) {
  std::vector<double> cur(static_cast<std::size_t>(co.bins()), 1.0), next(cur.size());
  for (std::int64_t k = from;; ++k) {
    if (k >= visit_from) visit(k, std::span<const double>(cur));
    if (k == to) break;
    co.op(k).apply<double>(cur, next);
    double mass = 0.0;
    for (double v : next) mass += v;
    mass /= static_cast<double>(next.size());
    for (auto& v : next) v /= mass;
    std::swap(cur, next);
  }
}

/// v^0_k ~ L^(N)_{sigma^{k-N}} 1, with N doubled until the N vs 2N pullbacks
/// agree to tol on every fiber of the window.
inline AcimFamily acim_pullback(const Cocycle& co, std::int64_t first, std::int64_t count,
                                const CocycleOptions& opt = {}) {
  if (count < 1) throw DomainError("acim window must contain at least one fiber");
  for (int N = opt.acim_depth0; N <= opt.acim_depth_max; N *= 2) {
    AcimFamily fam;
    fam.first = first;
    fam.depth = N;
    const std::int64_t last = first + count - 1;
    acim_sweep(co, first - N, last, first, [&](std::int64_t, std::span<const double> v) {
      fam.densities.emplace_back(std::vector<double>(v.begin(), v.end()));
    });
    double worst = 0.0;
    std::size_t idx = 0;
    acim_sweep(co, first - 2 * N, last, first, [&](std::int64_t, std::span<const double> v) {
      const auto& a = fam.densities[idx++].values();
      double d = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) d += std::abs(a[i] - v[i]);
      d /= static_cast<double>(v.size());
      fam.pullback_residuals.push_back(d);
      worst = std::max(worst, d);
    });
    if (worst <= opt.acim_tol) {
      std::vector<double> out(static_cast<std::size_t>(co.bins()));
      for (std::size_t j = 0; j + 1 < fam.densities.size(); ++j) {
        co.op(first + static_cast<std::int64_t>(j)).apply<double>(fam.densities[j].values(), out);
        fam.equivariance_residuals.push_back(l1_norm<double>([&] {
          std::vector<double> diff(out.size());
          for (std::size_t i = 0; i < out.size(); ++i) diff[i] = out[i] - fam.densities[j + 1][i];
          return diff;
        }()));
      }
      return fam;
    }
  }
  throw ConvergenceError("acim pullback did not converge to tolerance within depth " +
                         std::to_string(opt.acim_depth_max) + " (non-admissible configuration?)");
}

/// Smallest converged pullback depth at fiber k (probed on one fiber).
inline int acim_depth(const Cocycle& co, std::int64_t k, const CocycleOptions& opt = {}) {
  return acim_pullback(co, k, 1, opt).depth;
}

/// Fiberwise centering over the window [first, first + count): subtracts
/// int g^i dmu_k from each component. The returned cocycle records the
/// pullback depth used.
inline Cocycle center_observable(const Cocycle& co, std::int64_t first, std::int64_t count,
                                 const CocycleOptions& opt = {}) {
  const int depth = acim_depth(co, first, opt);
  const Observable raw = co.observable().uncentered();
  std::vector<std::vector<double>> constants;
  std::vector<int> symbols;
  constants.reserve(static_cast<std::size_t>(count));
  acim_sweep(co, first - depth, first + count - 1, first, [&](std::int64_t k, std::span<const double> v) {
    const int s = co.symbol(k);
    std::vector<double> row(co.dim());
    for (std::size_t c = 0; c < co.dim(); ++c) {
      const auto g = co.raw_bins(s, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) acc += g[i] * v[i];
      row[c] = acc / static_cast<double>(v.size());
    }
    constants.push_back(std::move(row));
    symbols.push_back(s);
  });
  CenteringTable table(first, std::move(constants), std::move(symbols), co.alphabet_size());
  return co.with_observable(raw.with_centering(std::move(table))).with_pullback_depth(depth);
}

// ---------------------------------------------------------------------------
// Twisted sweeps: v^theta and lambda^theta along the orbit

struct SweepResult {
  std::int64_t start = 0;
  int burn = 0;
  CVec lambda;        // lambda_k^theta for k in [start, start + n)
  CVec density;       // v^theta at the first fiber (if requested)
};

/// One forward pass of the normalized twisted pullback. The untwisted acim is
/// pulled back over pullback_depth fibers, then the twisted cocycle is applied
/// over `burn` fibers before recording starts.
inline SweepResult twisted_sweep(const Cocycle& co, const TwistWeights& tw, std::int64_t start, std::int64_t n,
                                 int burn, bool keep_density = false) {
  SweepResult r;
  r.start = start;
  r.burn = burn;
  r.lambda.reserve(static_cast<std::size_t>(n));
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  CVec cur(nb), next(nb), scratch(nb);
  const std::int64_t twist_from = start - burn;
  acim_sweep(co, twist_from - co.pullback_depth(), twist_from, twist_from,
             [&](std::int64_t, std::span<const double> v) { std::copy(v.begin(), v.end(), cur.begin()); });
  for (std::int64_t k = twist_from; k < start + n; ++k) {
    if (k == start && keep_density) r.density = cur;
    twisted_apply_inplace(co, tw, k, cur, next, scratch);
    cplx lam{};
    for (const auto& v : next) lam += v;
    lam /= static_cast<double>(nb);
    if (std::abs(lam) < 1e-12)
      throw ConvergenceError("twisted pullback integral vanished: theta left the perturbative regime");
    if (k >= start) r.lambda.push_back(lam);
    const cplx inv = 1.0 / lam;
    for (std::size_t i = 0; i < nb; ++i) cur[i] = next[i] * inv;
  }
  return r;
}

/// Twisted burn-in depth at which lambda at `start` is Cauchy-stable (N vs 3N/2).
inline int choose_burn(const Cocycle& co, const TwistWeights& tw, std::int64_t start, const CocycleOptions& opt) {
  for (int N = opt.burn0; N <= opt.burn_max; N *= 2) {
    const cplx a = twisted_sweep(co, tw, start, 1, N).lambda[0];
    const cplx b = twisted_sweep(co, tw, start, 1, N + N / 2).lambda[0];
    if (std::abs(a - b) <= opt.lambda_tol * std::max(1.0, std::abs(a))) return N + N / 2;
  }
  throw ConvergenceError("twisted pullback did not stabilize: theta outside the effective spectral-gap region");
}

struct FiberLambda {
  cplx lambda;
  ComplexDensity density;  // v_k^theta, integral 1
  int depth;
};

/// lambda_k^theta = int L_k^theta v_k^theta dm with v_k^theta the normalized
/// twisted pullback.
inline FiberLambda fiber_lambda(const Cocycle& co, std::span<const cplx> theta, std::int64_t k,
                                const CocycleOptions& opt = {}) {
  TwistWeights tw(co, theta);
  const int N = choose_burn(co, tw, k, opt);
  auto r = twisted_sweep(co, tw, k, 1, N, true);
  return {r.lambda[0], ComplexDensity(std::move(r.density)), N};
}

/// Per-fiber lambdas and branch-tracked logs Pi_{sigma^j omega}(theta).
struct TwistedTrace {
  CVec theta;
  std::int64_t start = 0;
  CVec lambda;        // lambda at theta
  CVec log_lambda;    // continuous branch, 0 at theta = 0
  CVec partial_sums;  // Pi_{omega, j+1}(theta), j = 0..n-1
  int path_steps = 1;
  int burn = 0;

  cplx total() const { return partial_sums.empty() ? cplx{} : partial_sums.back(); }
};

/// Pi_{omega,n}(theta), continued from theta = 0 along the straight path.
inline TwistedTrace pi_trace(const Cocycle& co, std::span<const cplx> theta, std::int64_t start, std::int64_t n,
                             const CocycleOptions& opt = {}) {
  if (n < 1) throw DomainError("pi_trace needs n >= 1");
  TwistedTrace tr;
  tr.theta.assign(theta.begin(), theta.end());
  tr.start = start;
  bool zero = std::all_of(theta.begin(), theta.end(), [](cplx z) { return z == cplx{}; });
  if (zero) {
    tr.lambda.assign(static_cast<std::size_t>(n), 1.0);
    tr.log_lambda.assign(static_cast<std::size_t>(n), 0.0);
    tr.partial_sums.assign(static_cast<std::size_t>(n), 0.0);
    return tr;
  }
  for (int K = 1; K <= 64; K *= 2) {
    CVec logs(static_cast<std::size_t>(n), 0.0), prev(static_cast<std::size_t>(n), 1.0);
    cplx prev_total{};
    bool ok = true;
    int burn = 0;
    for (int step = 1; step <= K && ok; ++step) {
      CVec th(theta.size());
      for (std::size_t c = 0; c < th.size(); ++c) th[c] = theta[c] * (static_cast<double>(step) / K);
      TwistWeights tw(co, th);
      burn = choose_burn(co, tw, start, opt);
      auto sw = twisted_sweep(co, tw, start, n, burn);
      cplx total{};
      for (std::size_t j = 0; j < logs.size(); ++j) {
        const cplx inc = std::log(sw.lambda[j] / prev[j]);
        if (std::abs(inc.imag()) > std::numbers::pi / 2) ok = false;
        logs[j] += inc;
        prev[j] = sw.lambda[j];
        total += logs[j];
      }
      if (std::abs((total - prev_total).imag()) >= std::numbers::pi) ok = false;
      prev_total = total;
    }
    if (!ok) continue;
    tr.lambda = std::move(prev);
    tr.log_lambda = std::move(logs);
    tr.partial_sums.resize(tr.log_lambda.size());
    cplx acc{};
    for (std::size_t j = 0; j < tr.log_lambda.size(); ++j) tr.partial_sums[j] = acc += tr.log_lambda[j];
    tr.path_steps = K;
    tr.burn = burn;
    return tr;
  }
  throw BranchJumpError("could not follow a continuous branch of log lambda along the theta path");
}

inline TwistedTrace pi_trace(const Cocycle& co, std::span<const double> theta, std::int64_t start, std::int64_t n,
                             const CocycleOptions& opt = {}) {
  const CVec th = real_theta(theta);
  return pi_trace(co, std::span<const cplx>(th), start, n, opt);
}

/// Pi_{omega,n}(theta) for real theta: sum of log lambda_k (lambda_k > 0).
inline double pi_real(const Cocycle& co, std::span<const double> theta, std::int64_t start, std::int64_t n,
                      const CocycleOptions& opt = {}) {
  const CVec th = real_theta(theta);
  TwistWeights tw(co, th);
  const int burn = choose_burn(co, tw, start, opt);
  const auto sw = twisted_sweep(co, tw, start, n, burn);
  double s = 0.0;
  for (const auto& l : sw.lambda) {
    if (l.real() <= 0.0) throw BranchJumpError("non-positive lambda at real theta");
    s += std::log(l.real());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Lambda grids

struct LambdaGrid {
  std::vector<std::vector<double>> theta;
  std::vector<double> Lambda;      // Re Pi_{omega,n}(theta)/n
  std::vector<double> std_error;   // fiber-average standard error of log|lambda|
  CVec lambda_first;               // lambda at the first fiber (export)
  std::int64_t n = 0;
};

inline LambdaGrid lambda_grid(const Cocycle& co, std::int64_t start, std::int64_t n,
                              const std::vector<std::vector<double>>& grid, const CocycleOptions& opt = {}) {
  LambdaGrid g;
  g.n = n;
  for (const auto& t : grid) {
    const CVec th = real_theta(t);
    TwistWeights tw(co, th);
    double sum = 0.0, sum2 = 0.0;
    cplx first = 1.0;
    if (std::any_of(t.begin(), t.end(), [](double v) { return v != 0.0; })) {
      const int burn = choose_burn(co, tw, start, opt);
      const auto sw = twisted_sweep(co, tw, start, n, burn);
      first = sw.lambda.front();
      for (const auto& l : sw.lambda) {
        const double v = std::log(std::abs(l));
        sum += v;
        sum2 += v * v;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    g.theta.push_back(t);
    g.Lambda.push_back(mean);
    g.std_error.push_back(std::sqrt(var / static_cast<double>(n)));
    g.lambda_first.push_back(first);
  }
  return g;
}

/// CSV `theta_1..theta_d, re_lambda, im_lambda, Lambda`.
inline void write_lambda_csv(std::ostream& os, const LambdaGrid& g) {
  const std::size_t d = g.theta.empty() ? 1 : g.theta.front().size();
  for (std::size_t c = 0; c < d; ++c) os << "theta_" << (c + 1) << ',';
  os << "re_lambda,im_lambda,Lambda\n" << std::setprecision(17);
  for (std::size_t r = 0; r < g.theta.size(); ++r) {
    for (double v : g.theta[r]) os << v << ',';
    os << g.lambda_first[r].real() << ',' << g.lambda_first[r].imag() << ',' << g.Lambda[r] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Derivatives of Pi at 0

/// Taylor data of z -> Pi_{omega,n}(z u) from a contour of radius r.
struct ContourDerivs {
  std::vector<double> direction;
  double radius = 0.0;
  double d1 = 0.0, d2 = 0.0, d3 = 0.0;     // contour values
  double fd1 = 0.0, fd2 = 0.0, fd3 = 0.0;  // finite-difference cross-check
  double discrepancy = 0.0;                // max relative contour/FD gap
};

inline ContourDerivs directional_derivs(const Cocycle& co, std::span<const double> u, std::int64_t start,
                                        std::int64_t n, const CocycleOptions& opt = {}) {
  ContourDerivs out;
  out.direction.assign(u.begin(), u.end());
  double unorm = 0.0;
  for (double v : u) unorm += v * v;
  unorm = std::sqrt(unorm);
  if (unorm == 0.0) throw DomainError("zero direction");
  const double r = opt.contour_radius / unorm;
  out.radius = r;
  const int N = opt.contour_nodes;
  const std::size_t nn = static_cast<std::size_t>(n);

  // lambdas on the contour, continued fiber by fiber around the circle from z = r
  CVec logs(nn), prev(nn), first(nn);
  std::vector<cplx> totals(static_cast<std::size_t>(N));
  int burn = 0;
  for (int m = 0; m < N; ++m) {
    const cplx z = std::polar(r, 2.0 * std::numbers::pi * m / N);
    CVec th(u.size());
    for (std::size_t c = 0; c < u.size(); ++c) th[c] = z * u[c];
    TwistWeights tw(co, th);
    if (m == 0) burn = choose_burn(co, tw, start, opt);
    const auto sw = twisted_sweep(co, tw, start, n, burn);
    cplx total{};
    for (std::size_t j = 0; j < nn; ++j) {
      if (m == 0) {
        logs[j] = std::log(sw.lambda[j]);
        if (std::abs(logs[j].imag()) > 1e-9) throw BranchJumpError("lambda not positive at real contour node");
        first[j] = sw.lambda[j];
      } else {
        const cplx inc = std::log(sw.lambda[j] / prev[j]);
        if (std::abs(inc.imag()) > std::numbers::pi / 2) throw BranchJumpError("branch jump on contour: radius too large");
        logs[j] += inc;
      }
      prev[j] = sw.lambda[j];
      total += logs[j];
    }
    totals[static_cast<std::size_t>(m)] = total;
  }
  for (std::size_t j = 0; j < nn; ++j) {
    const cplx closing = logs[j] + std::log(first[j] / prev[j]) - std::log(first[j]);
    if (std::abs(closing) > 1e-6) throw BranchJumpError("log lambda winds around the contour: radius too large");
  }
  auto coef = [&](int k) {
    cplx s{};
    for (int m = 0; m < N; ++m) s += totals[static_cast<std::size_t>(m)] * std::polar(1.0, -2.0 * std::numbers::pi * k * m / N);
    return (s / static_cast<double>(N)).real() / std::pow(r, k);
  };
  out.d1 = coef(1);
  out.d2 = 2.0 * coef(2);
  out.d3 = 6.0 * coef(3);

  // central differences with one Richardson step
  auto P = [&](double h) {
    std::vector<double> t(u.size());
    for (std::size_t c = 0; c < u.size(); ++c) t[c] = h * u[c];
    return pi_real(co, t, start, n, opt);
  };
  const double h = std::min(r / 8.0, 0.01 / unorm);
  const double p1 = P(h), m1 = P(-h), p2 = P(2 * h), m2 = P(-2 * h), ph = P(h / 2), mh = P(-h / 2);
  const double p0 = 0.0;
  const double d1h = (p1 - m1) / (2 * h), d1hh = (ph - mh) / h;
  const double d2h = (p1 - 2 * p0 + m1) / (h * h), d2hh = (ph - 2 * p0 + mh) / (h * h / 4);
  const double d3h = (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h * h * h);
  const double d3_2h = [&] {
    const double p4 = P(4 * h), m4 = P(-4 * h);
    return (p4 - 2 * p2 + 2 * m2 - m4) / (16 * h * h * h);
  }();
  out.fd1 = (4 * d1hh - d1h) / 3;
  out.fd2 = (4 * d2hh - d2h) / 3;
  out.fd3 = (4 * d3h - d3_2h) / 3;
  const double scale = std::max(1e-3 * static_cast<double>(n), 0.0);
  auto rel = [&](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), scale}); };
  out.discrepancy = std::max({rel(out.d1, out.fd1), rel(out.d2, out.fd2), rel(out.d3, out.fd3)});
  if (out.discrepancy > 1e-3)
    throw ConvergenceError("contour and finite-difference derivatives disagree (" + std::to_string(out.discrepancy) +
                           "): contour radius too large");
  return out;
}

/// Gradient, Hessian (polarization) and, for d = 1, third derivative of Pi_{omega,n} at 0.
struct CumulantDerivs {
  std::int64_t n = 0;
  std::vector<double> gradient;
  std::vector<std::vector<double>> hessian;
  double third = 0.0;
  double discrepancy = 0.0;
  double radius = 0.0;

  std::vector<std::vector<double>> hessian_per_step() const {
    auto h = hessian;
    for (auto& row : h)
      for (auto& v : row) v /= static_cast<double>(n);
    return h;
  }
};

inline CumulantDerivs cumulant_derivs(const Cocycle& co, std::int64_t start, std::int64_t n,
                                      const CocycleOptions& opt = {}) {
  const std::size_t d = co.dim();
  CumulantDerivs out;
  out.n = n;
  out.radius = opt.contour_radius;
  out.gradient.assign(d, 0.0);
  out.hessian.assign(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> e(d, 0.0);
    e[i] = 1.0;
    const auto cd = directional_derivs(co, e, start, n, opt);
    out.gradient[i] = cd.d1;
    out.hessian[i][i] = cd.d2;
    if (d == 1) out.third = cd.d3;
    out.discrepancy = std::max(out.discrepancy, cd.discrepancy);
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      std::vector<double> plus(d, 0.0), minus(d, 0.0);
      plus[i] = plus[j] = 1.0;
      minus[i] = 1.0;
      minus[j] = -1.0;
      const auto a = directional_derivs(co, plus, start, n, opt);
      const auto b = directional_derivs(co, minus, start, n, opt);
      out.hessian[i][j] = out.hessian[j][i] = 0.25 * (a.d2 - b.d2);
      out.discrepancy = std::max({out.discrepancy, a.discrepancy, b.discrepancy});
    }
  return out;
}

/// Third derivative of Pi_{omega,m}(0) for every prefix length m in `ladder`
/// (d = 1), from a single contour pass over max(ladder) fibers.
struct PrefixCumulants {
  std::vector<std::int64_t> n;
  std::vector<double> d2, d3;
};

inline PrefixCumulants prefix_cumulants(const Cocycle& co, std::int64_t start, const std::vector<std::int64_t>& ladder,
                                        const CocycleOptions& opt = {}) {
  if (co.dim() != 1) throw DimensionError("prefix cumulants are scalar-only");
  const std::int64_t n = *std::max_element(ladder.begin(), ladder.end());
  const std::size_t nn = static_cast<std::size_t>(n);
  const double r = opt.contour_radius;
  const int N = opt.contour_nodes;
  CVec logs(nn), prev(nn);
  std::vector<CVec> prefix_totals(ladder.size(), CVec(static_cast<std::size_t>(N)));
  int burn = 0;
  for (int m = 0; m < N; ++m) {
    const cplx z = std::polar(r, 2.0 * std::numbers::pi * m / N);
    const CVec th{z};
    TwistWeights tw(co, th);
    if (m == 0) burn = choose_burn(co, tw, start, opt);
    const auto sw = twisted_sweep(co, tw, start, n, burn);
    cplx acc{};
    std::size_t li = 0;
    std::vector<std::pair<std::int64_t, std::size_t>> order;
    for (std::size_t q = 0; q < ladder.size(); ++q) order.emplace_back(ladder[q], q);
    std::sort(order.begin(), order.end());
    for (std::size_t j = 0; j < nn; ++j) {
      if (m == 0) {
        logs[j] = std::log(sw.lambda[j]);
      } else {
        const cplx inc = std::log(sw.lambda[j] / prev[j]);
        if (std::abs(inc.imag()) > std::numbers::pi / 2) throw BranchJumpError("branch jump on contour: radius too large");
        logs[j] += inc;
      }
      prev[j] = sw.lambda[j];
      acc += logs[j];
      while (li < order.size() && order[li].first == static_cast<std::int64_t>(j + 1)) {
        prefix_totals[order[li].second][static_cast<std::size_t>(m)] = acc;
        ++li;
      }
    }
  }
  PrefixCumulants out;
  for (std::size_t q = 0; q < ladder.size(); ++q) {
    auto coef = [&](int k) {
      cplx s{};
      for (int m = 0; m < N; ++m)
        s += prefix_totals[q][static_cast<std::size_t>(m)] * std::polar(1.0, -2.0 * std::numbers::pi * k * m / N);
      return (s / static_cast<double>(N)).real() / std::pow(r, k);
    };
    out.n.push_back(ladder[q]);
    out.d2.push_back(2.0 * coef(2));
    out.d3.push_back(6.0 * coef(3));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Large-|t| probe

/// (1/n) log ||L^{it,(n)} f||_BV / ||f||_BV maximized over trial functions
/// (the constant function first, then random step functions).
inline double twisted_norm_growth(const Cocycle& co, std::span<const double> t, std::int64_t start, std::int64_t n,
                                  int trials = 4, std::uint64_t seed = 1) {
  CVec th(t.size());
  for (std::size_t c = 0; c < t.size(); ++c) th[c] = cplx(0.0, t[c]);
  TwistWeights tw(co, th);
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  CounterRng rng(seed);
  double best = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < std::max(1, trials); ++trial) {
    CVec cur(nb, 1.0), next(nb), scratch(nb);
    if (trial > 0) {
      double level = 0.0;
      for (std::size_t i = 0; i < nb; ++i) {
        level += rng.uniform(static_cast<std::uint64_t>(trial), i) - 0.5;
        cur[i] = level;
      }
    }
    double norm = bv_norm<cplx>(cur);
    if (norm == 0.0) continue;
    for (auto& v : cur) v /= norm;
    double logsum = 0.0;
    for (std::int64_t k = start; k < start + n; ++k) {
      twisted_apply_inplace(co, tw, k, cur, next, scratch);
      const double r = bv_norm<cplx>(next);
      if (r == 0.0) {
        logsum = -std::numeric_limits<double>::infinity();
        break;
      }
      logsum += std::log(r);
      for (std::size_t i = 0; i < nb; ++i) cur[i] = next[i] / r;
    }
    best = std::max(best, logsum / static_cast<double>(n));
  }
  return best;
}

/// Norm bound K(theta) of one twisted application on BV (operator part K_L
/// measured as the untwisted BV-proxy bound, C_var = 1 for step functions).
inline double twisted_norm_constant(double theta_abs, double M, double var_g_sup, double untwisted_bound) {
  return untwisted_bound * (std::exp(theta_abs * M) + theta_abs * std::exp(theta_abs * M) * var_g_sup);
}

}  // namespace qlab
