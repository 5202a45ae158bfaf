#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "qlab/error.hpp"
#include "qlab/rng.hpp"
#include "qlab/twisted_cocycle.hpp"

namespace qlab {

// ---------------------------------------------------------------------------
// Initial conditions

/// Inverse-CDF sampler for a probability step density on n equal bins.
class InitialSampler {
 public:
  explicit InitialSampler(std::span<const double> v) : cdf_(v.size()) {
    if (v.size() < 2) throw DomainError("sampler needs a step density with at least 2 bins");
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] >= 0.0) || !std::isfinite(v[i])) throw DomainError("sampler input has a negative or non-finite bin");
      acc += v[i];
      cdf_[i] = acc;
    }
    const double mass = acc / static_cast<double>(v.size());
    if (std::abs(mass - 1.0) > 1e-8) throw DomainError("sampler input does not integrate to 1");
    for (auto& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
  }

  int bins() const noexcept { return static_cast<int>(cdf_.size()); }

  /// u picks the bin by mass, w places the point uniformly inside it.
  double operator()(double u, double w) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto i = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), bins() - 1));
    const double x = (static_cast<double>(i) + w) / static_cast<double>(cdf_.size());
    return std::min(x, std::nextafter(1.0, 0.0));
  }

 private:
  std::vector<double> cdf_;
};

inline double sample_initial(const InitialSampler& s, const CounterRng& rng, std::uint64_t sample) {
  return s(rng.uniform(sample, 0, 1), rng.uniform(sample, 0, 2));
}

// ---------------------------------------------------------------------------
// Trajectories

struct McOptions {
  std::uint64_t seed = 1;
  int jobs = 1;
  bool jitter = true;  // refresh the bits that expansion pushes out of the mantissa
};

/// Jitter key of one sample; step draws are mix64(key + step * golden).
inline std::uint64_t jitter_key(const CounterRng& rng, std::uint64_t sample) { return rng.bits(sample, 0, 3); }

/// T(x) plus a uniform draw below 2^-52, wrapped into [0,1).
inline double step_exact(const PiecewiseAffineMap& T, double x, std::uint64_t key, std::uint64_t step, bool jitter) {
  double y = T(x);
  if (jitter) {
    y += to_unit(mix64(key + (step + 1) * 0x9e3779b97f4a7c15ULL)) * 0x1.0p-52;
    if (y >= 1.0) y -= 1.0;
  }
  return y;
}

/// S_n g for every n of a ladder, taken from one trajectory per sample.
struct TrajectoryBatch {
  std::int64_t start = 0;
  std::vector<std::int64_t> ladder;
  std::size_t samples = 0;
  std::size_t dim = 1;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> sums;  // per ladder level: samples x dim, row-major

  double at(std::size_t level, std::size_t sample, std::size_t c) const { return sums[level][sample * dim + c]; }

  std::vector<double> component(std::size_t level, std::size_t c = 0) const {
    std::vector<double> out(samples);
    for (std::size_t s = 0; s < samples; ++s) out[s] = at(level, s, c);
    return out;
  }

  std::size_t level_of(std::int64_t n) const {
    const auto it = std::find(ladder.begin(), ladder.end(), n);
    if (it == ladder.end()) throw DomainError("n = " + std::to_string(n) + " is not on the batch ladder");
    return static_cast<std::size_t>(it - ladder.begin());
  }
};

template <class Fn>
void parallel_blocks(std::size_t count, int jobs, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), count));
  if (workers == 1) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t block = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * block, hi = std::min(count, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

/// M samples x ~ mu_omega (the fiber acim at `start`) iterated by the exact maps.
inline TrajectoryBatch birkhoff_batch(const Cocycle& co, std::int64_t start, std::vector<std::int64_t> ladder,
                                      std::size_t M, const McOptions& opt = {}) {
  if (ladder.empty() || M == 0) throw DomainError("birkhoff batch needs a non-empty ladder and M >= 1");
  std::sort(ladder.begin(), ladder.end());
  if (ladder.front() < 1) throw DomainError("ladder entries must be >= 1");
  const std::int64_t n_max = ladder.back();
  const std::size_t d = co.dim();

  std::vector<double> v0;
  acim_sweep(co, start - co.pullback_depth(), start, start,
             [&](std::int64_t, std::span<const double> v) { v0.assign(v.begin(), v.end()); });
  const InitialSampler sampler(v0);

  // per-step fiber data, shared read-only by the workers
  const Observable& g = co.observable();
  std::vector<const PiecewiseAffineMap*> maps(static_cast<std::size_t>(n_max));
  std::vector<double> scale(static_cast<std::size_t>(n_max)), shift(static_cast<std::size_t>(n_max) * d, 0.0);
  for (std::int64_t i = 0; i < n_max; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const int s = co.symbol(start + i);
    maps[iu] = &co.map(start + i);
    scale[iu] = g.scale(s);
    if (g.centered())
      for (std::size_t c = 0; c < d; ++c) shift[iu * d + c] = g.centering()->constant(start + i, s, c);
  }
  const auto& comps = g.components();

  TrajectoryBatch b;
  b.start = start;
  b.ladder = ladder;
  b.samples = M;
  b.dim = d;
  b.seed = opt.seed;
  b.sums.assign(ladder.size(), std::vector<double>(M * d, 0.0));
  const CounterRng rng(opt.seed);

  parallel_blocks(M, opt.jobs, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> acc(d);
    for (std::size_t s = lo; s < hi; ++s) {
      double x = sample_initial(sampler, rng, s);
      const std::uint64_t key = jitter_key(rng, s);
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t level = 0;
      for (std::int64_t i = 0; i < n_max; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        for (std::size_t c = 0; c < d; ++c) acc[c] += scale[iu] * comps[c].value(x) - shift[iu * d + c];
        if (i + 1 == ladder[level]) {
          for (std::size_t c = 0; c < d; ++c) b.sums[level][s * d + c] = acc[c];
          ++level;
          if (level == ladder.size()) break;
        }
        x = step_exact(*maps[iu], x, key, static_cast<std::uint64_t>(i), opt.jitter);
      }
    }
  });
  return b;
}

/// Points x_k = T^(k)(x_0) at time k for M samples (stationarity checks).
inline std::vector<double> pushed_points(const Cocycle& co, std::int64_t start, std::int64_t k, std::size_t M,
                                         const McOptions& opt = {}) {
  std::vector<double> v0;
  acim_sweep(co, start - co.pullback_depth(), start, start,
             [&](std::int64_t, std::span<const double> v) { v0.assign(v.begin(), v.end()); });
  const InitialSampler sampler(v0);
  const CounterRng rng(opt.seed);
  std::vector<double> out(M);
  parallel_blocks(M, opt.jobs, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) {
      double x = sample_initial(sampler, rng, s);
      const std::uint64_t key = jitter_key(rng, s);
      for (std::int64_t i = 0; i < k; ++i) x = step_exact(co.map(start + i), x, key, static_cast<std::uint64_t>(i), opt.jitter);
      out[s] = x;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Distances

/// Exact sup |F_emp - F|. `left` gives F(x-) for references with atoms.
inline double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf,
                          const std::function<double(double)>& left = {}) {
  if (xs.empty()) throw DomainError("KS distance of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double M = static_cast<double>(xs.size());
  double D = 0.0;
  std::size_t i = 0;
  while (i < xs.size()) {
    std::size_t j = i;
    while (j < xs.size() && xs[j] == xs[i]) ++j;
    const double F = cdf(xs[i]);
    const double Fl = left ? left(xs[i]) : F;
    D = std::max({D, std::abs(static_cast<double>(i) / M - Fl), std::abs(static_cast<double>(j) / M - F)});
    i = j;
  }
  return D;
}

/// max over the grid of |E exp(i t.S_n/sqrt n) - exp(-t^T Sigma^2 t / 2)|.
inline double cf_distance(const TrajectoryBatch& b, std::size_t level, const std::vector<std::vector<double>>& sigma2,
                          const std::vector<std::vector<double>>& t_grid) {
  const double rn = 1.0 / std::sqrt(static_cast<double>(b.ladder[level]));
  double worst = 0.0;
  for (const auto& t : t_grid) {
    if (t.size() != b.dim) throw DimensionError("cf grid point dimension mismatch");
    std::complex<double> emp{};
    for (std::size_t s = 0; s < b.samples; ++s) {
      double ph = 0.0;
      for (std::size_t c = 0; c < b.dim; ++c) ph += t[c] * b.at(level, s, c) * rn;
      emp += std::polar(1.0, ph);
    }
    emp /= static_cast<double>(b.samples);
    double q = 0.0;
    for (std::size_t i = 0; i < b.dim; ++i)
      for (std::size_t j = 0; j < b.dim; ++j) q += t[i] * sigma2[i][j] * t[j];
    worst = std::max(worst, std::abs(emp - std::exp(-0.5 * q)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Probabilities

struct Proportion {
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::size_t total = 0;
};

inline Proportion wilson(std::size_t k, std::size_t M, double z = 1.959963984540054) {
  Proportion p;
  p.count = k;
  p.total = M;
  const double m = static_cast<double>(M);
  const double ph = static_cast<double>(k) / m;
  const double den = 1.0 + z * z / m;
  const double c = (ph + z * z / (2 * m)) / den;
  const double h = z * std::sqrt(ph * (1 - ph) / m + z * z / (4 * m * m)) / den;
  p.value = ph;
  p.lo = std::max(0.0, c - h);
  p.hi = std::min(1.0, c + h);
  return p;
}

struct TailEstimate {
  double log_prob = 0.0;  // (1/n) log P(S_n/n >= a)
  double lo = 0.0;
  double hi = 0.0;
  double probability = 0.0;
  std::size_t hits = 0;
  std::size_t samples = 0;
  bool tilted = false;
};

/// Direct estimate of (1/n) log P(v.S_n/n >= a) with a Wilson interval.
inline TailEstimate tail_log_prob(const TrajectoryBatch& b, std::size_t level, double a,
                                  const std::vector<double>& direction = {1.0}) {
  if (direction.size() != b.dim) throw DimensionError("tail direction dimension mismatch");
  const double n = static_cast<double>(b.ladder[level]);
  std::size_t k = 0;
  for (std::size_t s = 0; s < b.samples; ++s) {
    double v = 0.0;
    for (std::size_t c = 0; c < b.dim; ++c) v += direction[c] * b.at(level, s, c);
    if (v >= a * n) ++k;
  }
  if (k == 0) throw ConvergenceError("no sample reached the level; use the tilted estimator");
  const auto p = wilson(k, b.samples);
  TailEstimate e;
  e.probability = p.value;
  e.log_prob = std::log(p.value) / n;
  e.lo = std::log(std::max(p.lo, std::numeric_limits<double>::min())) / n;
  e.hi = std::log(p.hi) / n;
  e.hits = k;
  e.samples = b.samples;
  return e;
}

/// Importance-sampled tail on the Ulam chain of the cocycle: paths are drawn
/// from the h-transform of the chain tilted by exp(theta S_n) and weighted by
/// Z exp(-theta S_n) with Z = E exp(theta S_n) computed exactly by backward recursion.
inline TailEstimate tilted_tail_log_prob(const Cocycle& co, std::int64_t start, std::int64_t n, double a, double theta,
                                         std::size_t M, const McOptions& opt = {}) {
  if (co.dim() != 1) throw DimensionError("tilted estimator is scalar-only");
  if (n < 1 || M < 2) throw DomainError("tilted estimator needs n >= 1 and M >= 2");
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  const auto nn = static_cast<std::size_t>(n);

  std::vector<std::vector<double>> gk(nn);
  for (std::size_t i = 0; i < nn; ++i) gk[i] = co.bins_at(start + static_cast<std::int64_t>(i), 0);

  // h[k](i) proportional to E[exp(theta sum_{m>=k} g_m) | bin i at time k]
  std::vector<std::vector<double>> h(nn + 1, std::vector<double>(nb, 1.0));
  double log_norm = 0.0;
  for (std::size_t k = nn; k-- > 0;) {
    co.op(start + static_cast<std::int64_t>(k)).apply_adjoint<double>(h[k + 1], h[k]);
    double mx = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
      h[k][i] *= std::exp(theta * gk[k][i]);
      mx = std::max(mx, h[k][i]);
    }
    for (auto& v : h[k]) v /= mx;
    log_norm += std::log(mx);
  }
  std::vector<double> v0;
  acim_sweep(co, start - co.pullback_depth(), start, start,
             [&](std::int64_t, std::span<const double> v) { v0.assign(v.begin(), v.end()); });
  std::vector<double> init(nb);
  double z0 = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    init[i] = v0[i] * h[0][i];
    z0 += init[i];
  }
  const double logZ = log_norm + std::log(z0 / static_cast<double>(nb));
  std::vector<double> init_cdf(nb);
  std::partial_sum(init.begin(), init.end(), init_cdf.begin());

  const CounterRng rng(opt.seed);
  std::vector<double> w(M);
  parallel_blocks(M, opt.jobs, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> cum;
    for (std::size_t s = lo; s < hi; ++s) {
      const double u0 = rng.uniform(s, 0, 1) * init_cdf.back();
      std::size_t i = static_cast<std::size_t>(std::upper_bound(init_cdf.begin(), init_cdf.end(), u0) - init_cdf.begin());
      i = std::min(i, nb - 1);
      double S = 0.0;
      for (std::size_t k = 0; k < nn; ++k) {
        S += gk[k][i];
        if (k + 1 == nn) break;
        const auto row = co.op(start + static_cast<std::int64_t>(k)).row(static_cast<int>(i));
        cum.resize(row.size());
        double acc = 0.0;
        for (std::size_t r = 0; r < row.size(); ++r) {
          acc += row[r].p * h[k + 1][static_cast<std::size_t>(row[r].col)];
          cum[r] = acc;
        }
        const double u = rng.uniform(s, k + 1, 4) * acc;
        std::size_t r = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        r = std::min(r, row.size() - 1);
        i = static_cast<std::size_t>(row[r].col);
      }
      w[s] = S >= a * static_cast<double>(n) ? std::exp(logZ - theta * S) : 0.0;
    }
  });
  double mean = 0.0, sq = 0.0;
  std::size_t hits = 0;
  for (double x : w) {
    mean += x;
    if (x > 0.0) ++hits;
  }
  mean /= static_cast<double>(M);
  for (double x : w) sq += (x - mean) * (x - mean);
  const double se = std::sqrt(sq / static_cast<double>(M - 1) / static_cast<double>(M));
  if (!(mean > 0.0)) throw ConvergenceError("tilted estimator produced no hits: theta too small for the level");
  TailEstimate e;
  e.tilted = true;
  e.probability = mean;
  e.hits = hits;
  e.samples = M;
  const double dn = static_cast<double>(n);
  e.log_prob = std::log(mean) / dn;
  const double rel = 1.959963984540054 * se / mean;
  e.lo = (std::log(mean) + std::log(std::max(1e-300, 1.0 - rel))) / dn;
  e.hi = (std::log(mean) + std::log1p(rel)) / dn;
  if (rel >= 1.0) e.lo = -std::numeric_limits<double>::infinity();
  return e;
}

/// P(S_n in the box s +- delta) with a Wilson interval.
inline Proportion window_prob(const TrajectoryBatch& b, std::size_t level, const std::vector<double>& s,
                              const std::vector<double>& delta) {
  if (s.size() != b.dim || delta.size() != b.dim) throw DimensionError("window dimension mismatch");
  std::size_t k = 0;
  for (std::size_t i = 0; i < b.samples; ++i) {
    bool in = true;
    for (std::size_t c = 0; c < b.dim && in; ++c) in = std::abs(b.at(level, i, c) - s[c]) <= delta[c];
    if (in) ++k;
  }
  return wilson(k, b.samples);
}

// ---------------------------------------------------------------------------
// Summary export

struct SummaryRow {
  std::int64_t n = 0;
  std::size_t M = 0;
  std::string statistic;
  double value = 0.0;
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
};

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "n,M,statistic,value,ci_lo,ci_hi\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.n << ',' << r.M << ',' << r.statistic << ',' << r.value << ',';
    if (!std::isnan(r.ci_lo)) os << r.ci_lo;
    os << ',';
    if (!std::isnan(r.ci_hi)) os << r.ci_hi;
    os << '\n';
  }
}

}  // namespace qlab
