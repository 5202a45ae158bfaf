#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qlab/error.hpp"
#include "qlab/map_family.hpp"
#include "qlab/rng.hpp"

namespace qlab {

/// n equal half-open bins [i/n, (i+1)/n).
class Partition {
 public:
  explicit Partition(int n) : n_(n) {
    if (n < 2) throw DomainError("partition needs at least 2 bins");
  }
  int size() const noexcept { return n_; }
  double width() const noexcept { return 1.0 / n_; }
  double left(int i) const noexcept { return static_cast<double>(i) / n_; }
  double mid(int i) const noexcept { return (i + 0.5) / n_; }
  int bin_of(double x) const noexcept { return std::clamp(static_cast<int>(x * n_), 0, n_ - 1); }
  friend bool operator==(Partition, Partition) = default;

 private:
  int n_;
};

/// Step function on a uniform partition (real or complex bin values).
template <class T>
class StepDensity {
 public:
  using value_type = T;

  explicit StepDensity(Partition p, T fill = T{}) : values_(static_cast<std::size_t>(p.size()), fill) {}
  explicit StepDensity(std::vector<T> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw DomainError("step function needs at least 2 bins");
  }

  static StepDensity uniform(Partition p) { return StepDensity(p, T{1}); }

  int size() const noexcept { return static_cast<int>(values_.size()); }
  Partition partition() const { return Partition(size()); }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }
  std::span<const T> span() const noexcept { return values_; }

  /// Integral against Lebesgue measure: (1/n) sum f_i.
  T integral() const {
    T s{};
    for (const auto& v : values_) s += v;
    return s / static_cast<double>(values_.size());
  }

  StepDensity& operator*=(T c) {
    for (auto& v : values_) v *= c;
    return *this;
  }

  template <class U>
  StepDensity<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return StepDensity<U>(std::move(out));
  }

 private:
  std::vector<T> values_;
};

using RealDensity = StepDensity<double>;
using ComplexDensity = StepDensity<std::complex<double>>;

template <class T>
double l1_norm(std::span<const T> f) {
  double s = 0.0;
  for (const auto& v : f) s += std::abs(v);
  return s / static_cast<double>(f.size());
}

template <class T>
double sup_norm(std::span<const T> f) {
  double s = 0.0;
  for (const auto& v : f) s = std::max(s, static_cast<double>(std::abs(v)));
  return s;
}

/// Discrete total variation sum_i |f_i - f_{i-1}|.
template <class T>
double variation(std::span<const T> f) {
  double s = 0.0;
  for (std::size_t i = 1; i < f.size(); ++i) s += std::abs(f[i] - f[i - 1]);
  return s;
}

/// BV-norm proxy ||f||_1 + var(f).
template <class T>
double bv_norm(std::span<const T> f) {
  return l1_norm(f) + variation(f);
}

template <class T>
double l1_norm(const StepDensity<T>& f) { return l1_norm(f.span()); }
template <class T>
double variation(const StepDensity<T>& f) { return variation(f.span()); }
template <class T>
double bv_norm(const StepDensity<T>& f) { return bv_norm(f.span()); }
template <class T>
double sup_norm(const StepDensity<T>& f) { return sup_norm(f.span()); }

/// Ulam discretization P_ij = m(B_i ∩ T^{-1} B_j) / m(B_i), stored by rows.
class UlamOperator {
 public:
  struct Entry {
    int col;
    double p;
  };

  UlamOperator(int n, std::vector<std::size_t> row_start, std::vector<Entry> entries)
      : n_(n), row_start_(std::move(row_start)), entries_(std::move(entries)) {}

  int size() const noexcept { return n_; }
  std::span<const Entry> row(int i) const {
    return {entries_.data() + row_start_[static_cast<std::size_t>(i)],
            row_start_[static_cast<std::size_t>(i) + 1] - row_start_[static_cast<std::size_t>(i)]};
  }
  std::size_t nonzeros() const noexcept { return entries_.size(); }

  double row_sum(int i) const {
    double s = 0.0;
    for (const auto& e : row(i)) s += e.p;
    return s;
  }

  /// (Lf)_j = sum_i f_i P_ij, written into out (same length).
  template <class T>
  void apply(std::span<const T> in, std::span<T> out) const {
    if (static_cast<int>(in.size()) != n_ || static_cast<int>(out.size()) != n_)
      throw DimensionError("operator/density partition mismatch");
    std::fill(out.begin(), out.end(), T{});
    for (int i = 0; i < n_; ++i) {
      const T fi = in[static_cast<std::size_t>(i)];
      if (fi == T{}) continue;
      for (const auto& e : row(i)) out[static_cast<std::size_t>(e.col)] += fi * e.p;
    }
  }

  /// Adjoint action (P h)_i = sum_j P_ij h_j (composition with T on step functions).
  template <class T>
  void apply_adjoint(std::span<const T> in, std::span<T> out) const {
    if (static_cast<int>(in.size()) != n_ || static_cast<int>(out.size()) != n_)
      throw DimensionError("operator/density partition mismatch");
    for (int i = 0; i < n_; ++i) {
      T s{};
      for (const auto& e : row(i)) s += e.p * in[static_cast<std::size_t>(e.col)];
      out[static_cast<std::size_t>(i)] = s;
    }
  }

 private:
  int n_;
  std::vector<std::size_t> row_start_;
  std::vector<Entry> entries_;
};

/// Exact interval-intersection Ulam matrix of a piecewise affine map.
inline UlamOperator build_ulam(const PiecewiseAffineMap& map, Partition part) {
  for (const auto& b : map.branches())
    if (std::abs(b.slope) <= 1.0) throw ExpansionError("branch slope magnitude <= 1 in map '" + map.name() + "'");
  const int n = part.size();
  const double dn = n;
  std::vector<std::size_t> row_start{0};
  std::vector<UlamOperator::Entry> entries;
  std::vector<double> acc;
  std::vector<int> cols;
  for (int i = 0; i < n; ++i) {
    const double lo_bin = part.left(i);
    const double hi_bin = i + 1 == n ? 1.0 : part.left(i + 1);
    cols.clear();
    acc.clear();
    for (const auto& br : map.branches()) {
      const double lo = std::max(lo_bin, br.left);
      const double hi = std::min(hi_bin, br.right);
      if (!(hi > lo)) continue;
      double a = br(lo), b = br(hi);
      if (a > b) std::swap(a, b);
      a = std::clamp(a, 0.0, 1.0);
      b = std::clamp(b, 0.0, 1.0);
      const double inv_slope = 1.0 / std::abs(br.slope);
      const int j0 = std::clamp(static_cast<int>(std::floor(a * dn)), 0, n - 1);
      const int j1 = std::clamp(static_cast<int>(std::ceil(b * dn)) - 1, j0, n - 1);
      for (int j = j0; j <= j1; ++j) {
        const double ov = std::min(b, (j + 1) / dn) - std::max(a, j / dn);
        if (ov <= 0.0) continue;
        const double p = ov * inv_slope * dn;
        auto it = std::find(cols.begin(), cols.end(), j);
        if (it == cols.end()) {
          cols.push_back(j);
          acc.push_back(p);
        } else {
          acc[static_cast<std::size_t>(it - cols.begin())] += p;
        }
      }
    }
    std::vector<std::size_t> order(cols.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return cols[x] < cols[y]; });
    for (auto k : order) entries.push_back({cols[k], acc[k]});
    row_start.push_back(entries.size());
  }
  return UlamOperator(n, std::move(row_start), std::move(entries));
}

template <class T>
StepDensity<T> apply_operator(const UlamOperator& L, const StepDensity<T>& f) {
  StepDensity<T> out(Partition(L.size()));
  L.apply<T>(f.span(), out.values());
  return out;
}

// ---------------------------------------------------------------------------
// Admissibility probes

/// Fitted Lasota-Yorke pair: var(L^(N) f) <= alpha var(f) + beta ||f||_1.
struct LasotaYorkeFit {
  double alpha = 0.0;
  double beta = 0.0;
  int N = 1;
  std::size_t samples = 0;
  bool contracting() const noexcept { return alpha < 1.0; }
};

/// Applies the length-N composition starting from the given operator sequence.
template <class T>
std::vector<T> compose_apply(std::span<const UlamOperator* const> ops, std::span<const T> f) {
  std::vector<T> cur(f.begin(), f.end()), next(f.size());
  for (const auto* op : ops) {
    op->apply<T>(cur, next);
    std::swap(cur, next);
  }
  return cur;
}

/// alpha from variation-dominated probes (all bin indicators), beta as the
/// smallest constant making the inequality hold over every sample (indicators
/// plus random step functions).
inline LasotaYorkeFit probe_lasota_yorke(std::span<const UlamOperator* const> ops, int trials, std::uint64_t seed) {
  if (ops.empty()) throw DomainError("Lasota-Yorke probe needs N >= 1");
  const int n = ops.front()->size();
  struct Sample {
    double var_in, l1_in, var_out;
  };
  std::vector<Sample> indicator_samples, all;
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::fill(f.begin(), f.end(), 0.0);
    f[static_cast<std::size_t>(k)] = 1.0;
    auto out = compose_apply<double>(ops, f);
    Sample s{variation<double>(f), l1_norm<double>(f), variation<double>(out)};
    indicator_samples.push_back(s);
    all.push_back(s);
  }
  CounterRng rng(seed);
  for (int t = 0; t < trials; ++t) {
    // random walk and random block patterns at several scales
    const int block = 1 << (t % std::max(1, static_cast<int>(std::log2(n))));
    double level = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i % block == 0) level = (t % 2 == 0) ? level + (rng.uniform(t, i) - 0.5) : rng.uniform(t, i) - 0.5;
      f[static_cast<std::size_t>(i)] = level;
    }
    auto out = compose_apply<double>(ops, f);
    all.push_back({variation<double>(f), l1_norm<double>(f), variation<double>(out)});
  }
  LasotaYorkeFit fit;
  fit.N = static_cast<int>(ops.size());
  fit.samples = all.size();
  for (const auto& s : indicator_samples)
    if (s.var_in > 0.0) fit.alpha = std::max(fit.alpha, s.var_out / s.var_in);
  for (const auto& s : all) {
    if (s.l1_in <= 0.0) continue;
    fit.beta = std::max(fit.beta, (s.var_out - fit.alpha * s.var_in) / s.l1_in);
  }
  fit.beta = std::max(fit.beta, 0.0);
  return fit;
}

/// Decay of ||L^(k) f||_BV for a mean-zero f, with a fitted exponential rate.
struct DecayCurve {
  std::vector<double> norms;  // norms[k] = ||L^(k) f||_BV, k = 0..n_max
  double rate = 0.0;          // fitted lambda-hat (>0 means decay)
  std::size_t fitted_points = 0;
};

/// Least-squares slope of log-norm against k over points above the floor
/// (relative 1e-13; the tail below it is rounding noise).
inline double fit_decay_rate(const std::vector<double>& norms, std::size_t* used = nullptr) {
  if (norms.empty() || norms.front() <= 0.0) return 0.0;
  const double floor = norms.front() * 1e-13;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    if (norms[k] <= floor) {
      // the sequence has collapsed: one extra point at the floor records it
      xs.push_back(static_cast<double>(k));
      ys.push_back(std::log(floor));
      break;
    }
    xs.push_back(static_cast<double>(k));
    ys.push_back(std::log(norms[k]));
  }
  if (used) *used = xs.size();
  if (xs.size() < 2) return 0.0;
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return -sxy / sxx;
}

inline DecayCurve probe_decay(std::span<const UlamOperator* const> ops, std::span<const double> f) {
  DecayCurve c;
  std::vector<double> cur(f.begin(), f.end()), next(f.size());
  c.norms.push_back(bv_norm<double>(cur));
  for (const auto* op : ops) {
    op->apply<double>(cur, next);
    std::swap(cur, next);
    c.norms.push_back(bv_norm<double>(cur));
  }
  c.rate = fit_decay_rate(c.norms, &c.fitted_points);
  return c;
}

// ---------------------------------------------------------------------------
// CSV: header `bin_index,value`

inline void write_density_csv(std::ostream& os, const RealDensity& f) {
  os << "bin_index,value\n";
  os << std::setprecision(17);
  for (int i = 0; i < f.size(); ++i) os << i << ',' << f[static_cast<std::size_t>(i)] << '\n';
}

inline RealDensity read_density_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "bin_index,value") throw ConfigError("density CSV: missing header");
  std::vector<double> vals;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("density CSV line " + std::to_string(lineno) + ": no comma");
    std::istringstream a(line.substr(0, comma)), b(line.substr(comma + 1));
    a.imbue(std::locale::classic());
    b.imbue(std::locale::classic());
    long idx = -1;
    double v = 0.0;
    if (!(a >> idx) || !(b >> v) || idx != static_cast<long>(vals.size()))
      throw ConfigError("density CSV line " + std::to_string(lineno) + ": bad record");
    vals.push_back(v);
  }
  return RealDensity(std::move(vals));
}

}  // namespace qlab
