#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "qlab/error.hpp"

namespace qlab {

/// One affine branch x -> slope*x + offset on the half-open interval [left, right).
struct AffineBranch {
  double left;
  double right;
  double slope;
  double offset;

  double operator()(double x) const noexcept { return slope * x + offset; }
};

struct Preimage {
  double x;
  double weight;  // 1/|T'(x)|
};

/// Piecewise affine, uniformly expanding interval map on [0,1).
class PiecewiseAffineMap {
 public:
  PiecewiseAffineMap(std::vector<AffineBranch> branches, std::string name)
      : branches_(std::move(branches)), name_(std::move(name)) {
    if (branches_.empty()) throw DomainError("map needs at least one branch");
    if (branches_.front().left != 0.0 || branches_.back().right != 1.0)
      throw DomainError("branches must tile [0,1)");
    for (std::size_t i = 0; i < branches_.size(); ++i) {
      const auto& b = branches_[i];
      if (!(b.right > b.left)) throw DomainError("empty branch interval");
      if (i > 0 && branches_[i - 1].right != b.left) throw DomainError("branches must be contiguous");
      const double lo = std::min(b(b.left), b(b.right));
      const double hi = std::max(b(b.left), b(b.right));
      if (lo < -1e-12 || hi > 1.0 + 1e-12) throw DomainError("branch image leaves [0,1]");
    }
  }

  /// beta-transformation x -> beta*x mod 1 (beta > 1).
  static PiecewiseAffineMap beta_map(double beta) {
    if (!(beta > 1.0)) throw ExpansionError("beta-map needs beta > 1");
    std::vector<AffineBranch> br;
    const int count = static_cast<int>(std::ceil(beta - 1e-12));
    for (int k = 0; k < count; ++k) {
      const double left = k == 0 ? 0.0 : br.back().right;
      const double right = k + 1 == count ? 1.0 : (k + 1) / beta;
      br.push_back({left, right, beta, -static_cast<double>(k)});
    }
    return PiecewiseAffineMap(std::move(br), "beta-map(" + format_number(beta) + ")");
  }

  static PiecewiseAffineMap doubling() {
    auto m = beta_map(2.0);
    m.name_ = "doubling";
    return m;
  }

  static PiecewiseAffineMap tent() {
    return PiecewiseAffineMap({{0.0, 0.5, 2.0, 0.0}, {0.5, 1.0, -2.0, 2.0}}, "tent");
  }

  /// User table: breakpoints c_0=0 < ... < c_b=1 with per-branch slopes and offsets.
  static PiecewiseAffineMap from_table(const std::vector<double>& breakpoints, const std::vector<double>& slopes,
                                       const std::vector<double>& offsets) {
    if (breakpoints.size() < 2 || slopes.size() + 1 != breakpoints.size() || offsets.size() != slopes.size())
      throw DomainError("table map: need b+1 breakpoints, b slopes and b offsets");
    std::vector<AffineBranch> br;
    for (std::size_t i = 0; i < slopes.size(); ++i)
      br.push_back({breakpoints[i], breakpoints[i + 1], slopes[i], offsets[i]});
    return PiecewiseAffineMap(std::move(br), "table");
  }

  const std::vector<AffineBranch>& branches() const noexcept { return branches_; }
  const std::string& name() const noexcept { return name_; }

  double min_abs_slope() const noexcept {
    double m = std::abs(branches_.front().slope);
    for (const auto& b : branches_) m = std::min(m, std::abs(b.slope));
    return m;
  }

  /// Branch index containing x (half-open convention, ties go right).
  std::size_t branch_index(double x) const {
    if (!(x >= 0.0 && x < 1.0)) throw DomainError("point outside [0,1)");
    auto it = std::upper_bound(branches_.begin(), branches_.end(), x,
                               [](double v, const AffineBranch& b) { return v < b.left; });
    return static_cast<std::size_t>(it - branches_.begin()) - 1;
  }

  /// eval_map; images are clamped into [0,1) (the map is defined m-a.e.).
  double operator()(double x) const { return clamp_unit(branches_[branch_index(x)](x)); }

  /// Solutions of T(x) = y with derivative weights 1/|T'(x)|.
  std::vector<Preimage> branch_inverses(double y) const {
    std::vector<Preimage> out;
    for (const auto& b : branches_) {
      const double x = (y - b.offset) / b.slope;
      if (x >= b.left && x < b.right) out.push_back({x, 1.0 / std::abs(b.slope)});
    }
    return out;
  }

  static double clamp_unit(double y) noexcept {
    if (y < 0.0) return 0.0;
    if (y >= 1.0) return std::nextafter(1.0, 0.0);
    return y;
  }

 private:
  static std::string format_number(double v) {
    std::string s = std::to_string(v);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }

  std::vector<AffineBranch> branches_;
  std::string name_;
};

/// Deterministic rule omega -> T_omega: one map per base symbol.
class FiberSelector {
 public:
  explicit FiberSelector(std::vector<PiecewiseAffineMap> maps, double min_expansion = 1e-9) : maps_(std::move(maps)) {
    if (maps_.empty()) throw DomainError("selector needs at least one map");
    for (const auto& m : maps_) {
      if (m.min_abs_slope() < 1.0 + min_expansion)
        throw ExpansionError("map '" + m.name() + "' violates the uniform expansion bound");
    }
  }

  const PiecewiseAffineMap& map(int symbol) const {
    if (symbol < 0 || static_cast<std::size_t>(symbol) >= maps_.size())
      throw DomainError("no map registered for symbol " + std::to_string(symbol));
    return maps_[static_cast<std::size_t>(symbol)];
  }

  std::size_t size() const noexcept { return maps_.size(); }
  const std::vector<PiecewiseAffineMap>& maps() const noexcept { return maps_; }

  /// Global expansion margin delta: min |slope| - 1 over all maps.
  double expansion_margin() const noexcept {
    double m = maps_.front().min_abs_slope();
    for (const auto& t : maps_) m = std::min(m, t.min_abs_slope());
    return m - 1.0;
  }

 private:
  std::vector<PiecewiseAffineMap> maps_;
};

}  // namespace qlab
