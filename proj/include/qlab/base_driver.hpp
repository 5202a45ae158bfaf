#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qlab/error.hpp"
#include "qlab/rng.hpp"

namespace qlab {

/// Driving system on Omega: an irrational rotation or a two-sided i.i.d. shift.
///
/// States are addressed by an absolute integer index k meaning sigma^k(omega_0),
/// so advancing is integer addition and is exact in both directions.
class BaseSystem {
 public:
  enum class Kind { Rotation, Iid };

  static constexpr double golden_angle = 0.61803398874989484820;  // (sqrt(5)-1)/2

  static BaseSystem rotation(double alpha = golden_angle, double x0 = 0.0) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("rotation angle must lie in (0,1)");
    if (!(x0 >= 0.0 && x0 < 1.0)) throw DomainError("rotation start point must lie in [0,1)");
    BaseSystem b;
    b.kind_ = Kind::Rotation;
    b.alpha_ = alpha;
    b.x0_ = x0;
    b.cumulative_ = {0.5, 1.0};
    b.weights_ = {0.5, 0.5};
    return b;
  }

  static BaseSystem iid(std::vector<double> weights, std::uint64_t seed) {
    if (weights.size() < 2) throw DomainError("i.i.d. base needs an alphabet of size >= 2");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw DomainError("i.i.d. weights must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("i.i.d. weights must sum to 1");
    BaseSystem b;
    b.kind_ = Kind::Iid;
    b.seed_ = seed;
    b.weights_ = std::move(weights);
    b.cumulative_.resize(b.weights_.size());
    std::partial_sum(b.weights_.begin(), b.weights_.end(), b.cumulative_.begin());
    b.cumulative_.back() = 1.0;
    return b;
  }

  Kind kind() const noexcept { return kind_; }
  int alphabet_size() const noexcept { return static_cast<int>(weights_.size()); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double alpha() const noexcept { return alpha_; }
  double x0() const noexcept { return x0_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Rotation coordinate frac(x0 + k*alpha); a pure function of k.
  double point(std::int64_t k) const noexcept {
    if (kind_ != Kind::Rotation) return 0.0;
    long double t = static_cast<long double>(x0_) + static_cast<long double>(k) * static_cast<long double>(alpha_);
    t -= std::floor(t);
    double p = static_cast<double>(t);
    return p >= 1.0 ? 0.0 : p;
  }

  /// Fiber label at absolute index k.
  int symbol(std::int64_t k) const noexcept {
    if (kind_ == Kind::Rotation) return point(k) < 0.5 ? 0 : 1;
    const double u = to_unit(hash_key(seed_, static_cast<std::uint64_t>(k), 0x6f6d656761ULL));
    for (std::size_t s = 0; s + 1 < cumulative_.size(); ++s) {
      if (u < cumulative_[s]) return static_cast<int>(s);
    }
    return static_cast<int>(cumulative_.size()) - 1;
  }

  std::string description() const {
    std::ostringstream os;
    os.precision(17);
    if (kind_ == Kind::Rotation) {
      os << "irrational-rotation(alpha=" << alpha_ << ", x0=" << x0_ << ")";
    } else {
      os << "two-sided-iid(m=" << weights_.size() << ", p=(";
      for (std::size_t i = 0; i < weights_.size(); ++i) os << (i ? "," : "") << weights_[i];
      os << "), seed=" << seed_ << ")";
    }
    return os.str();
  }

 private:
  BaseSystem() = default;

  Kind kind_ = Kind::Iid;
  double alpha_ = golden_angle;
  double x0_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

/// sigma^index(omega_0) for a shared base system.
struct OmegaState {
  std::shared_ptr<const BaseSystem> base;
  std::int64_t index = 0;

  int symbol() const { return base->symbol(index); }
  double point() const { return base->point(index); }

  friend bool operator==(const OmegaState& a, const OmegaState& b) {
    return a.base == b.base && a.index == b.index;
  }
};

inline OmegaState advance(const OmegaState& w, std::int64_t k) { return OmegaState{w.base, w.index + k}; }

inline int symbol_at(const OmegaState& w) { return w.symbol(); }

/// Cached symbols over the window [origin - back, origin + fwd].
class BaseOrbit {
 public:
  BaseOrbit(OmegaState origin, std::int64_t back, std::int64_t fwd)
      : origin_(std::move(origin)), back_(back), fwd_(fwd) {
    if (back < 0 || fwd < 0) throw DomainError("orbit window extents must be nonnegative");
    symbols_.reserve(static_cast<std::size_t>(back + fwd + 1));
    for (std::int64_t k = -back; k <= fwd; ++k) symbols_.push_back(origin_.base->symbol(origin_.index + k));
  }

  const OmegaState& origin() const noexcept { return origin_; }
  std::int64_t back() const noexcept { return back_; }
  std::int64_t fwd() const noexcept { return fwd_; }
  bool contains(std::int64_t k) const noexcept { return k >= -back_ && k <= fwd_; }

  /// Symbol at relative offset k from the origin.
  int symbol(std::int64_t k) const {
    if (!contains(k)) throw DomainError("orbit offset outside cached window");
    return symbols_[static_cast<std::size_t>(k + back_)];
  }

  OmegaState state(std::int64_t k) const {
    if (!contains(k)) throw DomainError("orbit offset outside cached window");
    return advance(origin_, k);
  }

 private:
  OmegaState origin_;
  std::int64_t back_;
  std::int64_t fwd_;
  std::vector<int> symbols_;
};

}  // namespace qlab
