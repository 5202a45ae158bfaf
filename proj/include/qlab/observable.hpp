#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qlab/base_driver.hpp"
#include "qlab/error.hpp"

namespace qlab {

/// Catalog basis functions on [0,1).
enum class BasisKind { Cos, Sin, Rademacher, Indicator, Table, Constant };

struct Term {
  BasisKind kind = BasisKind::Constant;
  double coef = 1.0;
  double frequency = 1.0;      // cos/sin: cos(2*pi*frequency*x)
  double a = 0.0, b = 1.0;     // indicator of [a,b)
  std::vector<double> table;   // equal-width piecewise-constant values

  double basis(double x) const {
    switch (kind) {
      case BasisKind::Cos: return std::cos(2.0 * std::numbers::pi * frequency * x);
      case BasisKind::Sin: return std::sin(2.0 * std::numbers::pi * frequency * x);
      case BasisKind::Rademacher: return x < 0.5 ? 1.0 : -1.0;
      case BasisKind::Indicator: return (x >= a && x < b) ? 1.0 : 0.0;
      case BasisKind::Table: {
        auto i = static_cast<std::size_t>(x * static_cast<double>(table.size()));
        return table[std::min(i, table.size() - 1)];
      }
      case BasisKind::Constant: return 1.0;
    }
    return 0.0;
  }

  double value(double x) const { return coef * basis(x); }

  double sup_abs() const {
    switch (kind) {
      case BasisKind::Table: {
        double m = 0.0;
        for (double v : table) m = std::max(m, std::abs(v));
        return std::abs(coef) * m;
      }
      default: return std::abs(coef);
    }
  }

  bool lattice_valued() const { return kind != BasisKind::Cos && kind != BasisKind::Sin; }

  /// Exactly constant on every bin of the n-bin uniform partition.
  bool partition_constant(int n_bins) const {
    auto on_grid = [n_bins](double t) {
      const double s = t * n_bins;
      return std::abs(s - std::round(s)) < 1e-12;
    };
    switch (kind) {
      case BasisKind::Cos:
      case BasisKind::Sin: return false;
      case BasisKind::Rademacher: return n_bins % 2 == 0;
      case BasisKind::Indicator: return on_grid(a) && on_grid(b);
      case BasisKind::Table: return n_bins % static_cast<int>(table.size()) == 0;
      case BasisKind::Constant: return true;
    }
    return false;
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    os << coef << "*";
    switch (kind) {
      case BasisKind::Cos: os << "cos(" << frequency << ")"; break;
      case BasisKind::Sin: os << "sin(" << frequency << ")"; break;
      case BasisKind::Rademacher: os << "rademacher"; break;
      case BasisKind::Indicator: os << "indicator(" << a << "," << b << ")"; break;
      case BasisKind::Table:
        os << "table(";
        for (std::size_t i = 0; i < table.size(); ++i) os << (i ? ";" : "") << table[i];
        os << ")";
        break;
      case BasisKind::Constant: os << "const"; break;
    }
    return os.str();
  }
};

/// One real component g^i(omega, .) as a sum of catalog terms.
struct Component {
  std::vector<Term> terms;

  double value(double x) const {
    double s = 0.0;
    for (const auto& t : terms) s += t.value(x);
    return s;
  }

  double sup_abs() const {
    double s = 0.0;
    for (const auto& t : terms) s += t.sup_abs();
    return s;
  }

  bool partition_constant(int n_bins) const {
    return std::all_of(terms.begin(), terms.end(), [n_bins](const Term& t) { return t.partition_constant(n_bins); });
  }

  /// Span h of the lattice the values live on, if any. Constants shift the
  /// lattice without changing the span.
  std::optional<double> lattice_span() const {
    double span = 0.0;
    for (const auto& t : terms) {
      if (!t.lattice_valued()) return std::nullopt;
      double s = 0.0;
      switch (t.kind) {
        case BasisKind::Rademacher: s = 2.0 * std::abs(t.coef); break;
        case BasisKind::Indicator: s = std::abs(t.coef); break;
        case BasisKind::Table: {
          // gcd of pairwise differences, when commensurate
          for (std::size_t i = 1; i < t.table.size(); ++i) {
            const double d = std::abs(t.coef * (t.table[i] - t.table[0]));
            if (d > 1e-14) s = s == 0.0 ? d : real_gcd(s, d);
            if (s < 0.0) return std::nullopt;
          }
          break;
        }
        default: break;
      }
      if (s == 0.0) continue;
      span = span == 0.0 ? s : real_gcd(span, s);
      if (span < 0.0) return std::nullopt;
    }
    if (span == 0.0) return std::nullopt;
    return span;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < terms.size(); ++i) s += (i ? " + " : "") + terms[i].to_string();
    return s;
  }

  /// gcd for reals whose ratio is a small rational; -1 when incommensurate.
  static double real_gcd(double x, double y) {
    for (int q = 1; q <= 64; ++q) {
      const double p = x / y * q;
      if (std::abs(p - std::round(p)) < 1e-9 * q) return y / q;
    }
    return -1.0;
  }
};

/// Per-fiber constants subtracted by fiberwise centering.
class CenteringTable {
 public:
  CenteringTable() = default;

  /// constants[k - first][component]; symbols[k - first] the fiber symbol.
  CenteringTable(std::int64_t first, std::vector<std::vector<double>> constants, std::vector<int> symbols,
                 int alphabet_size, double uniform_tol = 1e-13)
      : first_(first), constants_(std::move(constants)) {
    // When every fiber with the same symbol has the same constant (integer-slope
    // families), the table extends to all of Omega.
    per_symbol_.assign(static_cast<std::size_t>(alphabet_size), {});
    bool uniform = true;
    for (std::size_t k = 0; k < constants_.size() && uniform; ++k) {
      auto& slot = per_symbol_[static_cast<std::size_t>(symbols[k])];
      if (slot.empty()) {
        slot = constants_[k];
      } else {
        for (std::size_t c = 0; c < constants_[k].size(); ++c)
          if (std::abs(slot[c] - constants_[k][c]) > uniform_tol) uniform = false;
      }
    }
    if (!uniform) per_symbol_.clear();
  }

  std::int64_t first() const noexcept { return first_; }
  std::int64_t last() const noexcept { return first_ + static_cast<std::int64_t>(constants_.size()) - 1; }
  bool uniform_per_symbol() const noexcept { return !per_symbol_.empty(); }

  double constant(std::int64_t k, int symbol, std::size_t component) const {
    if (k >= first_ && k <= last()) return constants_[static_cast<std::size_t>(k - first_)][component];
    if (!per_symbol_.empty() && !per_symbol_[static_cast<std::size_t>(symbol)].empty())
      return per_symbol_[static_cast<std::size_t>(symbol)][component];
    throw DomainError("centered observable evaluated outside its centering window (fiber " + std::to_string(k) + ")");
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& row : constants_)
      for (double v : row) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::int64_t first_ = 0;
  std::vector<std::vector<double>> constants_;
  std::vector<std::vector<double>> per_symbol_;
};

/// Vector-valued observable g(omega, x) in R^d.
class Observable {
 public:
  Observable(std::vector<Component> components, std::vector<double> modulation = {})
      : components_(std::move(components)), modulation_(std::move(modulation)) {
    if (components_.empty()) throw DomainError("observable needs dimension >= 1");
  }

  std::size_t dim() const noexcept { return components_.size(); }
  const std::vector<Component>& components() const noexcept { return components_; }
  const std::vector<double>& modulation() const noexcept { return modulation_; }
  bool centered() const noexcept { return centering_ != nullptr; }
  const CenteringTable* centering() const noexcept { return centering_.get(); }

  double scale(int symbol) const {
    if (modulation_.empty()) return 1.0;
    if (symbol < 0 || static_cast<std::size_t>(symbol) >= modulation_.size())
      throw DomainError("no modulation for symbol " + std::to_string(symbol));
    return modulation_[static_cast<std::size_t>(symbol)];
  }

  /// Raw (uncentered) value of component c on a fiber with the given symbol.
  double raw(std::size_t c, int symbol, double x) const { return scale(symbol) * components_[c].value(x); }

  double value(std::size_t c, std::int64_t k, int symbol, double x) const {
    double v = raw(c, symbol, x);
    if (centering_) v -= centering_->constant(k, symbol, c);
    return v;
  }

  std::vector<double> eval(const OmegaState& w, double x) const {
    if (!(x >= 0.0 && x < 1.0)) throw DomainError("point outside [0,1)");
    const int s = w.symbol();
    std::vector<double> out(dim());
    for (std::size_t c = 0; c < dim(); ++c) out[c] = value(c, w.index, s, x);
    return out;
  }

  /// Bin values of the raw component on n bins: midpoints (exact when the
  /// component is constant on bins).
  std::vector<double> raw_bin_values(std::size_t c, int symbol, int n_bins) const {
    std::vector<double> v(static_cast<std::size_t>(n_bins));
    for (int i = 0; i < n_bins; ++i) v[static_cast<std::size_t>(i)] = raw(c, symbol, (i + 0.5) / n_bins);
    return v;
  }

  /// ess-sup bound M of |g| (sup norm over components).
  double bound() const {
    double mod = 1.0;
    for (double m : modulation_) mod = std::max(mod, std::abs(m));
    double m = 0.0;
    for (const auto& c : components_) m = std::max(m, mod * c.sup_abs());
    if (centering_) m += centering_->max_abs();
    return m;
  }

  bool partition_constant(int n_bins) const {
    return std::all_of(components_.begin(), components_.end(),
                       [n_bins](const Component& c) { return c.partition_constant(n_bins); });
  }

  /// Lattice span when some component is lattice valued; such a component
  /// obstructs the local limit theorem at t = 2*pi/span.
  std::optional<double> lattice_span() const {
    for (const auto& c : components_) {
      auto s = c.lattice_span();
      if (!s) continue;
      if (modulation_.empty()) return s;
      double span = 0.0;
      for (double m : modulation_) {
        const double sm = std::abs(m) * *s;
        if (sm == 0.0) continue;
        span = span == 0.0 ? sm : Component::real_gcd(span, sm);
        if (span < 0.0) break;
      }
      if (span > 0.0) return span;
    }
    return std::nullopt;
  }

  bool lattice() const { return lattice_span().has_value(); }

  Observable with_centering(CenteringTable table) const {
    Observable o = *this;
    o.centering_ = std::make_shared<const CenteringTable>(std::move(table));
    return o;
  }

  Observable uncentered() const {
    Observable o = *this;
    o.centering_.reset();
    return o;
  }

 private:
  std::vector<Component> components_;
  std::vector<double> modulation_;
  std::shared_ptr<const CenteringTable> centering_;
};

}  // namespace qlab
