#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qlab/error.hpp"
#include "qlab/twisted_cocycle.hpp"

namespace qlab {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

inline Eigen::MatrixXd to_eigen(const Mat& m) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return e;
}

// ---------------------------------------------------------------------------
// Covariance

enum class CovSource { GreenKubo, Hessian };

struct CovMatrix {
  Mat value;
  CovSource source = CovSource::GreenKubo;
  double parameter = 0.0;  // lag_max or contour radius
  double tail = 0.0;       // largest mean lag term at lag_max (Green-Kubo)
  bool converged = true;
  std::string warning;

  std::size_t dim() const noexcept { return value.size(); }
  double max_abs() const {
    double m = 0.0;
    for (const auto& r : value)
      for (double v : r) m = std::max(m, std::abs(v));
    return m;
  }
  double asymmetry() const {
    double m = 0.0;
    for (std::size_t i = 0; i < dim(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m = std::max(m, std::abs(value[i][j] - value[j][i]));
    return m;
  }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(value));
    return es.eigenvalues().minCoeff();
  }
  double determinant() const { return to_eigen(value).determinant(); }
};

/// Sigma^2_ij = <g^i g^j> + sum_{k=1}^{lag_max} (<g^i . g^j o tau^k> + <g^j . g^i o tau^k>)
/// averaged over `fibers` consecutive fibers starting at `start`.
inline CovMatrix green_kubo(const Cocycle& co, std::int64_t start, std::int64_t fibers, int lag_max,
                            double tol = 1e-10) {
  if (!co.observable().centered()) throw DomainError("Green-Kubo needs a centered observable");
  if (fibers < 1 || lag_max < 0) throw DomainError("Green-Kubo needs fibers >= 1 and lag_max >= 0");
  const std::size_t d = co.dim();
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  const double inv_n = 1.0 / static_cast<double>(nb);
  CovMatrix out;
  out.source = CovSource::GreenKubo;
  out.parameter = lag_max;
  out.value.assign(d, Vec(d, 0.0));
  Mat last_lag(d, Vec(d, 0.0));

  // centered bin values, cached per fiber as needed
  auto gbins = [&](std::int64_t k) {
    std::vector<Vec> g(d);
    for (std::size_t c = 0; c < d; ++c) g[c] = co.bins_at(k, c);
    return g;
  };

  acim_sweep(co, start - co.pullback_depth(), start + fibers - 1, start, [&](std::int64_t k, std::span<const double> v) {
    const auto g0 = gbins(k);
    std::vector<Vec> h(d, Vec(nb)), next(d, Vec(nb));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t b = 0; b < nb; ++b) h[i][b] = g0[i][b] * v[b];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t b = 0; b < nb; ++b) s += h[i][b] * g0[j][b];
        out.value[i][j] += s * inv_n;
      }
    for (int lag = 1; lag <= lag_max; ++lag) {
      const auto& op = co.op(k + lag - 1);
      for (std::size_t i = 0; i < d; ++i) {
        op.apply<double>(h[i], next[i]);
        std::swap(h[i], next[i]);
      }
      const auto gl = gbins(k + lag);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t b = 0; b < nb; ++b) s += h[i][b] * gl[j][b];
          s *= inv_n;
          out.value[i][j] += s;
          out.value[j][i] += s;
          if (lag == lag_max) last_lag[i][j] += s;
        }
    }
  });
  for (auto& r : out.value)
    for (auto& v : r) v /= static_cast<double>(fibers);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out.tail = std::max(out.tail, std::abs(last_lag[i][j]) / fibers);
  if (lag_max > 0 && out.tail > tol) {
    out.converged = false;
    out.warning = "lag terms have not decayed below tolerance at lag_max";
  }
  // symmetrize the (i,j)/(j,i) double counting on the diagonal
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double m = 0.5 * (out.value[i][j] + out.value[j][i]);
      out.value[i][j] = out.value[j][i] = m;
    }
  return out;
}

/// sigma_m^2 = Var_{mu_omega}(S_m g) for every m in `ladder` (d = 1), using
/// w_{j+1} = L_j(w_j + g_j v_j) and E S_n^2 = sum_j int g_j (g_j v_j + 2 w_j) dm.
inline std::vector<double> quenched_variance(const Cocycle& co, std::int64_t start,
                                             const std::vector<std::int64_t>& ladder) {
  if (co.dim() != 1) throw DimensionError("quenched variance is scalar-only");
  if (!co.observable().centered()) throw DomainError("quenched variance needs a centered observable");
  const std::int64_t n = *std::max_element(ladder.begin(), ladder.end());
  if (n < 1) throw DomainError("quenched variance needs n >= 1");
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  const double inv_n = 1.0 / static_cast<double>(nb);
  std::vector<double> w(nb, 0.0), h(nb), next(nb), prefix(static_cast<std::size_t>(n));
  double acc = 0.0;
  acim_sweep(co, start - co.pullback_depth(), start + n - 1, start, [&](std::int64_t k, std::span<const double> v) {
    const auto g = co.bins_at(k, 0);
    double s = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      h[b] = g[b] * v[b];
      s += g[b] * (h[b] + 2.0 * w[b]);
      h[b] += w[b];
    }
    acc += s * inv_n;
    prefix[static_cast<std::size_t>(k - start)] = acc;
    co.op(k).apply<double>(h, next);
    std::swap(w, next);
  });
  std::vector<double> out;
  for (auto m : ladder) out.push_back(prefix[static_cast<std::size_t>(m - 1)]);
  return out;
}

/// Hessian route: D^2 Pi_{omega,n}(0) / n.
inline CovMatrix hessian_covariance(const Cocycle& co, std::int64_t start, std::int64_t n,
                                    const CocycleOptions& opt = {}) {
  const auto d = cumulant_derivs(co, start, n, opt);
  CovMatrix out;
  out.source = CovSource::Hessian;
  out.parameter = opt.contour_radius;
  out.value = d.hessian_per_step();
  return out;
}

struct SigmaConsistency {
  double max_rel_diff = 0.0;
  bool pass = false;
  Mat green_kubo;
  Mat hessian;
};

/// Entrywise difference relative to the largest Green-Kubo entry.
inline SigmaConsistency sigma_consistency(const CovMatrix& gk, const CovMatrix& hess, double tol = 0.02) {
  if (gk.dim() != hess.dim()) throw DimensionError("covariance matrices differ in dimension");
  SigmaConsistency r;
  r.green_kubo = gk.value;
  r.hessian = hess.value;
  double diff = 0.0;
  for (std::size_t i = 0; i < gk.dim(); ++i)
    for (std::size_t j = 0; j < gk.dim(); ++j) diff = std::max(diff, std::abs(gk.value[i][j] - hess.value[i][j]));
  const double scale = gk.max_abs();
  r.max_rel_diff = scale > 0.0 ? diff / scale : (diff > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0);
  r.pass = r.max_rel_diff <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Generic cumulant sources and the Gartner-Ellis machinery

/// Lambda(t) on a closed ball of radius `radius`; derivatives are optional.
struct CumulantSource {
  std::size_t dim = 1;
  double radius = 1.0;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;

  Vec grad(const Vec& t) const {
    if (gradient) return gradient(t);
    Vec g(dim);
    const double h = 1e-5;
    for (std::size_t i = 0; i < dim; ++i) {
      Vec a = t, b = t;
      a[i] += h;
      b[i] -= h;
      g[i] = (value(a) - value(b)) / (2 * h);
    }
    return g;
  }

  Mat hess(const Vec& t) const {
    if (hessian) return hessian(t);
    Mat H(dim, Vec(dim));
    const double h = 1e-4;
    for (std::size_t i = 0; i < dim; ++i) {
      Vec a = t, b = t;
      a[i] += h;
      b[i] -= h;
      const Vec ga = grad(a), gb = grad(b);
      for (std::size_t j = 0; j < dim; ++j) H[i][j] = (ga[j] - gb[j]) / (2 * h);
    }
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i + 1; j < dim; ++j) H[i][j] = H[j][i] = 0.5 * (H[i][j] + H[j][i]);
    return H;
  }
};

inline CumulantSource quadratic_source(const Mat& sigma2, double radius) {
  CumulantSource s;
  s.dim = sigma2.size();
  s.radius = radius;
  s.value = [sigma2](const Vec& t) {
    double v = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t j = 0; j < t.size(); ++j) v += 0.5 * t[i] * sigma2[i][j] * t[j];
    return v;
  };
  s.gradient = [sigma2](const Vec& t) {
    Vec g(t.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t j = 0; j < t.size(); ++j) g[i] += sigma2[i][j] * t[j];
    return g;
  };
  s.hessian = [sigma2](const Vec&) { return sigma2; };
  return s;
}

inline CumulantSource log_cosh_source(double radius) {
  CumulantSource s;
  s.dim = 1;
  s.radius = radius;
  s.value = [](const Vec& t) { return std::log(std::cosh(t[0])); };
  s.gradient = [](const Vec& t) { return Vec{std::tanh(t[0])}; };
  s.hessian = [](const Vec& t) {
    const double c = std::cosh(t[0]);
    return Mat{{1.0 / (c * c)}};
  };
  return s;
}

/// Lambda(t) = Pi_{omega,n}(t)/n from the cocycle; the gradient uses the
/// complex step Im Pi(t + i h e_j)/h, the Hessian differences it.
inline CumulantSource cocycle_source(const Cocycle& co, std::int64_t start, std::int64_t n, double radius,
                                     const CocycleOptions& opt = {}) {
  CumulantSource s;
  s.dim = co.dim();
  s.radius = radius;
  s.value = [co, start, n, opt](const Vec& t) { return pi_real(co, t, start, n, opt) / static_cast<double>(n); };
  s.gradient = [co, start, n, opt](const Vec& t) {
    Vec g(t.size());
    const double h = 1e-20;
    for (std::size_t j = 0; j < t.size(); ++j) {
      CVec th(t.begin(), t.end());
      th[j] += cplx(0.0, h);
      g[j] = pi_trace(co, std::span<const cplx>(th), start, n, opt).total().imag() / h / static_cast<double>(n);
    }
    return g;
  };
  return s;
}

/// Discrete convexity of Lambda along each coordinate line through the grid points.
inline bool convex_on_grid(const CumulantSource& src, int points = 11, double tol = 1e-8) {
  const double r = src.radius;
  for (std::size_t axis = 0; axis < src.dim; ++axis) {
    Vec vals;
    const double h = 2.0 * r / (points - 1);
    for (int i = 0; i < points; ++i) {
      Vec t(src.dim, 0.0);
      t[axis] = -r + h * i;
      vals.push_back(src.value(t));
    }
    for (int i = 1; i + 1 < points; ++i)
      if (vals[static_cast<std::size_t>(i + 1)] - 2 * vals[static_cast<std::size_t>(i)] + vals[static_cast<std::size_t>(i - 1)] < -tol)
        return false;
  }
  return true;
}

struct LegendrePoint {
  Vec x;
  double value = 0.0;  // Lambda*(x)
  Vec maximizer;       // t(x)
  bool clipped = false;
  double residual = 0.0;  // |x - grad Lambda(t)| at an interior maximizer
};

namespace detail {

inline double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec project_ball(Vec t, double r) {
  const double n = norm2(t);
  if (n > r)
    for (auto& v : t) v *= r / n;
  return t;
}

}  // namespace detail

/// Lambda*(x) = sup_{|t| <= r} (t.x - Lambda(t)): Newton on the concave inner
/// problem; bisection (d = 1) or projected ascent (d > 1) as fallback; a
/// maximizer on the boundary sphere is flagged `clipped`.
inline LegendrePoint legendre_at(const CumulantSource& src, const Vec& x) {
  if (x.size() != src.dim) throw DimensionError("legendre: point dimension mismatch");
  const double r = src.radius;
  LegendrePoint out;
  out.x = x;
  auto objective = [&](const Vec& t) { return detail::dot(t, x) - src.value(t); };

  if (src.dim == 1) {
    auto fprime = [&](double t) { return x[0] - src.grad({t})[0]; };
    const double lo_slope = fprime(-r), hi_slope = fprime(r);
    double t;
    if (hi_slope >= 0.0) {
      t = r;
      out.clipped = true;
    } else if (lo_slope <= 0.0) {
      t = -r;
      out.clipped = true;
    } else {
      double a = -r, b = r;
      t = 0.0;
      for (int it = 0; it < 200; ++it) {
        const double f = fprime(t);
        if (std::abs(f) < 1e-15) break;
        if (f > 0) a = t; else b = t;
        const double H = src.hess({t})[0][0];
        double nt = H > 0 ? t + f / H : 0.5 * (a + b);
        if (!(nt > a && nt < b)) nt = 0.5 * (a + b);
        if (std::abs(nt - t) < 1e-15 * std::max(1.0, std::abs(t)) || b - a < 1e-15) {
          t = nt;
          break;
        }
        t = nt;
      }
      out.residual = std::abs(fprime(t));
    }
    out.maximizer = {t};
    out.value = objective(out.maximizer);
    return out;
  }

  Vec t(src.dim, 0.0);
  bool newton_ok = true;
  for (int it = 0; it < 100; ++it) {
    const Vec g = src.grad(t);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(src.dim));
    for (std::size_t i = 0; i < src.dim; ++i) rhs(static_cast<Eigen::Index>(i)) = x[i] - g[i];
    if (rhs.norm() < 1e-13) break;
    const Eigen::MatrixXd H = to_eigen(src.hess(t));
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) {
      newton_ok = false;
      break;
    }
    const Eigen::VectorXd step = llt.solve(rhs);
    double alpha = 1.0;
    const double f0 = objective(t);
    Vec nt(src.dim);
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < src.dim; ++i) nt[i] = t[i] + alpha * step(static_cast<Eigen::Index>(i));
      if (detail::norm2(nt) <= r && objective(nt) >= f0 - 1e-15) break;
      alpha *= 0.5;
    }
    if (detail::norm2(nt) > r) {
      newton_ok = false;
      break;
    }
    t = nt;
  }
  if (!newton_ok) {
    // projected gradient ascent over the ball
    t = detail::project_ball(t, r);
    double step = 1.0;
    for (int it = 0; it < 5000; ++it) {
      const Vec g = src.grad(t);
      Vec dir(src.dim);
      for (std::size_t i = 0; i < src.dim; ++i) dir[i] = x[i] - g[i];
      Vec nt = t;
      for (std::size_t i = 0; i < src.dim; ++i) nt[i] += step * dir[i];
      nt = detail::project_ball(nt, r);
      if (objective(nt) < objective(t)) {
        step *= 0.5;
        if (step < 1e-14) break;
        continue;
      }
      double move = 0.0;
      for (std::size_t i = 0; i < src.dim; ++i) move = std::max(move, std::abs(nt[i] - t[i]));
      t = nt;
      if (move < 1e-14) break;
    }
  }
  out.maximizer = t;
  out.value = objective(t);
  out.clipped = detail::norm2(t) >= r * (1.0 - 1e-9);
  if (!out.clipped) {
    const Vec g = src.grad(t);
    for (std::size_t i = 0; i < src.dim; ++i) out.residual = std::max(out.residual, std::abs(x[i] - g[i]));
  }
  return out;
}

/// Lambda* tabulated on an x-grid.
struct RateFunction {
  double radius = 0.0;
  std::vector<LegendrePoint> points;
  double max_duality_residual = 0.0;  // over the eta-grid check
};

/// Rejects non-convex Lambda, tabulates Lambda*, and checks
/// Lambda*(grad Lambda(eta)) = eta.grad Lambda(eta) - Lambda(eta) on eta-grid points.
inline RateFunction legendre(const CumulantSource& src, const std::vector<Vec>& x_grid,
                             const std::vector<Vec>& eta_check = {}) {
  if (!convex_on_grid(src)) throw DomainError("Lambda is not convex on the ball: configuration rejected");
  RateFunction rf;
  rf.radius = src.radius;
  for (const auto& x : x_grid) rf.points.push_back(legendre_at(src, x));
  for (const auto& eta : eta_check) {
    const Vec y = src.grad(eta);
    const double want = detail::dot(eta, y) - src.value(eta);
    rf.max_duality_residual = std::max(rf.max_duality_residual, std::abs(legendre_at(src, y).value - want));
  }
  return rf;
}

/// CSV `x_1..x_d, Lambda_star, t_1..t_d`.
inline void write_rate_csv(std::ostream& os, const RateFunction& rf) {
  const std::size_t d = rf.points.empty() ? 1 : rf.points.front().x.size();
  for (std::size_t i = 0; i < d; ++i) os << "x_" << (i + 1) << ',';
  os << "Lambda_star";
  for (std::size_t i = 0; i < d; ++i) os << ",t_" << (i + 1);
  os << '\n' << std::setprecision(17);
  for (const auto& p : rf.points) {
    for (double v : p.x) os << v << ',';
    os << p.value;
    for (double v : p.maximizer) os << ',' << v;
    os << '\n';
  }
}

struct BoxSet {
  Vec lo, hi;
};
struct HalfSpaceSet {
  Vec direction;
  double level = 0.0;  // {x : direction . x >= level}
};
struct MaskSet {
  std::vector<Vec> points;
};
using SetSpec = std::variant<BoxSet, HalfSpaceSet, MaskSet>;

struct LdpBound {
  double inf_rate = 0.0;  // inf_{x in A} Lambda*(x)
  Vec argmin;
  double exponent() const { return -inf_rate; }
};

/// -inf_{x in A} Lambda*(x) over the rate-function domain.
inline LdpBound ldp_bounds(const CumulantSource& src, const SetSpec& set) {
  LdpBound out;
  if (const auto* hs = std::get_if<HalfSpaceSet>(&set)) {
    if (hs->direction.size() != src.dim) throw DimensionError("half-space direction dimension mismatch");
    if (hs->level <= 0.0) {
      out.argmin.assign(src.dim, 0.0);
      return out;
    }
    // inf over {v.x >= a} of Lambda* = sup_{s >= 0} (s a - Lambda(s v))
    const double vn = detail::norm2(hs->direction);
    CumulantSource line;
    line.dim = 1;
    line.radius = src.radius / vn;
    line.value = [&](const Vec& s) {
      Vec t(src.dim);
      for (std::size_t i = 0; i < src.dim; ++i) t[i] = s[0] * hs->direction[i];
      return src.value(t);
    };
    const auto p = legendre_at(line, {hs->level});
    if (p.clipped) throw DomainError("half-space lies outside the rate-function domain");
    out.inf_rate = p.value;
    Vec t(src.dim);
    for (std::size_t i = 0; i < src.dim; ++i) t[i] = p.maximizer[0] * hs->direction[i];
    out.argmin = src.grad(t);
    return out;
  }
  std::vector<Vec> cand;
  if (const auto* box = std::get_if<BoxSet>(&set)) {
    if (box->lo.size() != src.dim || box->hi.size() != src.dim) throw DimensionError("box dimension mismatch");
    bool contains0 = true;
    for (std::size_t i = 0; i < src.dim; ++i) contains0 &= box->lo[i] <= 0.0 && box->hi[i] >= 0.0;
    if (contains0) {
      out.argmin.assign(src.dim, 0.0);
      return out;
    }
    // convex minimization: the nearest corner/face point to 0 is a good start; refine on shrinking grids
    Vec lo = box->lo, hi = box->hi;
    Vec best(src.dim);
    for (std::size_t i = 0; i < src.dim; ++i) best[i] = std::clamp(0.0, lo[i], hi[i]);
    const int per_axis = src.dim == 1 ? 41 : 11;
    double best_val = std::numeric_limits<double>::infinity();
    for (int level = 0; level < 6; ++level) {
      std::vector<Vec> grid{Vec{}};
      for (std::size_t i = 0; i < src.dim; ++i) {
        std::vector<Vec> next;
        for (const auto& g : grid)
          for (int k = 0; k < per_axis; ++k) {
            Vec p = g;
            p.push_back(lo[i] + (hi[i] - lo[i]) * k / (per_axis - 1));
            next.push_back(std::move(p));
          }
        grid = std::move(next);
      }
      bool any = false;
      for (const auto& p : grid) {
        const auto lp = legendre_at(src, p);
        if (lp.clipped) continue;
        any = true;
        if (lp.value < best_val) {
          best_val = lp.value;
          best = p;
        }
      }
      if (!any && level == 0) throw DomainError("set does not meet the rate-function domain");
      for (std::size_t i = 0; i < src.dim; ++i) {
        const double w = (hi[i] - lo[i]) / (per_axis - 1);
        const double nlo = std::max(box->lo[i], best[i] - w), nhi = std::min(box->hi[i], best[i] + w);
        lo[i] = nlo;
        hi[i] = nhi;
      }
    }
    out.inf_rate = best_val;
    out.argmin = best;
    return out;
  }
  const auto& mask = std::get<MaskSet>(set);
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& p : mask.points) {
    const auto lp = legendre_at(src, p);
    if (lp.clipped) continue;
    if (lp.value < best_val) {
      best_val = lp.value;
      out.argmin = p;
    }
  }
  if (!std::isfinite(best_val)) throw DomainError("set does not meet the rate-function domain");
  out.inf_rate = best_val;
  return out;
}

/// Exponentially tilted law p~_k = p_k exp(eta.z_k - Lambda_n(eta)) of a
/// discrete distribution (atoms z_k with masses p_k).
inline std::vector<double> tilt_distribution(const std::vector<Vec>& atoms, const std::vector<double>& mass,
                                             const Vec& eta) {
  if (atoms.size() != mass.size()) throw DimensionError("atoms and masses differ in length");
  std::vector<double> logw(atoms.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    logw[k] = std::log(mass[k]) + detail::dot(eta, atoms[k]);
    mx = std::max(mx, logw[k]);
  }
  double z = 0.0;
  for (double v : logw) z += std::exp(v - mx);
  std::vector<double> out(atoms.size());
  for (std::size_t k = 0; k < atoms.size(); ++k) out[k] = std::exp(logw[k] - mx) / z;
  return out;
}

// ---------------------------------------------------------------------------
// Moderate deviations

struct MdpCurve {
  std::vector<std::int64_t> n;
  std::vector<double> scaled;  // Pi_{omega,n}(theta/c_n) / (a_n^2/n)
  double target = 0.0;         // theta^T Sigma^2 theta / 2
  double rel_error_last() const { return target != 0.0 ? std::abs(scaled.back() / target - 1.0) : std::abs(scaled.back()); }
};

inline MdpCurve mdp_scaling(const Cocycle& co, const Vec& theta, const std::vector<std::int64_t>& ladder,
                            const Mat& sigma2, double exponent = 0.75, std::int64_t start = 0,
                            const CocycleOptions& opt = {}) {
  if (!(exponent > 0.5 && exponent < 1.0)) throw DomainError("MDP scale a_n = n^p needs 1/2 < p < 1");
  MdpCurve c;
  for (std::size_t i = 0; i < theta.size(); ++i)
    for (std::size_t j = 0; j < theta.size(); ++j) c.target += 0.5 * theta[i] * sigma2[i][j] * theta[j];
  for (auto n : ladder) {
    const double an = std::pow(static_cast<double>(n), exponent);
    const double cn = static_cast<double>(n) / an;
    Vec t(theta.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = theta[i] / cn;
    const bool zero = std::all_of(t.begin(), t.end(), [](double v) { return v == 0.0; });
    const double pi = zero ? 0.0 : pi_real(co, t, start, n, opt);
    c.n.push_back(n);
    c.scaled.push_back(pi / (an * an / static_cast<double>(n)));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Edgeworth

/// First-order Edgeworth data: a = (1 - Pi''/sigma_n^2)/2, b = Pi'''/(6 sigma_n^3).
struct EdgeworthModel {
  double n = 0.0;
  double sigma2 = 0.0;  // sigma_n^2
  double pi2 = 0.0;
  double pi3 = 0.0;
  double a = 0.0;
  double b = 0.0;
  double u = 0.0;  // Pi'''/sigma_n^2
};

/// sigma_n^2 defaults to Pi''(0); pass an MC variance to override.
inline EdgeworthModel make_edgeworth(double n, double pi2, double pi3, std::optional<double> sigma2 = std::nullopt) {
  EdgeworthModel m;
  m.n = n;
  m.pi2 = pi2;
  m.pi3 = pi3;
  m.sigma2 = sigma2.value_or(pi2);
  if (!(m.sigma2 > 0.0)) throw DomainError("Edgeworth model needs sigma_n^2 > 0");
  m.a = 0.5 * (1.0 - pi2 / m.sigma2);
  m.b = pi3 / (6.0 * std::pow(m.sigma2, 1.5));
  m.u = pi3 / m.sigma2;
  return m;
}

/// A(t) = Phi(t) + a t phi(t) - b (t^2 - 1) phi(t): the antiderivative of
/// phi(t)(1 + a(1 - t^2) + b(t^3 - 3t)), whose Fourier transform
/// int e^{itx} A'(x) dx is e^{-t^2/2}(1 + P(t)).
inline double edgeworth_cdf(const EdgeworthModel& m, double t) {
  return normal_cdf(t) + m.a * t * normal_pdf(t) - m.b * (t * t - 1.0) * normal_pdf(t);
}

/// Gil-Pelaez inversion of psi(s) = e^{-s^2/2}(1 + a s^2 - i b s^3).
inline double edgeworth_cdf_fourier(const EdgeworthModel& m, double t, int nodes = 4000, double s_max = 14.0) {
  auto integrand = [&](double s) {
    if (s == 0.0) {
      // limit of Im(e^{-ist} psi(s))/s as s -> 0
      return -t;
    }
    const std::complex<double> psi = std::exp(-0.5 * s * s) * std::complex<double>(1.0 + m.a * s * s, -m.b * s * s * s);
    return (std::exp(std::complex<double>(0.0, -s * t)) * psi).imag() / s;
  };
  const double h = s_max / nodes;
  double acc = integrand(0.0) + integrand(s_max);
  for (int k = 1; k < nodes; ++k) acc += (k % 2 ? 4.0 : 2.0) * integrand(k * h);
  return 0.5 - acc * h / 3.0 / std::numbers::pi;
}

/// CSV `t, Phi, A_edgeworth`.
inline void write_edgeworth_csv(std::ostream& os, const EdgeworthModel& m, const std::vector<double>& ts) {
  os << "t,Phi,A_edgeworth\n" << std::setprecision(17);
  for (double t : ts) os << t << ',' << normal_cdf(t) << ',' << edgeworth_cdf(m, t) << '\n';
}

// ---------------------------------------------------------------------------
// Large-deviation expansion

/// Pi_{omega,n} along real t with its first two derivatives.
struct PiSource {
  double n = 1.0;
  double radius = 1.0;
  std::function<double(double)> pi;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};

inline PiSource log_cosh_pi(double n, double radius) {
  return {n, radius, [n](double t) { return n * std::log(std::cosh(t)); }, [n](double t) { return n * std::tanh(t); },
          [n](double t) {
            const double c = std::cosh(t);
            return n / (c * c);
          }};
}

/// Pi derivatives by complex step (first) and central differences of it (second).
inline PiSource cocycle_pi(const Cocycle& co, std::int64_t start, std::int64_t n, double radius,
                           const CocycleOptions& opt = {}) {
  if (co.dim() != 1) throw DimensionError("LD expansion is scalar-only");
  PiSource s;
  s.n = static_cast<double>(n);
  s.radius = radius;
  s.pi = [=](double t) { return pi_real(co, std::vector<double>{t}, start, n, opt); };
  s.d1 = [=](double t) {
    const double h = 1e-20;
    const CVec th{cplx(t, h)};
    return pi_trace(co, std::span<const cplx>(th), start, n, opt).total().imag() / h;
  };
  s.d2 = [=](double t) {
    const double h = 1e-4;
    auto g = [&](double x) {
      const CVec th{cplx(x, 1e-20)};
      return pi_trace(co, std::span<const cplx>(th), start, n, opt).total().imag() / 1e-20;
    };
    return (g(t + h) - g(t - h)) / (2 * h);
  };
  return s;
}

/// phi_omega^theta(v^0) as the stabilized ratio int L^{theta,(m)} v^0 dm / exp(Pi_{omega,m}(theta)).
struct EigenfunctionalRatio {
  double value = 1.0;
  std::vector<int> m;
  std::vector<double> ratios;
  double stability = 0.0;  // |ratio(m_last) - ratio(m_prev)|
};

inline EigenfunctionalRatio eigenfunctional_ratio(const Cocycle& co, double theta, std::int64_t start,
                                                  const std::vector<int>& ladder = {10, 20, 40, 80},
                                                  const CocycleOptions& opt = {}) {
  const CVec th{theta};
  TwistWeights tw(co, th);
  const int mmax = *std::max_element(ladder.begin(), ladder.end());
  const int burn = choose_burn(co, tw, start, opt);
  const auto sw = twisted_sweep(co, tw, start, mmax, burn);

  const std::size_t nb = static_cast<std::size_t>(co.bins());
  CVec cur(nb), next(nb), scratch(nb);
  acim_sweep(co, start - co.pullback_depth(), start, start,
             [&](std::int64_t, std::span<const double> v) { std::copy(v.begin(), v.end(), cur.begin()); });
  EigenfunctionalRatio out;
  double log_scale = 0.0, log_pi = 0.0;
  for (int m = 1; m <= mmax; ++m) {
    const std::int64_t k = start + m - 1;
    twisted_apply_inplace(co, tw, k, cur, next, scratch);
    cplx mass{};
    for (const auto& v : next) mass += v;
    mass /= static_cast<double>(nb);
    const double s = std::abs(mass);
    log_scale += std::log(s);
    for (std::size_t i = 0; i < nb; ++i) cur[i] = next[i] / s;
    log_pi += std::log(sw.lambda[static_cast<std::size_t>(m - 1)].real());
    if (std::find(ladder.begin(), ladder.end(), m) != ladder.end()) {
      cplx total{};
      for (const auto& v : cur) total += v;
      total /= static_cast<double>(nb);
      out.m.push_back(m);
      out.ratios.push_back(total.real() * std::exp(log_scale - log_pi));
    }
  }
  out.value = out.ratios.back();
  if (out.ratios.size() >= 2) out.stability = std::abs(out.ratios.back() - out.ratios[out.ratios.size() - 2]);
  return out;
}

struct LdExpansion {
  double a = 0.0;
  double n = 0.0;
  double theta = 0.0;
  double rate = 0.0;         // I_{omega,n}(a)
  double rate_second = 0.0;  // I''_{omega,n}(a) = n / Pi''(theta)
  double phi = 1.0;          // phi^theta(v^0)
  double prefactor = 0.0;    // phi sqrt(I'') / (theta sqrt(2 pi n))
  double newton_residual = 0.0;
};

/// Solves Pi'(theta)/n = a on (0, r] and assembles the sharp prefactor.
inline LdExpansion ld_expansion(const PiSource& src, double a, double phi = 1.0) {
  if (!(a > 0.0)) throw DomainError("LD expansion needs a > 0");
  const double r = src.radius;
  auto f = [&](double t) { return src.d1(t) / src.n - a; };
  if (f(r) < 0.0) throw DomainError("level a is outside the admissible tilt range (0, r]");
  double lo = 0.0, hi = r, t = std::min(r, a / std::max(1e-300, src.d2(0.0) / src.n));
  if (!(t > 0.0 && t <= r)) t = 0.5 * r;
  for (int it = 0; it < 100; ++it) {
    const double v = f(t);
    if (std::abs(v) < 1e-14) break;
    if (v > 0) hi = t; else lo = t;
    const double d = src.d2(t) / src.n;
    if (!(d > 0.0)) throw DomainError("Pi is not convex along [0, r]");
    double nt = t - v / d;
    if (!(nt > lo && nt < hi)) nt = 0.5 * (lo + hi);
    if (std::abs(nt - t) < 1e-15) {
      t = nt;
      break;
    }
    t = nt;
  }
  LdExpansion out;
  out.a = a;
  out.n = src.n;
  out.theta = t;
  out.newton_residual = std::abs(f(t));
  out.rate = t * a - src.pi(t) / src.n;
  out.rate_second = src.n / src.d2(t);
  out.phi = phi;
  out.prefactor = phi * std::sqrt(out.rate_second) / (t * std::sqrt(2.0 * std::numbers::pi * src.n));
  return out;
}

// ---------------------------------------------------------------------------
// Concentration

/// Empirical tail P(|S_n| >= q) from sorted magnitudes.
inline double tail_fraction(const std::vector<double>& sorted_abs, double q) {
  const auto it = std::lower_bound(sorted_abs.begin(), sorted_abs.end(), q);
  return static_cast<double>(sorted_abs.end() - it) / static_cast<double>(sorted_abs.size());
}

/// Magnitudes |S_n| (sup over components) for each n of the ladder.
struct TailSamples {
  std::vector<std::int64_t> n;
  std::vector<std::vector<double>> magnitudes;  // sorted ascending
};

struct ConcentrationFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double slope = 0.0;  // fitted -d log P / d(eps^2 n)
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
  int dim = 1;
};

inline double concentration_bound(double eps, double n, int d, double c2) {
  return 2.0 * d * std::exp(-c2 * eps * eps * n);
}

/// Regresses log P(|S_n| >= eps n) on eps^2 n over points with at least
/// `min_count` exceedances, takes c2 = shrink * slope, then the smallest c1
/// making P(|S_n| >= eps n + c1) <= bound/2 on every fitted point.
inline ConcentrationFit fit_concentration(const TailSamples& ts, const std::vector<double>& eps_grid, int d,
                                          int min_count = 50, double shrink = 0.8) {
  std::vector<double> xs, ys;
  struct P {
    std::size_t idx;
    double eps;
  };
  std::vector<P> pts;
  for (std::size_t k = 0; k < ts.n.size(); ++k) {
    const double n = static_cast<double>(ts.n[k]);
    const double M = static_cast<double>(ts.magnitudes[k].size());
    for (double e : eps_grid) {
      const double p = tail_fraction(ts.magnitudes[k], e * n);
      if (p * M < min_count) continue;
      xs.push_back(e * e * n);
      ys.push_back(std::log(p));
      pts.push_back({k, e});
    }
  }
  if (xs.size() < 3) throw ConvergenceError("concentration fit: fewer than three resolvable tail points");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  ConcentrationFit fit;
  fit.dim = d;
  fit.points = xs.size();
  fit.slope = -sxy / sxx;
  fit.intercept = my + fit.slope * mx;
  fit.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  if (!(fit.slope > 0.0)) throw ConvergenceError("concentration fit: tails do not decay exponentially in eps^2 n");
  fit.c2 = shrink * fit.slope;
  for (const auto& p : pts) {
    const auto& mags = ts.magnitudes[p.idx];
    const double n = static_cast<double>(ts.n[p.idx]);
    const double target = 0.5 * concentration_bound(p.eps, n, d, fit.c2);
    if (target >= 1.0) continue;
    // smallest q with empirical tail <= target
    const auto M = mags.size();
    const auto keep = static_cast<std::size_t>(std::floor(target * static_cast<double>(M)));
    const double q = keep >= M ? 0.0 : std::nextafter(mags[M - keep - 1], std::numeric_limits<double>::infinity());
    fit.c1 = std::max(fit.c1, q - p.eps * n);
  }
  return fit;
}

struct ConcentrationCheck {
  bool covered = true;
  double worst_ratio = 0.0;  // max empirical / bound
  std::size_t points = 0;
};

/// Every (n, eps) of a held-out batch: P(|S_n| >= eps n + c1) <= 2d exp(-c2 eps^2 n).
inline ConcentrationCheck check_concentration(const ConcentrationFit& fit, const TailSamples& ts,
                                              const std::vector<double>& eps_grid) {
  ConcentrationCheck c;
  for (std::size_t k = 0; k < ts.n.size(); ++k) {
    const double n = static_cast<double>(ts.n[k]);
    for (double e : eps_grid) {
      const double b = concentration_bound(e, n, fit.dim, fit.c2);
      const double p = tail_fraction(ts.magnitudes[k], e * n + fit.c1);
      c.worst_ratio = std::max(c.worst_ratio, p / b);
      if (p > b) c.covered = false;
      ++c.points;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Local CLT

/// (2 pi)^{-d/2} |Sigma|^{-1} n^{-d/2} exp(-s^T Sigma^{-2} s / 2n) |J| for a box J
/// of the given half-widths centred at s.
inline double lclt_mass(const Vec& s, double n, const Mat& sigma2, const Vec& half_width) {
  const std::size_t d = sigma2.size();
  const Eigen::MatrixXd S = to_eigen(sigma2);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw DomainError("local CLT needs a positive definite Sigma^2");
  Eigen::VectorXd sv(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) sv(static_cast<Eigen::Index>(i)) = s[i];
  const double quad = sv.dot(llt.solve(sv));
  double vol = 1.0;
  for (double h : half_width) vol *= 2.0 * h;
  const double det_sigma = std::sqrt(S.determinant());
  return std::pow(2.0 * std::numbers::pi * n, -0.5 * static_cast<double>(d)) / det_sigma *
         std::exp(-quad / (2.0 * n)) * vol;
}

struct LatticeDiagnostic {
  bool lattice = false;
  double span = 0.0;
  double resonant_t = 0.0;
  double exponent_at_resonance = 0.0;
  std::vector<double> probe_t;
  std::vector<double> probe_exponent;
  bool large_t_condition = false;  // every probe exponent < 0
};

/// Lattice flag from the observable plus the twisted-norm probe on J.
inline LatticeDiagnostic lattice_diagnostic(const Cocycle& co, const std::vector<double>& j_grid, std::int64_t start,
                                            std::int64_t n_probe, int trials = 4) {
  LatticeDiagnostic dg;
  const std::size_t d = co.dim();
  if (auto span = co.observable().lattice_span()) {
    dg.lattice = true;
    dg.span = *span;
    dg.resonant_t = 2.0 * std::numbers::pi / *span;
    Vec t(d, 0.0);
    t[0] = dg.resonant_t;
    dg.exponent_at_resonance = twisted_norm_growth(co, t, start, n_probe, trials);
  }
  dg.large_t_condition = !dg.lattice;
  for (double tj : j_grid) {
    Vec t(d, 0.0);
    t[0] = tj;
    const double e = twisted_norm_growth(co, t, start, n_probe, trials);
    dg.probe_t.push_back(tj);
    dg.probe_exponent.push_back(e);
    if (!(e < 0.0)) dg.large_t_condition = false;
  }
  return dg;
}

struct LcltPrediction {
  bool refused = false;
  std::string diagnostic;
  double mass = 0.0;
};

inline LcltPrediction lclt_prediction(const LatticeDiagnostic& dg, const Vec& s, double n, const Mat& sigma2,
                                      const Vec& half_width) {
  LcltPrediction p;
  if (dg.lattice) {
    p.refused = true;
    p.diagnostic = "lattice-valued observable (span " + std::to_string(dg.span) + "): twisted norm exponent " +
                   std::to_string(dg.exponent_at_resonance) + " at t = " + std::to_string(dg.resonant_t);
    return p;
  }
  if (!dg.large_t_condition) {
    p.refused = true;
    p.diagnostic = "twisted norm probe is not contracting on the compact t-set";
    return p;
  }
  p.mass = lclt_mass(s, n, sigma2, half_width);
  return p;
}

}  // namespace qlab
