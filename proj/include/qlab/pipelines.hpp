#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "qlab/config.hpp"
#include "qlab/limit_lab.hpp"
#include "qlab/quenched_mc.hpp"
#include "qlab/report.hpp"
#include "qlab/twisted_cocycle.hpp"
#include "qlab/ulam.hpp"

namespace qlab {

// ---------------------------------------------------------------------------
// Reference densities

/// Bin averages of the normalized Parry density of the beta-map,
/// h(x) = sum_{k>=0} beta^{-k} 1[x < T^k(1)].
inline std::vector<double> parry_bin_averages(double beta, int bins) {
  std::vector<double> orbit;  // T^k(1) for k >= 0, with T(1) taken as the left limit beta - floor
  double y = 1.0;
  double w = 1.0;
  std::vector<double> weight;
  for (int k = 0; k < 80 && w > 1e-18; ++k) {
    orbit.push_back(y);
    weight.push_back(w);
    if (y == 0.0) break;
    const double by = beta * y;
    y = by - std::ceil(by - 1.0);  // left-limit convention keeps T(1) < 1 when beta*1 is an integer
    if (y >= 1.0) y -= 1.0;
    w /= beta;
  }
  std::vector<double> avg(static_cast<std::size_t>(bins), 0.0);
  double mass = 0.0;
  for (std::size_t k = 0; k < orbit.size(); ++k) {
    mass += weight[k] * orbit[k];
    for (int i = 0; i < bins; ++i) {
      const double lo = static_cast<double>(i) / bins, hi = static_cast<double>(i + 1) / bins;
      const double cover = std::clamp(orbit[k], lo, hi) - lo;
      avg[static_cast<std::size_t>(i)] += weight[k] * cover * bins;
    }
  }
  for (auto& v : avg) v /= mass;
  return avg;
}

// ---------------------------------------------------------------------------
// Setup shared by the pipelines

struct Setup {
  ExperimentConfig cfg;
  CocycleOptions opt;
  Cocycle raw;
  Cocycle co;  // centered when cfg.center
};

inline CocycleOptions cocycle_options(const ExperimentConfig& c) {
  CocycleOptions o;
  o.acim_tol = c.acim_tol;
  o.lambda_tol = c.lambda_tol;
  o.analyticity_radius = c.analyticity_radius;
  o.contour_radius = c.contour_radius;
  o.contour_nodes = c.contour_nodes;
  return o;
}

/// Builds the cocycle and centers it on every fiber a pipeline can touch:
/// twisted burn-in before `start` and `horizon` fibers after it.
inline Setup make_setup(const ExperimentConfig& cfg, std::int64_t horizon) {
  validate(cfg);
  Setup s{cfg, cocycle_options(cfg),
          Cocycle(cfg.make_base(), cfg.make_selector(), cfg.make_observable(), Partition(cfg.bins)),
          Cocycle(cfg.make_base(), cfg.make_selector(), cfg.make_observable(), Partition(cfg.bins))};
  if (cfg.center) {
    const std::int64_t back = s.opt.burn_max + s.opt.burn_max / 2 + 8;
    s.co = center_observable(s.raw, cfg.start - back, back + horizon + cfg.lag_max + 8, s.opt);
  }
  return s;
}

inline std::int64_t ladder_max(const ExperimentConfig& c) { return *std::max_element(c.ladder.begin(), c.ladder.end()); }

inline std::vector<std::vector<double>> theta_grid_points(const ExperimentConfig& c) {
  const double lo = c.theta_grid[0], hi = c.theta_grid[1];
  const int m = static_cast<int>(c.theta_grid[2]);
  std::vector<double> axis;
  for (int i = 0; i < m; ++i) axis.push_back(lo + (hi - lo) * i / (m - 1));
  std::vector<std::vector<double>> grid{{}};
  for (std::size_t d = 0; d < c.dim(); ++d) {
    std::vector<std::vector<double>> next;
    for (const auto& g : grid)
      for (double a : axis) {
        auto p = g;
        p.push_back(a);
        next.push_back(std::move(p));
      }
    grid = std::move(next);
  }
  return grid;
}

inline McOptions mc_options(const ExperimentConfig& c, std::uint64_t offset = 0) {
  return {*c.seed + offset, c.effective_jobs(), true};
}

inline void require_scalar(const ExperimentConfig& c, const char* what) {
  if (c.dim() != 1) throw ConfigError(std::string("[observable]: ") + what + " needs a scalar observable");
}

inline void require_centered(const ExperimentConfig& c, const char* what) {
  if (!c.center) throw ConfigError(std::string("[observable] center: ") + what + " needs a centered observable");
}

// ---------------------------------------------------------------------------
// Pipelines

inline void run_acim(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  AcimFamily fam;
  {
    StageTimer t(r, "pullback");
    fam = acim_pullback(s.raw, c.start, c.fibers, s.opt);
  }
  const double tol = c.tolerance.value_or(1e-10);
  r.at_most("equivariance residual", tol, fam.max_equivariance_residual());
  r.at_most("pullback residual", c.acim_tol, fam.max_pullback_residual());
  r.holds("density nonnegative", fam.min_value() >= -1e-12, fam.min_value());
  r.near("unit mass", 1.0, fam.at(c.start).integral(), 1e-12);
  r.data["pullback_depth"] = fam.depth;
  if (!c.reference.empty()) {
    std::vector<double> ref;
    if (c.reference == "uniform") {
      ref.assign(static_cast<std::size_t>(c.bins), 1.0);
    } else if (c.reference.rfind("parry:", 0) == 0) {
      ref = parry_bin_averages(parse_double("[experiment] reference", c.reference.substr(6)), c.bins);
    } else if (c.reference == "parry-golden") {
      ref = parry_bin_averages(std::numbers::phi, c.bins);
    } else {
      r.warnings.push_back("reference '" + c.reference + "' is not a density reference; skipped");
    }
    if (!ref.empty()) {
      const auto& v = fam.at(c.start).values();
      double l1 = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) l1 += std::abs(v[i] - ref[i]);
      l1 /= static_cast<double>(v.size());
      const double rtol = c.reference == "uniform" ? tol : 2.0 / c.bins;
      r.at_most("L1 distance to " + c.reference, rtol, l1);
    }
  }
  out.write_csv(r, "acim.csv", [&](std::ostream& os) { write_density_csv(os, fam.at(c.start)); });
}

inline void run_lambda_surface(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  const auto grid = theta_grid_points(c);
  const std::int64_t n = ladder_max(c);
  LambdaGrid g;
  {
    StageTimer t(r, "lambda grid");
    g = lambda_grid(s.co, c.start, n, grid, s.opt);
  }
  // convexity along the first axis lines of the grid
  const int m = static_cast<int>(c.theta_grid[2]);
  double worst = 0.0;
  for (std::size_t base = 0; base + static_cast<std::size_t>(m) <= g.Lambda.size(); base += static_cast<std::size_t>(m))
    for (int i = 1; i + 1 < m; ++i) {
      const auto k = base + static_cast<std::size_t>(i);
      worst = std::min(worst, g.Lambda[k + 1] - 2 * g.Lambda[k] + g.Lambda[k - 1]);
    }
  r.at_most("convexity defect along grid lines", 1e-9, -worst);
  if (c.reference == "log-cosh") {
    require_scalar(c, "the log-cosh reference");
    double dev = 0.0;
    for (std::size_t k = 0; k < g.theta.size(); ++k)
      dev = std::max(dev, std::abs(g.Lambda[k] - std::log(std::cosh(g.theta[k][0]))));
    r.at_most("max |Lambda - log cosh|", c.tolerance.value_or(1e-9), dev);
  } else if (!c.reference.empty()) {
    r.warnings.push_back("reference '" + c.reference + "' is not a Lambda reference; skipped");
  }
  r.data["n"] = n;
  out.write_csv(r, "lambda.csv", [&](std::ostream& os) { write_lambda_csv(os, g); });
}

struct VarianceResult {
  CovMatrix gk, hess;
  SigmaConsistency consistency;
  double gradient = 0.0;
};

inline VarianceResult compute_variance(const Setup& s, std::int64_t n) {
  VarianceResult v;
  v.gk = green_kubo(s.co, s.cfg.start, s.cfg.fibers, s.cfg.lag_max);
  const auto d = cumulant_derivs(s.co, s.cfg.start, n, s.opt);
  v.hess.source = CovSource::Hessian;
  v.hess.parameter = s.opt.contour_radius;
  v.hess.value = d.hessian_per_step();
  for (double gi : d.gradient) v.gradient = std::max(v.gradient, std::abs(gi) / static_cast<double>(n));
  v.consistency = sigma_consistency(v.gk, v.hess);
  return v;
}

inline nlohmann::json matrix_json(const Mat& m) { return nlohmann::json(m); }

inline void run_variance(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_centered(c, "variance");
  VarianceResult v;
  {
    StageTimer t(r, "green-kubo and contour");
    v = compute_variance(s, ladder_max(c));
  }
  if (!v.gk.converged) r.warnings.push_back("Green-Kubo: " + v.gk.warning);
  r.at_most("symmetry of Sigma^2", 1e-10, v.gk.asymmetry());
  r.holds("Sigma^2 positive semidefinite", v.gk.min_eigenvalue() >= -1e-8, v.gk.min_eigenvalue());
  r.at_most("|grad Lambda(0)|", 1e-6, v.gradient);
  r.at_most("Hessian vs Green-Kubo relative difference", 0.02, v.consistency.max_rel_diff);
  if (!c.reference.empty() && (std::isdigit(static_cast<unsigned char>(c.reference[0])) || c.reference[0] == '-')) {
    const auto want = parse_doubles("[experiment] reference", c.reference);
    const std::size_t d = c.dim();
    if (want.size() != d * d) throw ConfigError("[experiment] reference: variance expects d*d matrix entries");
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        r.near("Sigma^2[" + std::to_string(i) + "][" + std::to_string(j) + "]", want[i * d + j], v.gk.value[i][j],
               c.tolerance.value_or(1e-6));
  }
  r.data["sigma2_green_kubo"] = matrix_json(v.gk.value);
  r.data["sigma2_hessian"] = matrix_json(v.hess.value);
  r.data["green_kubo_tail"] = v.gk.tail;
  out.write_csv(r, "variance.csv", [&](std::ostream& os) {
    os << "i,j,green_kubo,hessian\n" << std::setprecision(17);
    for (std::size_t i = 0; i < c.dim(); ++i)
      for (std::size_t j = 0; j < c.dim(); ++j)
        os << i + 1 << ',' << j + 1 << ',' << v.gk.value[i][j] << ',' << v.hess.value[i][j] << '\n';
  });
}

/// sup |F_n - reference| of S_n / sigma_n for each rung of the batch ladder.
inline std::vector<double> ks_ladder(const TrajectoryBatch& b, const std::vector<double>& sigma_n,
                                     const std::function<double(std::size_t, double)>& ref) {
  std::vector<double> out;
  for (std::size_t l = 0; l < b.ladder.size(); ++l) {
    auto xs = b.component(l);
    for (auto& x : xs) x /= sigma_n[l];
    out.push_back(ks_distance(std::move(xs), [&](double t) { return ref(l, t); }));
  }
  return out;
}

inline void run_clt(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_centered(c, "clt");
  const double tol = c.tolerance.value_or(0.02);
  std::vector<SummaryRow> rows;
  TrajectoryBatch b;
  {
    StageTimer t(r, "monte carlo");
    b = birkhoff_batch(s.co, c.start, c.ladder, static_cast<std::size_t>(c.samples), mc_options(c));
  }
  if (c.dim() == 1) {
    std::vector<double> sig;
    {
      StageTimer t(r, "quenched variance");
      for (double v : quenched_variance(s.co, c.start, b.ladder)) sig.push_back(std::sqrt(v));
    }
    const auto ks = ks_ladder(b, sig, [](std::size_t, double t) { return normal_cdf(t); });
    for (std::size_t l = 0; l < ks.size(); ++l) {
      rows.push_back({b.ladder[l], b.samples, "ks_normal", ks[l]});
      rows.push_back({b.ladder[l], b.samples, "sigma_n", sig[l]});
    }
    r.at_most("KS distance to Phi at n = " + std::to_string(b.ladder.back()), tol, ks.back());
  } else {
    const auto gk = green_kubo(s.co, c.start, c.fibers, c.lag_max);
    std::vector<std::vector<double>> grid{{}};
    for (std::size_t d = 0; d < c.dim(); ++d) {
      std::vector<std::vector<double>> next;
      for (const auto& g : grid)
        for (double a : {-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0}) {
          auto p = g;
          p.push_back(a);
          next.push_back(std::move(p));
        }
      grid = std::move(next);
    }
    double last = 0.0;
    for (std::size_t l = 0; l < b.ladder.size(); ++l) {
      last = cf_distance(b, l, gk.value, grid);
      rows.push_back({b.ladder[l], b.samples, "cf_distance", last});
    }
    r.at_most("characteristic-function distance at n = " + std::to_string(b.ladder.back()), tol, last);
  }
  out.write_csv(r, "clt.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline SlopeFit loglog_fit(const std::vector<std::int64_t>& n, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double x = std::log(static_cast<double>(n[i])), v = std::log(y[i]);
    sx += x;
    sy += v;
    sxx += x * x;
    sxy += x * v;
  }
  SlopeFit f;
  f.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / m;
  return f;
}

inline void run_berry_esseen(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_scalar(c, "berry-esseen");
  require_centered(c, "berry-esseen");
  if (c.ladder.size() < 3) throw ConfigError("[experiment] ladder: berry-esseen needs at least three rungs");
  TrajectoryBatch b;
  {
    StageTimer t(r, "monte carlo");
    b = birkhoff_batch(s.co, c.start, c.ladder, static_cast<std::size_t>(c.samples), mc_options(c));
  }
  std::vector<double> sig;
  {
    StageTimer t(r, "quenched variance");
    for (double v : quenched_variance(s.co, c.start, b.ladder)) sig.push_back(std::sqrt(v));
  }
  const auto D = ks_ladder(b, sig, [](std::size_t, double t) { return normal_cdf(t); });
  const auto fit = loglog_fit(b.ladder, D);
  r.holds("Berry-Esseen log-log slope in [-0.65, -0.35]", fit.slope >= -0.65 && fit.slope <= -0.35, fit.slope);
  r.data["slope"] = fit.slope;
  r.data["ks"] = D;
  std::vector<SummaryRow> rows;
  for (std::size_t l = 0; l < D.size(); ++l) {
    rows.push_back({b.ladder[l], b.samples, "ks_normal", D[l]});
    rows.push_back({b.ladder[l], b.samples, "sqrt_n_ks_normal", D[l] * std::sqrt(static_cast<double>(b.ladder[l]))});
  }
  out.write_csv(r, "berry_esseen.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

struct EdgeworthStudy {
  TrajectoryBatch batch;
  PrefixCumulants cumulants;
  std::vector<double> variance;  // sigma_n^2 per rung
  std::vector<EdgeworthModel> models;
  std::vector<double> ks_normal, ks_edgeworth;
};

inline EdgeworthStudy edgeworth_study(const Cocycle& co, std::int64_t start, const std::vector<std::int64_t>& ladder,
                                      std::size_t M, const McOptions& mc, const CocycleOptions& opt) {
  EdgeworthStudy e;
  e.batch = birkhoff_batch(co, start, ladder, M, mc);
  e.cumulants = prefix_cumulants(co, start, e.batch.ladder, opt);
  e.variance = quenched_variance(co, start, e.batch.ladder);
  std::vector<double> sig;
  for (std::size_t l = 0; l < e.batch.ladder.size(); ++l) {
    e.models.push_back(make_edgeworth(static_cast<double>(e.batch.ladder[l]), e.cumulants.d2[l], e.cumulants.d3[l],
                                      e.variance[l]));
    sig.push_back(std::sqrt(e.models.back().sigma2));
  }
  e.ks_normal = ks_ladder(e.batch, sig, [](std::size_t, double t) { return normal_cdf(t); });
  e.ks_edgeworth = ks_ladder(e.batch, sig, [&](std::size_t l, double t) { return edgeworth_cdf(e.models[l], t); });
  return e;
}

/// max over the ladder relative to the first rung; a scaled coefficient that
/// stays bounded keeps this near 1.
inline double coefficient_growth(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (v.front() > 0.0) return mx / v.front();
  return mx > 0.0 ? INFINITY : 1.0;
}

inline void run_edgeworth(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_scalar(c, "edgeworth");
  require_centered(c, "edgeworth");
  EdgeworthStudy e;
  {
    StageTimer t(r, "monte carlo and cumulants");
    e = edgeworth_study(s.co, c.start, c.ladder, static_cast<std::size_t>(c.samples), mc_options(c), s.opt);
  }
  const std::size_t last = e.batch.ladder.size() - 1;
  const double rn = std::sqrt(static_cast<double>(e.batch.ladder[last]));
  const double ratio = e.ks_edgeworth[last] / e.ks_normal[last];
  r.at_most("sqrt(n) sup|F - A| / sqrt(n) sup|F - Phi| at n = " + std::to_string(e.batch.ladder[last]),
            c.tolerance.value_or(0.5), ratio);
  std::vector<double> an, bn;
  for (const auto& m : e.models) {
    an.push_back(std::abs(m.a) * m.n);
    bn.push_back(std::abs(m.b) * std::sqrt(m.n));
  }
  r.at_most("growth of |a| n across the ladder (max / first rung)", 2.0, coefficient_growth(an));
  r.at_most("growth of |b| sqrt(n) across the ladder (max / first rung)", 2.0, coefficient_growth(bn));
  r.data["sqrt_n_ks_normal"] = e.ks_normal[last] * rn;
  r.data["sqrt_n_ks_edgeworth"] = e.ks_edgeworth[last] * rn;
  r.data["b_sqrt_n"] = bn;
  r.data["a_n"] = an;
  std::vector<double> ts;
  for (int i = 0; i <= 160; ++i) ts.push_back(-4.0 + 0.05 * i);
  out.write_csv(r, "edgeworth.csv", [&](std::ostream& os) { write_edgeworth_csv(os, e.models[last], ts); });
  std::vector<SummaryRow> rows;
  for (std::size_t l = 0; l <= last; ++l) {
    rows.push_back({e.batch.ladder[l], e.batch.samples, "ks_normal", e.ks_normal[l]});
    rows.push_back({e.batch.ladder[l], e.batch.samples, "ks_edgeworth", e.ks_edgeworth[l]});
    rows.push_back({e.batch.ladder[l], e.batch.samples, "b", e.models[l].b});
  }
  out.write_csv(r, "edgeworth_summary.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

inline void run_ldp(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_scalar(c, "ldp");
  require_centered(c, "ldp");
  if (c.levels.empty()) throw ConfigError("[experiment] levels: ldp needs at least one level a");
  const std::int64_t n = c.ladder.front();
  const auto src = cocycle_source(s.co, c.start, ladder_max(c), c.rate_radius, s.opt);
  std::vector<Vec> xs;
  for (int i = -20; i <= 20; ++i) xs.push_back({0.05 * i});
  std::vector<Vec> eta;
  for (double e : {-0.5, -0.25, 0.25, 0.5}) eta.push_back({e * c.rate_radius});
  RateFunction rf;
  {
    StageTimer t(r, "legendre");
    rf = legendre(src, xs, eta);
  }
  r.at_most("Legendre duality residual", 1e-8, rf.max_duality_residual);
  out.write_csv(r, "rate_function.csv", [&](std::ostream& os) { write_rate_csv(os, rf); });

  TrajectoryBatch b;
  {
    StageTimer t(r, "direct monte carlo");
    b = birkhoff_batch(s.co, c.start, {n}, static_cast<std::size_t>(c.samples), mc_options(c));
  }
  std::vector<SummaryRow> rows;
  for (double a : c.levels) {
    const auto lp = legendre_at(src, {a});
    const std::string tag = "a = " + fmt_double(a);
    TailEstimate direct;
    try {
      direct = tail_log_prob(b, 0, a);
    } catch (const ConvergenceError& e) {
      r.warnings.push_back(tag + ": " + e.what());
      continue;
    }
    auto& chk = r.holds("Lambda*(a) inside the 95% CI of -(1/n) log P, " + tag,
                        lp.value >= -direct.hi && lp.value <= -direct.lo, -direct.log_prob);
    chk.predicted = lp.value;
    chk.tolerance = 0.5 * (direct.hi - direct.lo);
    rows.push_back({n, b.samples, "neg_log_prob_direct a=" + fmt_double(a), -direct.log_prob, -direct.hi, -direct.lo});
    TailEstimate tilted;
    {
      StageTimer t(r, "tilted estimator " + tag);
      tilted = tilted_tail_log_prob(s.co, c.start, n, a, lp.maximizer[0],
                                    std::max<std::size_t>(2, static_cast<std::size_t>(c.samples) / 10), mc_options(c, 1));
    }
    rows.push_back({n, tilted.samples, "neg_log_prob_tilted a=" + fmt_double(a), -tilted.log_prob, -tilted.hi,
                    -tilted.lo});
    auto& agree = r.holds("tilted and direct estimates share a CI, " + tag,
                          std::max(direct.lo, tilted.lo) <= std::min(direct.hi, tilted.hi), -tilted.log_prob);
    agree.predicted = -direct.log_prob;
  }
  out.write_csv(r, "ldp.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

inline void run_mdp(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_centered(c, "mdp");
  Vec theta = c.theta.empty() ? Vec(c.dim(), 1.0) : c.theta;
  CovMatrix gk;
  MdpCurve curve;
  {
    StageTimer t(r, "green-kubo");
    gk = green_kubo(s.co, c.start, c.fibers, c.lag_max);
  }
  {
    StageTimer t(r, "scaled log-mgf");
    curve = mdp_scaling(s.co, theta, c.ladder, gk.value, c.exponent, c.start, s.opt);
  }
  r.at_most("relative error of the scaled log-MGF at n = " + std::to_string(curve.n.back()),
            c.tolerance.value_or(0.03), curve.rel_error_last())
      .note = "target " + fmt_double(curve.target);
  std::vector<SummaryRow> rows;
  for (std::size_t i = 0; i < curve.n.size(); ++i) rows.push_back({curve.n[i], 0, "scaled_log_mgf", curve.scaled[i]});
  rows.push_back({0, 0, "target", curve.target});
  out.write_csv(r, "mdp.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

inline void run_lclt(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_scalar(c, "lclt");
  require_centered(c, "lclt");
  LatticeDiagnostic dg;
  {
    StageTimer t(r, "large-t probe");
    dg = lattice_diagnostic(s.co, c.j_grid, c.start, 64);
  }
  r.data["probe_t"] = dg.probe_t;
  r.data["probe_exponent"] = dg.probe_exponent;
  if (dg.lattice) {
    r.near("twisted norm exponent at the lattice resonance t = " + fmt_double(dg.resonant_t), 0.0,
           dg.exponent_at_resonance, 1e-6);
    const auto p = lclt_prediction(dg, {0.0}, 1.0, {{1.0}}, {1.0});
    r.holds("local limit prediction refused for a lattice observable", p.refused).note = p.diagnostic;
    return;
  }
  const double worst = *std::max_element(dg.probe_exponent.begin(), dg.probe_exponent.end());
  r.holds("twisted norm exponent negative on J", dg.large_t_condition, worst);
  const auto gk = green_kubo(s.co, c.start, c.fibers, c.lag_max);
  const std::int64_t n = ladder_max(c);
  TrajectoryBatch b;
  {
    StageTimer t(r, "monte carlo");
    b = birkhoff_batch(s.co, c.start, {n}, static_cast<std::size_t>(c.samples), mc_options(c));
  }
  const double rn = std::sqrt(static_cast<double>(n));
  const double delta = c.delta * std::sqrt(gk.value[0][0]) * rn;
  const double tol = c.tolerance.value_or(0.1);
  std::vector<SummaryRow> rows;
  for (double w : c.windows) {
    const double sc = w * rn;
    const auto p = lclt_prediction(dg, {sc}, static_cast<double>(n), gk.value, {delta});
    const auto obs = window_prob(b, 0, {sc}, {delta});
    r.near("window mass ratio at s = " + fmt_double(w) + " sqrt(n)", 1.0, obs.value / p.mass, tol)
        .note = "predicted " + fmt_double(p.mass) + ", observed " + fmt_double(obs.value);
    rows.push_back({n, b.samples, "window s=" + fmt_double(w) + "sqrt(n) predicted", p.mass});
    rows.push_back({n, b.samples, "window s=" + fmt_double(w) + "sqrt(n) observed", obs.value, obs.lo, obs.hi});
  }
  out.write_csv(r, "lclt.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

inline TailSamples tail_samples(const TrajectoryBatch& b) {
  TailSamples ts;
  ts.n = b.ladder;
  for (std::size_t l = 0; l < b.ladder.size(); ++l) {
    std::vector<double> m(b.samples);
    for (std::size_t i = 0; i < b.samples; ++i) {
      double v = 0.0;
      for (std::size_t c = 0; c < b.dim; ++c) v = std::max(v, std::abs(b.at(l, i, c)));
      m[i] = v;
    }
    std::sort(m.begin(), m.end());
    ts.magnitudes.push_back(std::move(m));
  }
  return ts;
}

inline void run_concentrate(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_centered(c, "concentrate");
  if (c.eps.empty()) throw ConfigError("[experiment] eps: concentrate needs an eps grid");
  TrajectoryBatch fit_b, held_b;
  {
    StageTimer t(r, "monte carlo");
    fit_b = birkhoff_batch(s.co, c.start, c.ladder, static_cast<std::size_t>(c.samples), mc_options(c));
    held_b = birkhoff_batch(s.co, c.start, c.ladder, static_cast<std::size_t>(c.samples), mc_options(c, 1));
  }
  const auto fit_ts = tail_samples(fit_b), held_ts = tail_samples(held_b);
  const int d = static_cast<int>(c.dim());
  const auto fit = fit_concentration(fit_ts, c.eps, d);
  const auto chk = check_concentration(fit, held_ts, c.eps);
  r.holds("bound over-covers every held-out tail", chk.covered, chk.worst_ratio).note =
      "max empirical/bound " + fmt_double(chk.worst_ratio);
  auto& r2 = r.holds("log-tail regression R^2 >= 0.95", fit.r2 >= 0.95, fit.r2);
  r2.predicted = 0.95;
  r.data["c1"] = fit.c1;
  r.data["c2"] = fit.c2;
  r.data["r2"] = fit.r2;
  out.write_csv(r, "concentration.csv", [&](std::ostream& os) {
    os << "n,eps,empirical,bound\n" << std::setprecision(17);
    for (std::size_t k = 0; k < held_ts.n.size(); ++k)
      for (double e : c.eps) {
        const double n = static_cast<double>(held_ts.n[k]);
        os << held_ts.n[k] << ',' << e << ',' << tail_fraction(held_ts.magnitudes[k], e * n + fit.c1) << ','
           << concentration_bound(e, n, d, fit.c2) << '\n';
      }
  });
}

inline void run_ld_expansion(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  require_scalar(c, "ld-expansion");
  require_centered(c, "ld-expansion");
  if (c.levels.empty()) throw ConfigError("[experiment] levels: ld-expansion needs a level a");
  const std::int64_t n = ladder_max(c);
  std::vector<SummaryRow> rows;
  for (double a : c.levels) {
    LdExpansion ld;
    EigenfunctionalRatio phi;
    {
      StageTimer t(r, "expansion a = " + fmt_double(a));
      const auto src = cocycle_pi(s.co, c.start, n, c.rate_radius, s.opt);
      ld = ld_expansion(src, a);
      phi = eigenfunctional_ratio(s.co, ld.theta, c.start, {10, 20, 40, 80}, s.opt);
      ld = ld_expansion(src, a, phi.value);
    }
    r.at_most("Newton residual, a = " + fmt_double(a), 1e-10, ld.newton_residual);
    r.at_most("eigenfunctional ratio stability, a = " + fmt_double(a), 1e-6, phi.stability);
    TailEstimate tail;
    {
      StageTimer t(r, "tilted estimator a = " + fmt_double(a));
      tail = tilted_tail_log_prob(s.co, c.start, n, a, ld.theta, static_cast<std::size_t>(c.samples), mc_options(c));
    }
    const double observed = tail.probability * std::exp(static_cast<double>(n) * ld.rate);
    r.near("P(S_n >= an) e^{n I(a)} / prefactor, a = " + fmt_double(a), 1.0, observed / ld.prefactor,
           c.tolerance.value_or(0.05));
    rows.push_back({n, 0, "theta a=" + fmt_double(a), ld.theta});
    rows.push_back({n, 0, "rate a=" + fmt_double(a), ld.rate});
    rows.push_back({n, 0, "phi a=" + fmt_double(a), ld.phi});
    rows.push_back({n, 0, "prefactor a=" + fmt_double(a), ld.prefactor});
    rows.push_back({n, tail.samples, "scaled_tail a=" + fmt_double(a), observed,
                    observed * std::exp(static_cast<double>(n) * (tail.lo - tail.log_prob)),
                    observed * std::exp(static_cast<double>(n) * (tail.hi - tail.log_prob))});
  }
  out.write_csv(r, "ld_expansion.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

/// Catalog maps used for the one-step Lasota-Yorke probe.
inline std::vector<PiecewiseAffineMap> probe_catalog() {
  return {PiecewiseAffineMap::beta_map(2.0), PiecewiseAffineMap::beta_map(2.5), PiecewiseAffineMap::beta_map(3.0),
          PiecewiseAffineMap::doubling(), PiecewiseAffineMap::beta_map(std::numbers::phi), PiecewiseAffineMap::tent()};
}

/// min over random nonnegative step functions of essinf L^(N) f / ||f||_1.
inline double essinf_ratio(const Cocycle& co, std::int64_t start, int N, int trials, std::uint64_t seed) {
  const std::size_t nb = static_cast<std::size_t>(co.bins());
  const CounterRng rng(seed);
  double worst = std::numeric_limits<double>::infinity();
  std::vector<double> cur(nb), next(nb);
  for (int t = 0; t < trials; ++t) {
    // a bump on a random cell of width 1/16 plus a small random background
    const std::size_t w = std::max<std::size_t>(1, nb / 16);
    const std::size_t at = static_cast<std::size_t>(rng.uniform(static_cast<std::uint64_t>(t), 0) * static_cast<double>(nb - w));
    for (std::size_t i = 0; i < nb; ++i) cur[i] = (i >= at && i < at + w ? 1.0 : 0.0);
    double l1 = 0.0;
    for (double v : cur) l1 += v;
    l1 /= static_cast<double>(nb);
    for (int k = 0; k < N; ++k) {
      co.op(start + k).apply<double>(cur, next);
      std::swap(cur, next);
    }
    worst = std::min(worst, *std::min_element(cur.begin(), cur.end()) / l1);
  }
  return worst;
}

inline void run_probe_conditions(const Setup& s, RunReport& r, ArtifactWriter& out) {
  const auto& c = s.cfg;
  const Partition part(c.bins);
  std::vector<SummaryRow> rows;
  nlohmann::json c3 = nlohmann::json::array();
  {
    StageTimer t(r, "lasota-yorke");
    for (const auto& m : probe_catalog()) {
      const auto op = build_ulam(m, part);
      for (int N = 1; N <= 4; ++N) {
        const std::vector<const UlamOperator*> ops(static_cast<std::size_t>(N), &op);
        const auto fit = probe_lasota_yorke(ops, 64, *c.seed);
        if (N == 1) r.at_most("(C3) alpha-hat with N = 1 for " + m.name(), 1.0 - 1e-9, fit.alpha);
        c3.push_back({{"map", m.name()}, {"N", N}, {"alpha", fit.alpha}, {"beta", fit.beta}});
        if (fit.contracting()) break;
      }
    }
    // the configured cocycle: smallest N with a contracting fit
    for (int N = 1; N <= 4; ++N) {
      std::vector<const UlamOperator*> ops;
      for (int k = 0; k < N; ++k) ops.push_back(&s.raw.op(c.start + k));
      const auto fit = probe_lasota_yorke(ops, 64, *c.seed);
      c3.push_back({{"map", "configured cocycle"}, {"N", N}, {"alpha", fit.alpha}, {"beta", fit.beta}});
      if (fit.contracting()) break;
    }
  }
  r.data["C3"] = c3;
  {
    StageTimer t(r, "decay");
    const std::size_t nb = static_cast<std::size_t>(c.bins);
    std::vector<double> f(nb);
    for (std::size_t i = 0; i < nb; ++i) f[i] = i < nb / 2 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < nb; ++i) f[i] += 0.5 * std::cos(2.0 * std::numbers::pi * 3.0 * (i + 0.5) / nb);
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(nb);
    for (auto& v : f) v -= mean;
    std::vector<const UlamOperator*> ops;
    for (int k = 0; k < 60; ++k) ops.push_back(&s.raw.op(c.start + k));
    const auto curve = probe_decay(ops, f);
    r.holds("(C4) fitted decay rate lambda-hat > 0", curve.rate > 0.0, curve.rate);
    r.data["C4"] = {{"rate", curve.rate}, {"norms", curve.norms}};
  }
  {
    StageTimer t(r, "essinf");
    nlohmann::json c5 = nlohmann::json::array();
    double best = 0.0;
    int bestN = 0;
    for (int N = 1; N <= 12 && best <= 0.0; ++N) {
      const double v = essinf_ratio(s.raw, c.start, N, 16, *c.seed);
      c5.push_back({{"N", N}, {"c", v}});
      if (v > 0.0) {
        best = v;
        bestN = N;
      }
    }
    r.holds("(C5) essinf L^(N) f >= c ||f||_1 with c > 0", best > 0.0, best).note = "N = " + std::to_string(bestN);
    r.data["C5"] = c5;
  }
  if (c.center) {
    StageTimer t(r, "large-t");
    const auto dg = lattice_diagnostic(s.co, c.j_grid, c.start, 64);
    r.data["large_t"] = {{"t", dg.probe_t}, {"exponent", dg.probe_exponent}, {"lattice", dg.lattice}};
    if (dg.lattice) {
      r.data["large_t"]["resonant_t"] = dg.resonant_t;
      r.data["large_t"]["exponent_at_resonance"] = dg.exponent_at_resonance;
    } else {
      r.holds("(Large t's) twisted norm exponent negative on J", dg.large_t_condition,
              *std::max_element(dg.probe_exponent.begin(), dg.probe_exponent.end()));
    }
    for (std::size_t i = 0; i < dg.probe_t.size(); ++i)
      rows.push_back({64, 0, "large_t_exponent t=" + fmt_double(dg.probe_t[i]), dg.probe_exponent[i]});
  }
  for (const auto& e : c3)
    rows.push_back({e["N"].get<std::int64_t>(), 0, "C3 alpha " + e["map"].get<std::string>(), e["alpha"].get<double>()});
  out.write_csv(r, "conditions.csv", [&](std::ostream& os) { write_summary_csv(os, rows); });
}

// ---------------------------------------------------------------------------
// Dispatch

using Pipeline = void (*)(const Setup&, RunReport&, ArtifactWriter&);

inline const std::vector<std::pair<std::string, Pipeline>>& pipelines() {
  static const std::vector<std::pair<std::string, Pipeline>> p{
      {"acim", run_acim},
      {"lambda-surface", run_lambda_surface},
      {"variance", run_variance},
      {"clt", run_clt},
      {"berry-esseen", run_berry_esseen},
      {"edgeworth", run_edgeworth},
      {"ldp", run_ldp},
      {"mdp", run_mdp},
      {"lclt", run_lclt},
      {"concentrate", run_concentrate},
      {"ld-expansion", run_ld_expansion},
      {"probe-conditions", run_probe_conditions},
  };
  return p;
}

/// Fibers after `start` that a subcommand reads.
inline std::int64_t pipeline_horizon(const std::string& sub, const ExperimentConfig& c) {
  std::int64_t h = std::max<std::int64_t>(ladder_max(c), c.fibers + c.lag_max);
  if (sub == "probe-conditions") h = std::max<std::int64_t>(h, 64);
  if (sub == "ld-expansion") h = std::max<std::int64_t>(h, 80);
  return h + 1;
}

inline RunReport run_pipeline(const std::string& sub, const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const auto it = std::find_if(pipelines().begin(), pipelines().end(), [&](const auto& p) { return p.first == sub; });
  if (it == pipelines().end()) throw ConfigError("unknown subcommand '" + sub + "'");
  RunReport r;
  r.subcommand = sub;
  validate(cfg);
  r.config_hash = config_hash(cfg);
  r.seed = *cfg.seed;
  const bool csv = std::find(cfg.formats.begin(), cfg.formats.end(), "csv") != cfg.formats.end();
  const bool json = std::find(cfg.formats.begin(), cfg.formats.end(), "json") != cfg.formats.end();
  ArtifactWriter out(out_dir, csv, json);
  Setup s = [&] {
    StageTimer t(r, "setup");
    return make_setup(cfg, pipeline_horizon(sub, cfg));
  }();
  it->second(s, r, out);
  out.write_report(r);
  return r;
}

}  // namespace qlab
