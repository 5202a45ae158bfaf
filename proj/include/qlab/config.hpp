#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qlab/base_driver.hpp"
#include "qlab/error.hpp"
#include "qlab/map_family.hpp"
#include "qlab/observable.hpp"

namespace qlab {

// ---------------------------------------------------------------------------
// Locale-free number formatting and parsing

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double parse_double(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
    throw ConfigError(field + ": expected a decimal number, got '" + text + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  std::int64_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
    throw ConfigError(field + ": expected an integer, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
    throw ConfigError(field + ": expected an unsigned integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(field + ": expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_doubles(const std::string& field, const std::string& text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& p : split(text, ',')) out.push_back(parse_double(field, p));
  return out;
}

inline std::vector<std::int64_t> parse_ints(const std::string& field, const std::string& text) {
  std::vector<std::int64_t> out;
  if (trim(text).empty()) return out;
  for (const auto& p : split(text, ',')) out.push_back(parse_int(field, p));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Catalog

struct CatalogEntry {
  std::string family;
  std::string name;
  std::string parameters;
  std::string description;
};

inline const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> c{
      {"base", "iid", "weights, seed", "i.i.d. symbols with the given weights, keyed by seed"},
      {"base", "rotation", "alpha, x0, seed", "circle rotation x -> x + alpha; symbol 0 on [0,1/2)"},
      {"map", "beta-map", "beta > 1", "x -> beta x mod 1"},
      {"map", "doubling", "", "x -> 2x mod 1"},
      {"map", "golden-beta", "", "beta-map with beta = (1+sqrt 5)/2"},
      {"map", "table", "breakpoints | slopes | offsets", "piecewise affine map from branch data"},
      {"map", "tent", "", "full tent with slopes +-2"},
      {"observable", "const", "", "constant 1"},
      {"observable", "cos", "frequency", "cos(2 pi frequency x)"},
      {"observable", "indicator", "a, b", "indicator of [a,b)"},
      {"observable", "rademacher", "", "+1 on [0,1/2), -1 on [1/2,1)"},
      {"observable", "sin", "frequency", "sin(2 pi frequency x)"},
      {"observable", "table", "v_1; ...; v_m", "piecewise constant on m equal cells"},
  };
  return c;
}

inline PiecewiseAffineMap parse_map(const std::string& field, const std::string& spec) {
  const std::string s = trim(spec);
  const auto colon = s.find(':');
  const std::string name = trim(s.substr(0, colon));
  const std::string arg = colon == std::string::npos ? std::string{} : trim(s.substr(colon + 1));
  try {
    if (name == "doubling") return PiecewiseAffineMap::doubling();
    if (name == "tent") return PiecewiseAffineMap::tent();
    if (name == "golden-beta") return PiecewiseAffineMap::beta_map(std::numbers::phi);
    if (name == "beta-map") {
      if (arg.empty()) throw ConfigError(field + ": beta-map needs a parameter, e.g. beta-map:3");
      return PiecewiseAffineMap::beta_map(parse_double(field, arg));
    }
    if (name == "table") {
      const auto parts = split(arg, '|');
      if (parts.size() != 3) throw ConfigError(field + ": table map needs 'breakpoints | slopes | offsets'");
      return PiecewiseAffineMap::from_table(parse_doubles(field, parts[0]), parse_doubles(field, parts[1]),
                                            parse_doubles(field, parts[2]));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field + ": " + e.what());
  }
  throw ConfigError(field + ": unknown map '" + name + "' (see list-catalog)");
}

/// One term: [coef*]name[(args)].
inline Term parse_term(const std::string& field, const std::string& text) {
  std::string s = trim(text);
  Term t;
  const auto star = s.find('*');
  if (star != std::string::npos) {
    t.coef = parse_double(field, s.substr(0, star));
    s = trim(s.substr(star + 1));
  }
  const auto lp = s.find('(');
  const std::string name = trim(s.substr(0, lp));
  std::string arg;
  if (lp != std::string::npos) {
    const auto rp = s.rfind(')');
    if (rp == std::string::npos || rp < lp) throw ConfigError(field + ": unbalanced parentheses in '" + text + "'");
    arg = s.substr(lp + 1, rp - lp - 1);
  }
  if (name == "cos" || name == "sin") {
    t.kind = name == "cos" ? BasisKind::Cos : BasisKind::Sin;
    t.frequency = arg.empty() ? 1.0 : parse_double(field, arg);
  } else if (name == "rademacher") {
    t.kind = BasisKind::Rademacher;
  } else if (name == "const") {
    t.kind = BasisKind::Constant;
  } else if (name == "indicator") {
    const auto ab = parse_doubles(field, arg);
    if (ab.size() != 2 || !(ab[0] >= 0.0 && ab[0] < ab[1] && ab[1] <= 1.0))
      throw ConfigError(field + ": indicator needs 0 <= a < b <= 1");
    t.kind = BasisKind::Indicator;
    t.a = ab[0];
    t.b = ab[1];
  } else if (name == "table") {
    t.kind = BasisKind::Table;
    for (const auto& p : split(arg, ';')) t.table.push_back(parse_double(field, p));
    if (t.table.empty()) throw ConfigError(field + ": table observable needs values");
  } else {
    throw ConfigError(field + ": unknown observable '" + name + "' (see list-catalog)");
  }
  return t;
}

inline Component parse_component(const std::string& field, const std::string& text) {
  Component c;
  for (const auto& part : split(text, '+')) {
    if (part.empty()) throw ConfigError(field + ": empty term");
    c.terms.push_back(parse_term(field, part));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  // [base]
  std::string base_kind = "iid";
  std::optional<std::uint64_t> seed;
  std::vector<double> weights{0.5, 0.5};
  double alpha = BaseSystem::golden_angle;
  double x0 = 0.0;
  // [maps]
  std::vector<std::string> maps;
  // [observable]
  std::vector<std::string> components;
  std::vector<double> modulation;
  bool center = true;
  // [numerics]
  int bins = 1024;
  std::int64_t start = 0;
  double acim_tol = 1e-8;
  double lambda_tol = 1e-12;
  double analyticity_radius = 0.5;
  double contour_radius = 0.25;
  int contour_nodes = 32;
  std::vector<double> theta_grid{-0.5, 0.5, 11};  // lo, hi, points per axis
  int lag_max = 40;
  std::int64_t fibers = 8;
  double rate_radius = 1.0;
  // [experiment]
  std::vector<std::int64_t> ladder{1024};
  std::int64_t samples = 100000;
  std::vector<double> levels;
  std::vector<double> theta;
  std::vector<double> eps;
  std::vector<double> windows{0.0};  // window centers in units of sqrt(n)
  std::vector<double> j_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  double delta = 0.05;  // window half-width in units of sigma sqrt(n)
  double exponent = 0.75;
  std::optional<double> tolerance;
  std::string reference;
  int jobs = 0;
  // [output]
  std::string out_dir = "out";
  std::vector<std::string> formats{"csv", "json"};

  bool operator==(const ExperimentConfig&) const = default;

  int effective_jobs() const {
    if (jobs > 0) return jobs;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }

  std::shared_ptr<const BaseSystem> make_base() const {
    try {
      if (base_kind == "iid") return std::make_shared<const BaseSystem>(BaseSystem::iid(weights, *seed));
      return std::make_shared<const BaseSystem>(BaseSystem::rotation(alpha, x0));
    } catch (const DomainError& e) {
      throw ConfigError(std::string("[base]: ") + e.what());
    }
  }

  FiberSelector make_selector() const {
    std::vector<PiecewiseAffineMap> m;
    for (std::size_t i = 0; i < maps.size(); ++i) m.push_back(parse_map("[maps] symbol" + std::to_string(i), maps[i]));
    try {
      return FiberSelector(std::move(m));
    } catch (const Error& e) {
      throw ConfigError(std::string("[maps]: ") + e.what());
    }
  }

  Observable make_observable() const {
    std::vector<Component> c;
    for (std::size_t i = 0; i < components.size(); ++i)
      c.push_back(parse_component("[observable] component" + std::to_string(i + 1), components[i]));
    return Observable(std::move(c), modulation);
  }

  std::size_t dim() const noexcept { return components.size(); }
};

/// Field-level validation; throws ConfigError naming the offending key.
inline void validate(const ExperimentConfig& c) {
  if (c.base_kind != "iid" && c.base_kind != "rotation")
    throw ConfigError("[base] kind: unknown base '" + c.base_kind + "' (see list-catalog)");
  if (!c.seed) throw ConfigError("[base] seed: missing (required)");
  if (c.base_kind == "iid") {
    if (c.weights.size() < 2) throw ConfigError("[base] weights: need at least two symbols");
    double s = 0.0;
    for (double w : c.weights) {
      if (!(w >= 0.0)) throw ConfigError("[base] weights: must be nonnegative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("[base] weights: must sum to 1");
  } else {
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("[base] alpha: must lie in (0,1)");
    if (!(c.x0 >= 0.0 && c.x0 < 1.0)) throw ConfigError("[base] x0: must lie in [0,1)");
  }
  const std::size_t alphabet = c.base_kind == "iid" ? c.weights.size() : 2;
  if (c.maps.size() != alphabet)
    throw ConfigError("[maps]: need one map per base symbol (" + std::to_string(alphabet) + "), got " +
                      std::to_string(c.maps.size()));
  (void)c.make_selector();
  if (c.components.empty()) throw ConfigError("[observable] component1: missing (need at least one component)");
  (void)c.make_observable();
  if (!c.modulation.empty() && c.modulation.size() != alphabet)
    throw ConfigError("[observable] modulation: need one factor per base symbol");
  if (c.bins < 2 || c.bins > (1 << 20)) throw ConfigError("[numerics] bins: must lie in [2, 2^20]");
  if (!(c.acim_tol > 0.0)) throw ConfigError("[numerics] acim_tol: must be positive");
  if (!(c.lambda_tol > 0.0)) throw ConfigError("[numerics] lambda_tol: must be positive");
  if (!(c.analyticity_radius > 0.0)) throw ConfigError("[numerics] analyticity_radius: must be positive");
  if (!(c.contour_radius > 0.0 && c.contour_radius < c.analyticity_radius))
    throw ConfigError("[numerics] contour_radius: must lie in (0, analyticity_radius)");
  if (c.contour_nodes < 8) throw ConfigError("[numerics] contour_nodes: must be >= 8");
  if (c.theta_grid.size() != 3 || !(c.theta_grid[0] < c.theta_grid[1]) || c.theta_grid[2] < 2)
    throw ConfigError("[numerics] theta_grid: expected 'lo, hi, points' with lo < hi and points >= 2");
  if (c.lag_max < 0) throw ConfigError("[numerics] lag_max: must be >= 0");
  if (c.fibers < 1) throw ConfigError("[numerics] fibers: must be >= 1");
  if (!(c.rate_radius > 0.0)) throw ConfigError("[numerics] rate_radius: must be positive");
  if (c.ladder.empty()) throw ConfigError("[experiment] ladder: missing");
  for (auto n : c.ladder)
    if (n < 1) throw ConfigError("[experiment] ladder: entries must be >= 1");
  if (c.samples < 2) throw ConfigError("[experiment] samples: must be >= 2");
  if (!(c.exponent > 0.5 && c.exponent < 1.0)) throw ConfigError("[experiment] exponent: must lie in (1/2, 1)");
  if (!(c.delta > 0.0)) throw ConfigError("[experiment] delta: must be positive");
  if (c.tolerance && !(*c.tolerance > 0.0)) throw ConfigError("[experiment] tolerance: must be positive");
  if (c.jobs < 0) throw ConfigError("[experiment] jobs: must be >= 0");
  if (!c.theta.empty() && c.theta.size() != c.dim())
    throw ConfigError("[experiment] theta: need one entry per observable component");
  for (const auto& f : c.formats)
    if (f != "csv" && f != "json") throw ConfigError("[output] formats: unknown format '" + f + "'");
}

namespace detail {

inline std::optional<std::string> get(const boost::property_tree::ptree& pt, const std::string& section,
                                      const std::string& key) {
  const auto sec = pt.get_child_optional(section);
  if (!sec) return std::nullopt;
  const auto v = sec->get_optional<std::string>(key);
  if (!v) return std::nullopt;
  return trim(*v);
}

}  // namespace detail

/// Parses INI text; unknown sections and keys are rejected.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  boost::property_tree::ptree pt;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::vector<std::pair<std::string, std::vector<std::string>>> known{
      {"base", {"kind", "seed", "weights", "alpha", "x0"}},
      {"maps", {}},
      {"observable", {"modulation", "center"}},
      {"numerics",
       {"bins", "start", "acim_tol", "lambda_tol", "analyticity_radius", "contour_radius", "contour_nodes",
        "theta_grid", "lag_max", "fibers", "rate_radius"}},
      {"experiment",
       {"ladder", "samples", "levels", "theta", "eps", "windows", "j_grid", "delta", "exponent", "tolerance",
        "reference", "jobs"}},
      {"output", {"dir", "formats"}},
  };
  for (const auto& [sec, child] : pt) {
    const auto it = std::find_if(known.begin(), known.end(), [&](const auto& k) { return k.first == sec; });
    if (it == known.end()) throw ConfigError(origin + ": unknown section [" + sec + "]");
    for (const auto& [key, _] : child) {
      const bool ok = std::find(it->second.begin(), it->second.end(), key) != it->second.end() ||
                      (sec == "maps" && key.rfind("symbol", 0) == 0) ||
                      (sec == "observable" && key.rfind("component", 0) == 0);
      if (!ok) throw ConfigError(origin + ": [" + sec + "] " + key + ": unknown key");
    }
  }
  using detail::get;
  ExperimentConfig c;
  auto field = [](const char* sec, const char* key) { return std::string("[") + sec + "] " + key; };
  if (auto v = get(pt, "base", "kind")) c.base_kind = *v;
  if (auto v = get(pt, "base", "seed")) c.seed = parse_u64(field("base", "seed"), *v);
  if (auto v = get(pt, "base", "weights")) c.weights = parse_doubles(field("base", "weights"), *v);
  if (auto v = get(pt, "base", "alpha")) c.alpha = parse_double(field("base", "alpha"), *v);
  if (auto v = get(pt, "base", "x0")) c.x0 = parse_double(field("base", "x0"), *v);

  for (int i = 0;; ++i) {
    auto v = get(pt, "maps", "symbol" + std::to_string(i));
    if (!v) break;
    c.maps.push_back(*v);
  }
  for (int i = 1;; ++i) {
    auto v = get(pt, "observable", "component" + std::to_string(i));
    if (!v) break;
    c.components.push_back(*v);
  }
  if (auto v = get(pt, "observable", "modulation")) c.modulation = parse_doubles(field("observable", "modulation"), *v);
  if (auto v = get(pt, "observable", "center")) c.center = parse_bool(field("observable", "center"), *v);

  if (auto v = get(pt, "numerics", "bins")) c.bins = static_cast<int>(parse_int(field("numerics", "bins"), *v));
  if (auto v = get(pt, "numerics", "start")) c.start = parse_int(field("numerics", "start"), *v);
  if (auto v = get(pt, "numerics", "acim_tol")) c.acim_tol = parse_double(field("numerics", "acim_tol"), *v);
  if (auto v = get(pt, "numerics", "lambda_tol")) c.lambda_tol = parse_double(field("numerics", "lambda_tol"), *v);
  if (auto v = get(pt, "numerics", "analyticity_radius"))
    c.analyticity_radius = parse_double(field("numerics", "analyticity_radius"), *v);
  if (auto v = get(pt, "numerics", "contour_radius"))
    c.contour_radius = parse_double(field("numerics", "contour_radius"), *v);
  if (auto v = get(pt, "numerics", "contour_nodes"))
    c.contour_nodes = static_cast<int>(parse_int(field("numerics", "contour_nodes"), *v));
  if (auto v = get(pt, "numerics", "theta_grid")) c.theta_grid = parse_doubles(field("numerics", "theta_grid"), *v);
  if (auto v = get(pt, "numerics", "lag_max")) c.lag_max = static_cast<int>(parse_int(field("numerics", "lag_max"), *v));
  if (auto v = get(pt, "numerics", "fibers")) c.fibers = parse_int(field("numerics", "fibers"), *v);
  if (auto v = get(pt, "numerics", "rate_radius")) c.rate_radius = parse_double(field("numerics", "rate_radius"), *v);

  if (auto v = get(pt, "experiment", "ladder")) c.ladder = parse_ints(field("experiment", "ladder"), *v);
  if (auto v = get(pt, "experiment", "samples")) c.samples = parse_int(field("experiment", "samples"), *v);
  if (auto v = get(pt, "experiment", "levels")) c.levels = parse_doubles(field("experiment", "levels"), *v);
  if (auto v = get(pt, "experiment", "theta")) c.theta = parse_doubles(field("experiment", "theta"), *v);
  if (auto v = get(pt, "experiment", "eps")) c.eps = parse_doubles(field("experiment", "eps"), *v);
  if (auto v = get(pt, "experiment", "windows")) c.windows = parse_doubles(field("experiment", "windows"), *v);
  if (auto v = get(pt, "experiment", "j_grid")) c.j_grid = parse_doubles(field("experiment", "j_grid"), *v);
  if (auto v = get(pt, "experiment", "delta")) c.delta = parse_double(field("experiment", "delta"), *v);
  if (auto v = get(pt, "experiment", "exponent")) c.exponent = parse_double(field("experiment", "exponent"), *v);
  if (auto v = get(pt, "experiment", "tolerance")) c.tolerance = parse_double(field("experiment", "tolerance"), *v);
  if (auto v = get(pt, "experiment", "reference")) c.reference = *v;
  if (auto v = get(pt, "experiment", "jobs")) c.jobs = static_cast<int>(parse_int(field("experiment", "jobs"), *v));

  if (auto v = get(pt, "output", "dir")) c.out_dir = *v;
  if (auto v = get(pt, "output", "formats")) {
    c.formats.clear();
    for (const auto& f : split(*v, ',')) c.formats.push_back(f);
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[base]\n";
  os << "kind = " << c.base_kind << "\n";
  if (c.seed) os << "seed = " << *c.seed << "\n";
  os << "weights = " << join(c.weights) << "\n";
  os << "alpha = " << fmt_double(c.alpha) << "\n";
  os << "x0 = " << fmt_double(c.x0) << "\n\n";
  os << "[maps]\n";
  for (std::size_t i = 0; i < c.maps.size(); ++i) os << "symbol" << i << " = " << c.maps[i] << "\n";
  os << "\n[observable]\n";
  for (std::size_t i = 0; i < c.components.size(); ++i) os << "component" << (i + 1) << " = " << c.components[i] << "\n";
  if (!c.modulation.empty()) os << "modulation = " << join(c.modulation) << "\n";
  os << "center = " << (c.center ? "true" : "false") << "\n\n";
  os << "[numerics]\n";
  os << "bins = " << c.bins << "\n";
  os << "start = " << c.start << "\n";
  os << "acim_tol = " << fmt_double(c.acim_tol) << "\n";
  os << "lambda_tol = " << fmt_double(c.lambda_tol) << "\n";
  os << "analyticity_radius = " << fmt_double(c.analyticity_radius) << "\n";
  os << "contour_radius = " << fmt_double(c.contour_radius) << "\n";
  os << "contour_nodes = " << c.contour_nodes << "\n";
  os << "theta_grid = " << join(c.theta_grid) << "\n";
  os << "lag_max = " << c.lag_max << "\n";
  os << "fibers = " << c.fibers << "\n";
  os << "rate_radius = " << fmt_double(c.rate_radius) << "\n\n";
  os << "[experiment]\n";
  os << "ladder = " << join(c.ladder) << "\n";
  os << "samples = " << c.samples << "\n";
  if (!c.levels.empty()) os << "levels = " << join(c.levels) << "\n";
  if (!c.theta.empty()) os << "theta = " << join(c.theta) << "\n";
  if (!c.eps.empty()) os << "eps = " << join(c.eps) << "\n";
  os << "windows = " << join(c.windows) << "\n";
  os << "j_grid = " << join(c.j_grid) << "\n";
  os << "delta = " << fmt_double(c.delta) << "\n";
  os << "exponent = " << fmt_double(c.exponent) << "\n";
  if (c.tolerance) os << "tolerance = " << fmt_double(*c.tolerance) << "\n";
  if (!c.reference.empty()) os << "reference = " << c.reference << "\n";
  os << "jobs = " << c.jobs << "\n\n";
  os << "[output]\n";
  os << "dir = " << c.out_dir << "\n";
  std::string f;
  for (std::size_t i = 0; i < c.formats.size(); ++i) f += (i ? ", " : "") + c.formats[i];
  os << "formats = " << f << "\n";
  return os.str();
}

/// FNV-1a of the serialized config, hex.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace qlab
