#pragma once

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qlab/config.hpp"
#include "qlab/error.hpp"

namespace qlab {

inline constexpr const char* kVersion = "1.0.0";

struct CheckRecord {
  std::string name;
  double predicted = 0.0;
  double observed = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;
};

struct RunReport {
  std::string subcommand;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<CheckRecord> checks;
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, double>> timings;  // stage, seconds
  nlohmann::json data = nlohmann::json::object();        // fitted constants and other outputs

  bool passed() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  /// |observed - predicted| <= tolerance.
  CheckRecord& near(std::string name, double predicted, double observed, double tol, std::string note = {}) {
    checks.push_back({std::move(name), predicted, observed, tol, std::abs(observed - predicted) <= tol, std::move(note)});
    return checks.back();
  }

  /// observed <= bound.
  CheckRecord& at_most(std::string name, double bound, double observed, std::string note = {}) {
    checks.push_back({std::move(name), bound, observed, 0.0, observed <= bound, std::move(note)});
    return checks.back();
  }

  CheckRecord& holds(std::string name, bool ok, double observed = 0.0, std::string note = {}) {
    checks.push_back({std::move(name), 1.0, observed, 0.0, ok, std::move(note)});
    return checks.back();
  }
};

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["subcommand"] = r.subcommand;
  j["pass"] = r.passed();
  auto& checks = j["checks"] = nlohmann::json::array();
  for (const auto& c : r.checks) {
    nlohmann::json cj{{"name", c.name},
                      {"predicted", number_or_null(c.predicted)},
                      {"observed", number_or_null(c.observed)},
                      {"tolerance", number_or_null(c.tolerance)},
                      {"pass", c.pass}};
    if (!c.note.empty()) cj["note"] = c.note;
    checks.push_back(std::move(cj));
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["provenance"] = {{"config_hash", r.config_hash}, {"seed", r.seed}, {"version", kVersion}, {"timestamp", stamp}};
  auto& t = j["timings"] = nlohmann::json::object();
  for (const auto& [k, v] : r.timings) t[k] = v;
  j["artifacts"] = r.artifacts;
  j["warnings"] = r.warnings;
  j["data"] = r.data;
  return j;
}

/// Output sink: creates the directory and records artifact names.
class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, bool csv, bool json) : dir_(std::move(dir)), csv_(csv), json_(json) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  bool csv() const noexcept { return csv_; }
  bool json() const noexcept { return json_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  template <class Fn>
  void write_csv(RunReport& r, const std::string& name, Fn&& fn) {
    if (!csv_) return;
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw Error("cannot write " + (dir_ / name).string());
    fn(os);
    r.artifacts.push_back(name);
  }

  void write_report(const RunReport& r) {
    if (!json_) return;
    std::ofstream os(dir_ / "report.json", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir_ / "report.json").string());
    os << to_json(r).dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  bool csv_;
  bool json_;
};

class StageTimer {
 public:
  StageTimer(RunReport& r, std::string stage) : r_(r), stage_(std::move(stage)), t0_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    r_.timings.emplace_back(stage_, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count());
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  RunReport& r_;
  std::string stage_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace qlab
