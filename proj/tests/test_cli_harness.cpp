#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "qlab/pipelines.hpp"

using namespace qlab;
namespace fs = std::filesystem;

namespace {

const char* kDoublingCos = R"([base]
kind = iid
seed = 42
weights = 0.5, 0.5

[maps]
symbol0 = doubling
symbol1 = doubling

[observable]
component1 = cos(1)

[numerics]
bins = 256
theta_grid = -0.5, 0.5, 5

[experiment]
ladder = 256
samples = 2000
reference = 0.5
)";

const char* kIntegerMixture = R"([base]
kind = iid
seed = 9
weights = 0.25, 0.75

[maps]
symbol0 = beta-map:2
symbol1 = beta-map:3

[observable]
component1 = cos(1)

[numerics]
bins = 512

[experiment]
reference = uniform
tolerance = 1e-12
)";

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("qlab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "t.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, RoundTrip) {
  const auto a = parse_config(kDoublingCos);
  const auto b = parse_config(serialize_config(a));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(serialize_config(a), serialize_config(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(a.bins, 256);
  EXPECT_EQ(a.dim(), 1u);
  EXPECT_EQ(*a.seed, 42u);
}

TEST(Config, RoundTripTableAndRotation) {
  const std::string text = R"([base]
kind = rotation
seed = 1
alpha = 0.1
x0 = 0.25

[maps]
symbol0 = table: 0, 0.5, 1 | 2, 2 | 0, -1
symbol1 = beta-map:2.5

[observable]
component1 = 0.5*table(1; -1; 0.25; 0) + indicator(0, 0.0625)
component2 = sin(2)
modulation = 1, 0.5
)";
  const auto a = parse_config(text);
  const auto b = parse_config(serialize_config(a));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.dim(), 2u);
}

TEST(Config, MissingSeedNamesField) {
  const std::string msg = config_error("[maps]\nsymbol0 = doubling\nsymbol1 = doubling\n[observable]\ncomponent1 = cos\n");
  EXPECT_NE(msg.find("[base] seed"), std::string::npos) << msg;
}

TEST(Config, UnknownCatalogNames) {
  std::string text = kDoublingCos;
  text.replace(text.find("symbol1 = doubling"), 18, "symbol1 = baker");
  EXPECT_NE(config_error(text).find("unknown map 'baker'"), std::string::npos);
  text = kDoublingCos;
  text.replace(text.find("cos(1)"), 6, "sawtooth");
  EXPECT_NE(config_error(text).find("unknown observable"), std::string::npos);
}

TEST(Config, UnknownKeysAndSyntaxErrors) {
  EXPECT_NE(config_error(std::string(kDoublingCos) + "bogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(config_error(std::string(kDoublingCos) + "[extra]\nx = 1\n").find("[extra]"), std::string::npos);
  const std::string msg = config_error("[base]\nseed = 1\nthis line has no equals sign\n");
  EXPECT_NE(msg.find("t.ini:3"), std::string::npos) << msg;
}

TEST(Config, RangeChecks) {
  std::string text = kDoublingCos;
  text.replace(text.find("bins = 256"), 10, "bins = 0");
  EXPECT_NE(config_error(text).find("[numerics] bins"), std::string::npos);
  text = kDoublingCos;
  text.replace(text.find("weights = 0.5, 0.5"), 18, "weights = 0.5, 0.7");
  EXPECT_NE(config_error(text).find("[base] weights"), std::string::npos);
  text = kDoublingCos;
  text.replace(text.find("seed = 42"), 9, "seed = -3");
  EXPECT_NE(config_error(text).find("[base] seed"), std::string::npos);
}

TEST(Config, HashTracksContent) {
  auto a = parse_config(kDoublingCos);
  auto b = a;
  b.seed = 43;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Catalog, ContentsAndOrder) {
  const auto& c = catalog();
  auto has = [&](const std::string& fam, const std::string& name) {
    return std::any_of(c.begin(), c.end(), [&](const auto& e) { return e.family == fam && e.name == name; });
  };
  EXPECT_TRUE(has("map", "beta-map"));
  EXPECT_TRUE(has("observable", "rademacher"));
  const auto rot = std::find_if(c.begin(), c.end(), [](const auto& e) { return e.name == "rotation"; });
  ASSERT_NE(rot, c.end());
  EXPECT_NE(rot->parameters.find("alpha"), std::string::npos);
  for (std::size_t i = 1; i < c.size(); ++i)
    if (c[i].family == c[i - 1].family) EXPECT_LT(c[i - 1].name, c[i].name);
}

TEST(Pipelines, VarianceDoublingCos) {
  const auto dir = scratch("variance");
  const auto r = run_pipeline("variance", parse_config(kDoublingCos), dir);
  EXPECT_TRUE(r.passed());
  EXPECT_NEAR(r.data["sigma2_green_kubo"][0][0].get<double>(), 0.5, 1e-6);
  EXPECT_NEAR(r.data["sigma2_hessian"][0][0].get<double>(), 0.5, 0.01);
  EXPECT_TRUE(fs::exists(dir / "variance.csv"));
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_TRUE(j["provenance"].contains("config_hash"));
  std::set<std::string> names;
  for (const auto& c : j["checks"]) EXPECT_TRUE(names.insert(c["name"].get<std::string>()).second);
}

TEST(Pipelines, AcimIntegerMixture) {
  const auto r = run_pipeline("acim", parse_config(kIntegerMixture), scratch("acim"));
  EXPECT_TRUE(r.passed());
  for (const auto& c : r.checks)
    if (c.name.find("L1 distance") != std::string::npos) EXPECT_EQ(c.observed, 0.0);
}

TEST(Pipelines, CsvArtifactsAreDeterministic) {
  auto cfg = parse_config(kDoublingCos);
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  run_pipeline("clt", cfg, d1);
  cfg.jobs = 3;
  run_pipeline("clt", cfg, d2);
  EXPECT_EQ(slurp(d1 / "clt.csv"), slurp(d2 / "clt.csv"));
  run_pipeline("lambda-surface", cfg, d1);
  run_pipeline("lambda-surface", cfg, d2);
  EXPECT_EQ(slurp(d1 / "lambda.csv"), slurp(d2 / "lambda.csv"));
}

TEST(Pipelines, FormatsSelectArtifacts) {
  auto cfg = parse_config(kDoublingCos);
  cfg.formats = {"json"};
  const auto dir = scratch("formats");
  run_pipeline("lambda-surface", cfg, dir);
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_FALSE(fs::exists(dir / "lambda.csv"));
}

TEST(Pipelines, UnknownSubcommand) {
  EXPECT_THROW(run_pipeline("bogus", parse_config(kDoublingCos), scratch("bogus")), ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.ini") << "[maps]\nsymbol0 = doubling\nsymbol1 = doubling\n[observable]\ncomponent1 = cos\n";
    std::ofstream(dir / "good.ini") << kIntegerMixture;
  }
  const std::string cli = QLAB_CLI;
  auto run = [&](const std::string& args) {
    const int st = std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WEXITSTATUS(st);
  };
  EXPECT_EQ(run("acim --config " + (dir / "bad.ini").string()), 2);
  EXPECT_NE(slurp(dir / "log.txt").find("[base] seed"), std::string::npos);
  EXPECT_EQ(run("acim --config " + (dir / "good.ini").string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "acim.csv"));
  EXPECT_EQ(run("list-catalog"), 0);
  EXPECT_NE(slurp(dir / "log.txt").find("beta-map"), std::string::npos);
}
