#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "matchctl/cli.hpp"

using namespace matchctl;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = MATCHCTL_CONFIG_DIR;

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation call(std::vector<std::string> args) {
  args.insert(args.begin(), "matchctl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("matchctl_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// base config with some lines replaced or appended
fs::path derived_config(const fs::path& dir, const std::string& base, const std::vector<std::string>& extra) {
  std::ifstream in(kConfigs + "/" + base);
  std::ostringstream text;
  std::string line;
  while (std::getline(in, line)) {
    bool replaced = false;
    for (const auto& e : extra) {
      const auto key = e.substr(0, e.find('='));
      if (line.rfind(key, 0) == 0) replaced = true;
    }
    if (!replaced) text << line << "\n";
  }
  for (const auto& e : extra) text << e << "\n";
  const fs::path p = dir / ("derived_" + base);
  std::ofstream(p) << text.str();
  return p;
}

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Cli, HelmholtzOnCartpoleConfigPasses) {
  const auto r = call({"check-helmholtz", "--config", kConfigs + "/cartpole.cfg", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = Json::parse(r.out);
  EXPECT_TRUE(doc["pass"].get<bool>());
  int classes = 0;
  for (const auto& rep : doc["reports"])
    for (const auto& e : rep["entries"]) {
      if (e["kind"] != "at_most") continue;
      const std::string name = e["name"];
      if (name.rfind("BB", 0) == 0 || name.rfind("AB", 0) == 0 || name.rfind("AA", 0) == 0) ++classes;
      EXPECT_LE(e["normalized"].get<double>(), 1e-8) << name;
    }
  EXPECT_EQ(classes, 12);
}

TEST(Cli, SimulatePaperRun) {
  const auto dir = scratch("simulate");
  const auto r = call({"simulate", "--config", kConfigs + "/cartpole.cfg", "--out", dir.string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = Json::parse(r.out);
  EXPECT_EQ(doc["rows"].get<int>(), 100001);
  EXPECT_TRUE(doc["events"].empty());
  const auto rows = read_csv(dir / "trajectory.csv");
  ASSERT_EQ(rows.size(), 100002u);
  EXPECT_EQ(rows[0].size(), 7u);
  // phi0 = pi/2 - 0.2, phidot0 = 0.1 in the config
  EXPECT_NEAR(std::stod(rows[1][1]), 0.2, 1e-15);
  EXPECT_EQ(std::stod(rows[1][3]), -0.1);
  EXPECT_EQ(std::stod(rows.back()[0]), 10.0);
  const double e0 = std::stod(rows[1][6]);
  double drift = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    drift = std::max(drift, std::abs(std::stod(rows[i][6]) - e0) / std::max(1.0, std::abs(e0)));
  EXPECT_LE(drift, 1e-6);
}

TEST(Cli, SimulateFailsOnDomainExit) {
  const auto dir = scratch("exit");
  // the paper run reaches abs(x) = 0.2043 from x0 = 0.2
  const auto cfg = derived_config(dir, "cartpole.cfg", {"sim.t_end = 3", "sim.dt = 1e-3", "sim.guard = 0.202"});
  const auto r = call({"simulate", "--config", cfg.string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 1);
  std::ifstream f(dir / "trajectory.csv");
  std::string all((std::istreambuf_iterator<char>(f)), {});
  EXPECT_NE(all.find("# event,"), std::string::npos);
}

TEST(Cli, CheckMatchingDistinguishesTauModes) {
  const auto dir = scratch("matching");
  // the closed-form tau solves the Helmholtz route, not M1
  const auto a = call({"check-matching", "--config", kConfigs + "/cartpole.cfg", "--json"});
  EXPECT_EQ(a.code, 1);
  const auto doc = Json::parse(a.out);
  EXPECT_FALSE(doc["reports"][0]["entries"][0]["pass"].get<bool>());
  EXPECT_EQ(doc["reports"][0]["entries"][0]["name"], "M1");
  const auto sm3 = derived_config(dir, "cartpole.cfg", {"tau.mode = sm3"});
  const auto b = call({"check-matching", "--config", sm3.string(), "--grid", "11"});
  EXPECT_EQ(b.code, 0) << b.out << b.err;
}

TEST(Cli, Sm3WithZeroSigmaIsAConfigError) {
  const auto dir = scratch("sm3zero");
  const auto cfg = derived_config(dir, "cartpole.cfg", {"tau.mode = sm3", "gains.sigma = 0"});
  const auto r = call({"check-matching", "--config", cfg.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sigma"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(call({"frobnicate", "--config", kConfigs + "/cartpole.cfg"}).code, 2);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"simulate"}).code, 2);
  EXPECT_EQ(call({"simulate", "--config", kConfigs + "/cartpole.cfg", "--bogus"}).code, 2);
  EXPECT_EQ(call({"simulate", "--config", "/nonexistent/x.cfg"}).code, 2);
  EXPECT_EQ(call({"check-helmholtz", "--config", kConfigs + "/cartpole.cfg", "--tol", "-1"}).code, 2);
  EXPECT_EQ(call({"synthesize-tau", "--config", kConfigs + "/cartpole.cfg", "--out", "/proc/forbidden"}).code, 2);
  const auto help = call({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("check-helmholtz"), std::string::npos);
}

TEST(Cli, SynthesizedTauIsLinearInK) {
  const auto d1 = scratch("tau1"), d2 = scratch("tau2");
  ASSERT_EQ(call({"synthesize-tau", "--config", kConfigs + "/cartpole.cfg", "--out", d1.string()}).code, 0);
  const auto cfg = derived_config(d2, "cartpole.cfg", {"gains.k = 70"});
  ASSERT_EQ(call({"synthesize-tau", "--config", cfg.string(), "--out", d2.string()}).code, 0);
  const auto a = read_csv(d1 / "tau.csv"), b = read_csv(d2 / "tau.csv");
  ASSERT_EQ(a.size(), 42u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    EXPECT_EQ(std::stod(b[i][1]), 2.0 * std::stod(a[i][1]));
    EXPECT_NEAR(std::stod(a[i][2]), std::stod(a[i][1]), 1e-9 * std::abs(std::stod(a[i][1])));
  }
}

TEST(Cli, SweepIsIndependentOfThreadCount) {
  const auto dir = scratch("sweep");
  const auto cfg = derived_config(dir, "cartpole.cfg",
                                  {"sweep.k = 10, 35", "sweep.sigma = 1, 2", "sweep.t_end = 0.5", "sweep.states = 3"});
  ::setenv("MATCHCTL_THREADS", "1", 1);
  const auto one = call({"sweep", "--config", cfg.string(), "--out", (dir / "one").string()});
  ::setenv("MATCHCTL_THREADS", "3", 1);
  const auto three = call({"sweep", "--config", cfg.string(), "--out", (dir / "three").string()});
  ::unsetenv("MATCHCTL_THREADS");
  EXPECT_EQ(one.code, 0) << one.out;
  EXPECT_EQ(three.code, 0);
  const auto a = read_csv(dir / "one" / "sweep.csv"), b = read_csv(dir / "three" / "sweep.csv");
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0][0], "k");
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i][8], "1");
}

TEST(Cli, SweepFlagsGainsBelowTheBound) {
  const auto dir = scratch("sweepfail");
  // gain_bound(0) is about 3.06 for the default cart-pole
  const auto cfg = derived_config(dir, "cartpole.cfg", {"sweep.k = 2, 35", "sweep.sigma = 1", "sweep.t_end = 0.2"});
  const auto r = call({"sweep", "--config", cfg.string(), "--out", dir.string(), "--json"});
  EXPECT_EQ(r.code, 1);
  const auto doc = Json::parse(r.out);
  ASSERT_EQ(doc["rows"].size(), 2u);
  EXPECT_FALSE(doc["rows"][0]["pass"].get<bool>());
  EXPECT_TRUE(doc["rows"][1]["pass"].get<bool>());
  EXPECT_NEAR(doc["rows"][0]["k_min"].get<double>(), 3.05657, 1e-5);
}

TEST(Cli, InclineConfigChecks) {
  EXPECT_EQ(call({"check-helmholtz", "--config", kConfigs + "/incline.cfg", "--seed", "5"}).code, 0);
}

TEST(Config, DefaultsAndValues) {
  const RunConfig c = parse("system = incline\nparams.psi = 0.3 # comment\ngains.rho = 2\nsweep.k = 1, 2,3\n");
  EXPECT_EQ(c.system, SystemKind::incline);
  EXPECT_EQ(c.params.psi, 0.3);
  EXPECT_EQ(c.gains.rho, 2.0);
  EXPECT_EQ(c.sweep.k, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.sim.dt, 1e-4);
  EXPECT_EQ(c.tau_mode, TauMode::new_closed_form);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, AngleExpressions) {
  const RunConfig c = parse("sim.phi0 = pi/2 - 0.2\nsim.phidot0 = 0.1\nsim.guard = pi/2\ncheck.x_range = pi - 2\n");
  EXPECT_NEAR(c.sim.q0(0), 0.2, 1e-15);
  EXPECT_EQ(c.sim.v0(0), -0.1);
  EXPECT_EQ(c.sim.guard, std::numbers::pi / 2);
  EXPECT_EQ(c.check.x_range, std::numbers::pi - 2.0);
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(parse("gains.kk = 3\n"), ConfigError);
  EXPECT_THROW(parse("gains.k = 3\ngains.k = 4\n"), ConfigError);
  EXPECT_THROW(parse("gains.k = 3x\n"), ConfigError);
  EXPECT_THROW(parse("gains.k 3\n"), ConfigError);
  EXPECT_THROW(parse("gains.k =\n"), ConfigError);
  EXPECT_THROW(parse("system = unicycle\n"), ConfigError);
  EXPECT_THROW(parse("tau.mode = magic\n"), ConfigError);
  EXPECT_THROW(parse("check.grid = 4.5\n"), ConfigError);
  EXPECT_THROW(parse("sim.x0 = 0.1\nsim.phi0 = 1\n"), ConfigError);
  EXPECT_THROW(parse("sweep.k = 1,,2\n"), ConfigError);
  EXPECT_THROW(parse("gains.k = nan\n"), ConfigError);
}

TEST(Config, ValidationRules) {
  EXPECT_THROW(parse("tau.mode = sm3\ngains.sigma = 0\n").validate(), ConfigError);
  EXPECT_THROW(parse("gains.rho = 2\n").validate(), ConfigError);
  EXPECT_THROW(parse("check.tol = 0\n").validate(), ConfigError);
  EXPECT_THROW(parse("check.x_range = 1.6\n").validate(), ConfigError);
  EXPECT_THROW(parse("system = incline\ngains.rho = -1\n").validate(), ConfigError);
  EXPECT_THROW(parse("params.m = -1\n").validate(), InvalidArgument);
  EXPECT_NO_THROW(parse("tau.mode = sm3\ngains.sigma = -1\n").validate());
}
