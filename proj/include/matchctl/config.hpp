#pragma once

/**
 * @file config.hpp
 * @brief Flat `key = value` run configuration.
 *
 * Grammar (see docs/config.md): one assignment per line, `#` starts a
 * comment, keys are dotted (`sim.dt`), lists are comma separated. Unknown
 * keys and malformed values are errors so that typos cannot silently fall
 * back to defaults.
 */

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "matchctl/control.hpp"
#include "matchctl/errors.hpp"
#include "matchctl/model.hpp"

namespace matchctl {

enum class SystemKind { cartpole, incline, builtin_test };
enum class TauMode { sm3, new_closed_form, new_ode };

inline std::string to_string(SystemKind s) {
  switch (s) {
    case SystemKind::cartpole:
      return "cartpole";
    case SystemKind::incline:
      return "incline";
    case SystemKind::builtin_test:
      return "builtin-test";
  }
  return "?";
}

inline std::string to_string(TauMode t) {
  switch (t) {
    case TauMode::sm3:
      return "sm3";
    case TauMode::new_closed_form:
      return "new-closed-form";
    case TauMode::new_ode:
      return "new-ode";
  }
  return "?";
}

struct RunConfig {
  SystemKind system = SystemKind::cartpole;
  InclineParams params;  // psi is ignored unless system = incline
  GainSelection gains;
  double epsilon = 0.0;  // sm3 branch of the incline only
  TauMode tau_mode = TauMode::new_closed_form;
  double tau_range = 1.3;
  double tau_step = 1e-3;

  struct Sim {
    double dt = 1e-4;
    double t_end = 10.0;
    VecD q0 = VecD::Zero(2);
    VecD v0 = VecD::Zero(2);
    double drift_tol = 1e-6;
    double guard = std::numbers::pi / 2;
  } sim;

  struct Check {
    int grid = 41;
    double x_range = 1.3;
    int samples = 100;
    double v_range = 5.0;
    double tol = 1e-8;
    unsigned long long seed = 1;
  } check;

  struct Sweep {
    std::vector<double> k{35.0};
    std::vector<double> sigma{1.0};
    std::vector<double> rho{1.0};
    double t_end = 2.0;
    double dt = 1e-3;
    int states = 10;
  } sweep;

  std::string out_dir = ".";

  void validate() const {
    params.validate();
    gains.check_finite();
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be positive");
    };
    positive(check.tol, "check.tol");
    positive(check.x_range, "check.x_range");
    positive(check.v_range, "check.v_range");
    positive(sim.dt, "sim.dt");
    positive(sim.t_end, "sim.t_end");
    positive(sim.drift_tol, "sim.drift_tol");
    positive(sim.guard, "sim.guard");
    positive(tau_range, "tau.range");
    positive(tau_step, "tau.step");
    positive(sweep.t_end, "sweep.t_end");
    positive(sweep.dt, "sweep.dt");
    if (check.grid < 2) throw ConfigError("check.grid must be >= 2");
    if (check.samples < 1) throw ConfigError("check.samples must be >= 1");
    if (sweep.states < 1) throw ConfigError("sweep.states must be >= 1");
    if (check.x_range >= std::numbers::pi / 2) throw ConfigError("check.x_range must be below pi/2");
    if (tau_mode == TauMode::sm3 && gains.sigma == 0.0) throw ConfigError("tau.mode = sm3 needs gains.sigma != 0");
    if (system == SystemKind::incline && !(gains.rho > 0.0)) throw ConfigError("gains.rho must be positive");
    if (system != SystemKind::incline && gains.rho != 1.0)
      throw ConfigError("gains.rho applies to the incline only");
    if (sweep.k.empty() || sweep.sigma.empty() || sweep.rho.empty()) throw ConfigError("sweep lists must not be empty");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  // pi, pi/2, optionally followed by "+ number" or "- number"
  for (const auto& [name, base] : {std::pair{std::string("pi/2"), std::numbers::pi / 2}, std::pair{std::string("pi"), std::numbers::pi}}) {
    if (t.rfind(name, 0) != 0) continue;
    const std::string rest = trim(t.substr(name.size()));
    if (rest.empty()) return base;
    if (rest[0] != '+' && rest[0] != '-') break;
    const double off = parse_number(key, rest.substr(1));
    return rest[0] == '+' ? base + off : base - off;
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + t + "'");
  }
  if (used != t.size() || !std::isfinite(v)) throw ConfigError(key + ": expected a number, got '" + t + "'");
  return v;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace detail

// Raw key/value pairs in file order; duplicate keys are errors.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    if (!kv.emplace(key, value).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

inline RunConfig parse_config(std::istream& is) {
  const auto kv = parse_key_values(is);
  RunConfig c;
  auto get = [&kv](const std::string& k) -> std::optional<std::string> {
    const auto it = kv.find(k);
    return it == kv.end() ? std::nullopt : std::optional<std::string>(it->second);
  };
  auto num = [&](const std::string& k, double& dst) {
    if (auto v = get(k)) dst = detail::parse_number(k, *v);
  };
  auto integer = [&](const std::string& k, auto& dst) {
    if (auto v = get(k)) {
      const double d = detail::parse_number(k, *v);
      if (d != std::floor(d) || d < 0 || d > 1e18) throw ConfigError(k + ": expected a non-negative integer");
      dst = static_cast<std::decay_t<decltype(dst)>>(d);
    }
  };
  auto list = [&](const std::string& k, std::vector<double>& dst) {
    if (auto v = get(k)) dst = detail::parse_list(k, *v);
  };

  if (auto s = get("system")) {
    if (*s == "cartpole")
      c.system = SystemKind::cartpole;
    else if (*s == "incline")
      c.system = SystemKind::incline;
    else if (*s == "builtin-test")
      c.system = SystemKind::builtin_test;
    else
      throw ConfigError("system: expected cartpole, incline or builtin-test, got '" + *s + "'");
  }
  if (auto s = get("tau.mode")) {
    if (*s == "sm3")
      c.tau_mode = TauMode::sm3;
    else if (*s == "new-closed-form")
      c.tau_mode = TauMode::new_closed_form;
    else if (*s == "new-ode")
      c.tau_mode = TauMode::new_ode;
    else
      throw ConfigError("tau.mode: expected sm3, new-closed-form or new-ode, got '" + *s + "'");
  }
  num("params.m", c.params.m);
  num("params.M", c.params.M);
  num("params.l", c.params.l);
  num("params.grav", c.params.grav);
  num("params.psi", c.params.psi);
  num("gains.k", c.gains.k);
  num("gains.sigma", c.gains.sigma);
  num("gains.rho", c.gains.rho);
  num("gains.c", c.gains.c);
  num("gains.s0", c.gains.s0);
  num("gains.eps", c.epsilon);
  num("tau.range", c.tau_range);
  num("tau.step", c.tau_step);
  num("sim.dt", c.sim.dt);
  num("sim.t_end", c.sim.t_end);
  num("sim.x0", c.sim.q0(0));
  num("sim.theta0", c.sim.q0(1));
  num("sim.xdot0", c.sim.v0(0));
  num("sim.thetadot0", c.sim.v0(1));
  num("sim.drift_tol", c.sim.drift_tol);
  num("sim.guard", c.sim.guard);
  // angle from the horizontal: x = pi/2 - phi
  if (auto v = get("sim.phi0")) {
    if (get("sim.x0")) throw ConfigError("give sim.x0 or sim.phi0, not both");
    c.sim.q0(0) = std::numbers::pi / 2 - detail::parse_number("sim.phi0", *v);
  }
  if (auto v = get("sim.phidot0")) {
    if (get("sim.xdot0")) throw ConfigError("give sim.xdot0 or sim.phidot0, not both");
    c.sim.v0(0) = -detail::parse_number("sim.phidot0", *v);
  }
  integer("check.grid", c.check.grid);
  num("check.x_range", c.check.x_range);
  integer("check.samples", c.check.samples);
  num("check.v_range", c.check.v_range);
  num("check.tol", c.check.tol);
  integer("check.seed", c.check.seed);
  list("sweep.k", c.sweep.k);
  list("sweep.sigma", c.sweep.sigma);
  list("sweep.rho", c.sweep.rho);
  num("sweep.t_end", c.sweep.t_end);
  num("sweep.dt", c.sweep.dt);
  integer("sweep.states", c.sweep.states);
  if (auto v = get("out.dir")) c.out_dir = *v;

  static const std::set<std::string> known = {
      "system",        "tau.mode",     "tau.range",    "tau.step",      "params.m",     "params.M",
      "params.l",      "params.grav",  "params.psi",   "gains.k",       "gains.sigma",  "gains.rho",
      "gains.c",       "gains.s0",     "gains.eps",    "sim.dt",        "sim.t_end",    "sim.x0",
      "sim.theta0",    "sim.xdot0",    "sim.thetadot0", "sim.phi0",     "sim.phidot0",  "sim.drift_tol",
      "sim.guard",     "check.grid",   "check.x_range", "check.samples", "check.v_range", "check.tol",
      "check.seed",    "sweep.k",      "sweep.sigma",  "sweep.rho",     "sweep.t_end",  "sweep.dt",
      "sweep.states",  "out.dir"};
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown key " + k);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path);
  return parse_config(f);
}

}  // namespace matchctl
