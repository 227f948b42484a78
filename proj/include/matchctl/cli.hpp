#pragma once

/**
 * @file cli.hpp
 * @brief Subcommands of the matchctl tool.
 *
 * Exit codes: 0 success, 1 a residual or simulation check failed, 2 usage or
 * configuration error. Text goes to `out`; with --json a single JSON
 * document is printed instead.
 */

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matchctl/config.hpp"
#include "matchctl/control.hpp"
#include "matchctl/helmholtz.hpp"
#include "matchctl/matching.hpp"
#include "matchctl/sim.hpp"

namespace matchctl {

using Json = nlohmann::json;

inline Json to_json(const ResidualReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries()) {
    Json j{{"name", e.name}, {"kind", to_string(e.kind)}, {"pass", e.pass}};
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    j["raw"] = num(e.raw);
    j["scale"] = num(e.scale);
    j["normalized"] = num(e.normalized);
    j["tolerance"] = num(e.tolerance);
    if (!e.note.empty()) j["note"] = e.note;
    entries.push_back(std::move(j));
  }
  return Json{{"title", r.title()}, {"pass", r.pass()}, {"entries", std::move(entries)}};
}

// ---------------------------------------------------------------------------
// System, shaping and closed loop from a configuration

struct Setup {
  RunConfig cfg;
  MechanicalSystem sys;
  ShapingParams sh;
  ExplicitSode loop;
  std::array<double, 2> interval;  // where the closed loop is regular, with a margin
  VecD theta0;                     // reference group position of the shaped potential
};

inline MechanicalSystem system_of(const RunConfig& c) {
  switch (c.system) {
    case SystemKind::cartpole:
      return cartpole_system(c.params);
    case SystemKind::incline:
      return incline_system(c.params);
    case SystemKind::builtin_test: {
      CartpoleParams unit;
      unit.m = unit.M = unit.l = unit.grav = 1.0;
      return cartpole_system(unit);
    }
  }
  throw ConfigError("unknown system");
}

inline FieldMatrix tau_of(const RunConfig& c, const MechanicalSystem& sys) {
  switch (c.tau_mode) {
    case TauMode::sm3:
      return sm3_tau(sys, c.gains.sigma);
    case TauMode::new_closed_form:
      return new_tau_field(sys, c.gains.k);
    case TauMode::new_ode: {
      const VecD tau0 = VecD::Constant(1, new_tau_closed_form(sys, c.gains.k, 0.0));
      const SampledTau st = integrate_new_tau(sys, tau0, 0.0, -c.tau_range, c.tau_range, c.tau_step);
      if (st.halted) throw ConfigError("tau ODE halted: " + st.halt_reason);
      return st.field;
    }
  }
  throw ConfigError("unknown tau mode");
}

inline Setup build_setup(const RunConfig& c) {
  c.validate();
  Setup s{c, system_of(c), {}, {}, {}, VecD::Zero(1)};
  const double ggg = s.sys.g_gg.value(VecD::Zero(1))(0, 0);
  s.sh = ShapingParams::special(tau_of(c, s.sys), MatD::Constant(1, 1, c.gains.sigma * ggg));
  const double limit = c.tau_mode == TauMode::new_ode ? c.tau_range : std::numbers::pi / 2;
  if (c.system == SystemKind::incline) {
    s.sh.with_rho(c.gains.rho);
    s.theta0(0) = c.gains.s0;
    auto iv = regular_interval(s.sys, s.sh, limit);
    if (c.tau_mode == TauMode::sm3) {
      s.sh.with_v_eps(incline_sm3_veps(c.params, c.gains.sigma, c.gains.rho, c.epsilon), c.epsilon);
    } else {
      InclineVeps veps(c.params, s.sh.tau, c.gains, iv[0] + 0.01, iv[1] - 0.01);
      s.sh.with_v_eps(veps.field());
    }
  }
  auto iv = regular_interval(s.sys, s.sh, limit);
  const double margin = 0.02;
  s.interval = {std::max(iv[0] + margin, -c.sim.guard), std::min(iv[1] - margin, c.sim.guard)};
  if (c.system == SystemKind::cartpole && c.tau_mode == TauMode::new_closed_form)
    s.loop = cartpole_closed_loop(c.params, c.gains.k);
  else
    s.loop = to_explicit(controlled_implicit_sode(s.sys, s.sh));
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands

struct CommandResult {
  int code = 0;
  Json doc;
  std::string text;
};

inline Json config_summary(const RunConfig& c) {
  return Json{{"system", to_string(c.system)},
              {"tau_mode", to_string(c.tau_mode)},
              {"k", c.gains.k},
              {"sigma", c.gains.sigma},
              {"rho", c.gains.rho},
              {"c", c.gains.c},
              {"s0", c.gains.s0},
              {"psi", c.system == SystemKind::incline ? c.params.psi : 0.0}};
}

inline CommandResult cmd_check_matching(const RunConfig& c) {
  const Setup s = build_setup(c);
  std::vector<VecD> xs;
  for (double x : linspace(std::max(-c.check.x_range, s.interval[0]), std::min(c.check.x_range, s.interval[1]),
                           c.check.grid))
    xs.push_back(VecD::Constant(1, x));
  const bool generalized = s.sh.has_varpi() || s.sh.v_eps.has_value();
  std::vector<ResidualReport> reports;
  reports.push_back(on_grid(xs, [&](const VecD& x) { return matching_residuals(s.sys, s.sh, x, c.check.tol); }));
  if (generalized) {
    reports.push_back(
        on_grid(xs, [&](const VecD& x) { return generalized_matching_residuals(s.sys, s.sh, x, c.check.tol); }));
  } else {
    reports.push_back(on_grid(xs, [&](const VecD& x) {
      return simplified_matching_residuals(s.sys, s.sh, x, c.check.tol, &s.theta0);
    }));
  }
  // the M1-M3 report decides: SM/GM are sufficient conditions, not necessary ones
  CommandResult r;
  r.code = reports[0].pass() ? 0 : 1;
  r.doc = Json{{"command", "check-matching"}, {"config", config_summary(c)}, {"grid", c.check.grid},
               {"pass", r.code == 0}, {"reports", Json::array()}};
  for (const auto& rep : reports) {
    r.doc["reports"].push_back(to_json(rep));
    r.text += rep.to_text();
  }
  return r;
}

inline std::vector<State> sample_states(const Setup& s, int n, unsigned long long seed, double x_range,
                                        double v_range) {
  std::mt19937_64 rng(seed);
  const double lo = std::max(-x_range, s.interval[0]), hi = std::min(x_range, s.interval[1]);
  std::uniform_real_distribution<double> ux(lo, hi), ut(-1.0, 1.0), uv(-v_range, v_range);
  std::vector<State> out;
  for (int i = 0; i < n; ++i) {
    State st{VecD(2), VecD(2)};
    st.q << ux(rng), s.theta0(0) + ut(rng);
    st.qdot << uv(rng), uv(rng);
    out.push_back(st);
  }
  return out;
}

inline std::array<ResidualReport, 2> helmholtz_reports(const Setup& s, const std::vector<State>& states, double tol) {
  const auto sode = controlled_implicit_sode(s.sys, s.sh);
  const auto F = legendre_field(s.sys, s.sh);
  const auto g = controlled_multiplier_field(s.sys, s.sh);
  ResidualReport imp("implicit Helmholtz conditions (worst over states)");
  ResidualReport exp("explicit Helmholtz conditions with the shaped multipliers (worst over states)");
  for (const State& st : states) {
    imp.merge_max(implicit_helmholtz_residuals(sode, F, st.q, st.qdot, 1, tol));
    exp.merge_max(explicit_helmholtz_residuals(s.loop, g, st.q, st.qdot, tol));
  }
  return {imp, exp};
}

inline CommandResult cmd_check_helmholtz(const RunConfig& c) {
  const Setup s = build_setup(c);
  const auto states = sample_states(s, c.check.samples, c.check.seed, c.check.x_range, c.check.v_range);
  const auto reps = helmholtz_reports(s, states, c.check.tol);
  CommandResult r;
  r.code = reps[0].pass() && reps[1].pass() ? 0 : 1;
  r.doc = Json{{"command", "check-helmholtz"}, {"config", config_summary(c)}, {"samples", c.check.samples},
               {"seed", c.check.seed}, {"pass", r.code == 0}, {"reports", {to_json(reps[0]), to_json(reps[1])}}};
  r.text = reps[0].to_text() + reps[1].to_text();
  return r;
}

inline std::filesystem::path ensure_out_dir(const RunConfig& c) {
  std::filesystem::path p(c.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + c.out_dir + ": " + ec.message());
  return p;
}

inline CommandResult cmd_synthesize_tau(const RunConfig& c) {
  c.validate();
  const MechanicalSystem sys = system_of(c);
  const double range = std::min(c.tau_range, c.check.x_range);
  const VecD tau0 = VecD::Constant(1, new_tau_closed_form(sys, c.gains.k, 0.0));
  const SampledTau st = integrate_new_tau(sys, tau0, 0.0, -range, range, c.tau_step);
  const FieldMatrix closed = new_tau_field(sys, c.gains.k);
  std::optional<FieldMatrix> sm3;
  if (c.gains.sigma != 0.0) sm3 = sm3_tau(sys, c.gains.sigma);

  const auto dir = ensure_out_dir(c);
  const auto path = dir / "tau.csv";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "x,tau_closed_form,tau_ode,ode_residual_closed_form,tau_sm3\n";
  ResidualReport rep("tau synthesis");
  double sup = 0.0, worst_res = 0.0;
  char buf[160];
  for (double x : linspace(-range, range, c.check.grid)) {
    const VecD xv = VecD::Constant(1, x);
    const double tc = closed.value(xv)(0, 0);
    const double to = st.halted && (x > st.xs.back() || x < st.xs.front()) ? NAN : st.field.value(xv)(0, 0);
    const double res = new_tau_ode_residual(sys, closed, x).normalized();
    sup = std::max(sup, std::abs(tc - to));
    worst_res = std::max(worst_res, res);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", x, tc, to, res,
                  sm3 ? sm3->value(xv)(0, 0) : NAN);
    f << buf;
  }
  if (!f) throw IoError("write to " + path.string() + " failed");
  rep.add_residual("ode_vs_closed_form_sup", sup, 1.0, c.check.tol);
  rep.add_residual("closed_form_ode_residual", worst_res, 1.0, c.check.tol);
  if (st.halted) rep.add_skipped("ode_halted", st.halt_reason);
  CommandResult r;
  Json gains{{"k", c.gains.k}, {"sigma", c.gains.sigma}};
  if (c.system == SystemKind::cartpole) {
    const double kmin = gain_bound(c.params, 0.0);
    gains["k_min_at_0"] = kmin;
    rep.add_lower_bound("k_minus_k_min_at_0", c.gains.k - kmin, 0.0);
  }
  r.code = rep.pass() ? 0 : 1;
  r.doc = Json{{"command", "synthesize-tau"}, {"config", config_summary(c)}, {"gains", gains},
               {"csv", path.string()}, {"pass", r.code == 0}, {"reports", {to_json(rep)}}};
  r.text = rep.to_text() + "  samples written to " + path.string() + "\n";
  return r;
}

struct SimOutcome {
  Trajectory traj;
  double drift = NAN;
  double max_abs_x = NAN;
};

inline SimOutcome simulate_setup(const Setup& s, double dt, double t_end) {
  const ShapedPotential pot(s.sys, s.sh, s.loop, s.interval[0], s.interval[1], s.theta0);
  const SmoothField V = pot.field();
  Observers obs;
  obs.energy = [&](const State& st) { return shaped_energy(s.sys, s.sh, V, st); };
  if (!s.sh.has_varpi() && !s.sh.v_eps) {
    obs.control = [&](const State& st, const VecD&) { return position_feedback_control(s.sys, s.sh.tau, st.q); };
  } else {
    obs.control = [&](const State& st, const VecD& a) { return feedback_control(s.sys, s.sh, st, a); };
  }
  SimOptions o;
  o.dt = dt;
  o.t_end = t_end;
  o.guard_bound = s.cfg.sim.guard;
  SimOutcome out;
  out.traj = integrate(s.loop, State{s.cfg.sim.q0, s.cfg.sim.v0}, o, obs, 1);
  if (!out.traj.energies.empty()) out.drift = energy_drift(out.traj);
  out.max_abs_x = max_abs_coordinate(out.traj, 0);
  return out;
}

inline CommandResult cmd_simulate(const RunConfig& c) {
  const Setup s = build_setup(c);
  const SimOutcome sim = simulate_setup(s, c.sim.dt, c.sim.t_end);
  const auto dir = ensure_out_dir(c);
  const auto path = dir / "trajectory.csv";
  const std::size_t rows = write_csv(sim.traj, path.string());
  ResidualReport rep("simulation");
  rep.add_residual("energy_drift", std::isfinite(sim.drift) ? sim.drift : INFINITY, 1.0, c.sim.drift_tol);
  rep.add_residual("events", static_cast<double>(sim.traj.events.size()), 1.0, 0.0);
  rep.add_info("max_abs_x", sim.max_abs_x);
  rep.add_info("t_final", sim.traj.times.empty() ? 0.0 : sim.traj.times.back());
  CommandResult r;
  r.code = rep.pass() ? 0 : 1;
  Json events = Json::array();
  for (const auto& e : sim.traj.events) events.push_back({{"t", e.t}, {"kind", e.kind}});
  r.doc = Json{{"command", "simulate"}, {"config", config_summary(c)}, {"csv", path.string()},
               {"rows", rows},        {"events", events},             {"pass", r.code == 0},
               {"reports", {to_json(rep)}}};
  r.text = rep.to_text() + "  " + std::to_string(rows) + " rows written to " + path.string() + "\n";
  return r;
}

struct SweepRow {
  double k = 0, sigma = 0, rho = 0;
  double k_min = NAN;
  double min_eig = NAN;
  double helmholtz = NAN;
  double drift = NAN;
  std::size_t events = 0;
  bool pass = false;
  std::string error;
};

inline int sweep_threads(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MATCHCTL_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

inline SweepRow sweep_one(RunConfig c, double k, double sigma, double rho, unsigned long long seed) {
  SweepRow row;
  row.k = k;
  row.sigma = sigma;
  row.rho = rho;
  try {
    c.gains.k = k;
    c.gains.sigma = sigma;
    c.gains.rho = rho;
    const Setup s = build_setup(c);
    bool ok = true;
    if (c.system == SystemKind::cartpole) {
      row.k_min = gain_bound(c.params, 0.0);
      ok = ok && k > row.k_min;
    }
    row.min_eig = INFINITY;
    for (double x : linspace(s.interval[0], s.interval[1], c.check.grid))
      row.min_eig = std::min(row.min_eig, shaped_multipliers(s.sys, s.sh, VecD::Constant(2, x)).min_eigenvalue);
    ok = ok && row.min_eig > 0.0;
    const auto reps = helmholtz_reports(s, sample_states(s, c.sweep.states, seed, c.check.x_range, c.check.v_range),
                                        c.check.tol);
    row.helmholtz = 0.0;
    for (const auto& rep : reps)
      for (const auto& e : rep.entries())
        if (e.kind == CheckKind::at_most) row.helmholtz = std::max(row.helmholtz, e.normalized);
    ok = ok && reps[0].pass() && reps[1].pass();
    const SimOutcome sim = simulate_setup(s, c.sweep.dt, c.sweep.t_end);
    row.drift = sim.drift;
    row.events = sim.traj.events.size();
    ok = ok && row.events == 0 && sim.drift <= c.sim.drift_tol;
    row.pass = ok;
  } catch (const std::exception& e) {
    row.error = e.what();
    row.pass = false;
  }
  return row;
}

inline CommandResult cmd_sweep(const RunConfig& c) {
  c.validate();
  std::vector<std::array<double, 3>> combos;
  const std::vector<double> rhos = c.system == SystemKind::incline ? c.sweep.rho : std::vector<double>{1.0};
  for (double k : c.sweep.k)
    for (double s : c.sweep.sigma)
      for (double r : rhos) combos.push_back({k, s, r});
  std::vector<SweepRow> rows(combos.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < combos.size(); i = next++)
      rows[i] = sweep_one(c, combos[i][0], combos[i][1], combos[i][2], c.check.seed + i);
  };
  const int nt = sweep_threads(combos.size());
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const auto dir = ensure_out_dir(c);
  const auto path = dir / "sweep.csv";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "k,sigma,rho,k_min,min_eig_gtilde,helmholtz_max,drift,events,pass,error\n";
  Json jrows = Json::array();
  bool all = true;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%d,", r.k, r.sigma, r.rho, r.k_min,
                  r.min_eig, r.helmholtz, r.drift, r.events, r.pass ? 1 : 0);
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    f << buf << err << "\n";
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    jrows.push_back({{"k", r.k}, {"sigma", r.sigma}, {"rho", r.rho}, {"k_min", num(r.k_min)},
                     {"min_eig_gtilde", num(r.min_eig)}, {"helmholtz_max", num(r.helmholtz)},
                     {"drift", num(r.drift)}, {"events", r.events}, {"pass", r.pass}, {"error", r.error}});
    all = all && r.pass;
  }
  if (!f) throw IoError("write to " + path.string() + " failed");
  CommandResult res;
  res.code = all ? 0 : 1;
  res.doc = Json{{"command", "sweep"}, {"config", config_summary(c)}, {"threads", nt}, {"csv", path.string()},
                 {"pass", all}, {"rows", jrows}};
  std::ostringstream os;
  os << "sweep: " << rows.size() << " combinations on " << nt << (nt == 1 ? " thread, " : " threads, ")
     << std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return r.pass; }) << " pass\n";
  for (const auto& r : rows)
    os << "  k=" << r.k << " sigma=" << r.sigma << " rho=" << r.rho << (r.pass ? "  ok" : "  FAIL")
       << (r.error.empty() ? "" : "  (" + r.error + ")") << "\n";
  os << "  rows written to " << path.string() << "\n";
  res.text = os.str();
  return res;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Controlled-Lagrangian matching and Helmholtz checks", "matchctl"};
  app.require_subcommand(1);
  std::string config_path;
  bool json = false;
  std::string out_dir;
  double tol = 0.0;
  int grid = 0;
  unsigned long long seed = 0;
  bool seed_given = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"check-matching", "evaluate the matching conditions on a shape grid"},
      {"check-helmholtz", "evaluate Helmholtz conditions of the closed loop at random states"},
      {"synthesize-tau", "sample tau from the closed form and from its ODE"},
      {"simulate", "integrate the closed loop and write a trajectory CSV"},
      {"sweep", "cross gain lists and summarise each combination"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_flag("--json", json, "print one JSON document instead of text");
    sub->add_option("--out", out_dir, "output directory (overrides out.dir)");
    sub->add_option("--tol", tol, "residual tolerance (overrides check.tol)");
    sub->add_option("--grid", grid, "grid points per axis (overrides check.grid)");
    sub->add_option("--seed", seed, "random-state seed (overrides check.seed)")->each([&](const std::string&) {
      seed_given = true;
    });
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  std::string name;
  for (auto* s : subs)
    if (s->parsed()) name = s->get_name();

  try {
    RunConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (tol != 0.0) cfg.check.tol = tol;
    if (grid != 0) cfg.check.grid = grid;
    if (seed_given) cfg.check.seed = seed;
    if (tol < 0.0) throw ConfigError("--tol must be positive");
    if (grid < 0) throw ConfigError("--grid must be positive");
    cfg.validate();

    CommandResult r;
    if (name == "check-matching")
      r = cmd_check_matching(cfg);
    else if (name == "check-helmholtz")
      r = cmd_check_helmholtz(cfg);
    else if (name == "synthesize-tau")
      r = cmd_synthesize_tau(cfg);
    else if (name == "simulate")
      r = cmd_simulate(cfg);
    else
      r = cmd_sweep(cfg);
    if (json)
      out << r.doc.dump(2) << "\n";
    else
      out << r.text;
    return r.code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "output error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace matchctl
