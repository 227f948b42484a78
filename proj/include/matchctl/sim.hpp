#pragma once

/**
 * @file sim.hpp
 * @brief Fixed-step RK4 integration of explicit closed loops, energy drift
 * and CSV output.
 */

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "matchctl/errors.hpp"
#include "matchctl/lagrangian.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/model.hpp"

namespace matchctl {

struct SimEvent {
  double t;
  std::string kind;  // domain_exit | non_finite | singularity
};

struct Trajectory {
  int n_shape = 0;
  int n_group = 0;
  std::vector<double> times;
  std::vector<State> states;
  std::vector<VecD> controls;
  std::vector<double> energies;
  std::vector<SimEvent> events;

  std::size_t size() const { return times.size(); }
};

struct Observers {
  // (state, acceleration) -> u; omitted means an empty control column
  std::function<VecD(const State&, const VecD&)> control;
  std::function<double(const State&)> energy;
};

struct SimOptions {
  double dt = 1e-4;
  double t_end = 10.0;
  // halt once |q(guard_index)| >= guard_bound
  std::optional<int> guard_index = 0;
  double guard_bound = std::numbers::pi / 2;
};

namespace detail {

inline bool finite(const State& s) { return s.q.allFinite() && s.qdot.allFinite(); }

}  // namespace detail

// Classical RK4. Samples are taken at t = i dt (computed from i, not
// accumulated); a final shorter step lands exactly on t_end. A state that
// leaves the guard, turns non-finite or hits a singular field ends the run
// with an event; the offending state is not recorded.
inline Trajectory integrate(const ExplicitSode& field, const State& state0, const SimOptions& opt,
                            const Observers& obs = {}, int n_shape = 1) {
  if (!(opt.dt > 0.0) || !(opt.t_end > 0.0)) throw InvalidArgument("integrate: dt and t_end must be positive");
  if (state0.q.size() != field.n || state0.qdot.size() != field.n) throw DimensionError("initial state has the wrong length");
  if (n_shape < 0 || n_shape > field.n) throw DimensionError("n_shape out of range");
  Trajectory tr;
  tr.n_shape = n_shape;
  tr.n_group = field.n - n_shape;
  const long steps = static_cast<long>(std::ceil(opt.t_end / opt.dt - 1e-9));

  auto accel = [&field](const VecD& q, const VecD& v) { return VecD(field.gamma(q, v)); };
  auto outside = [&opt](const State& s) {
    return opt.guard_index && std::abs(s.q(*opt.guard_index)) >= opt.guard_bound;
  };
  auto record = [&](double t, const State& s, const VecD& a) {
    tr.times.push_back(t);
    tr.states.push_back(s);
    tr.controls.push_back(obs.control ? obs.control(s, a) : VecD());
    tr.energies.push_back(obs.energy ? obs.energy(s) : std::numeric_limits<double>::quiet_NaN());
  };

  State s = state0;
  if (!detail::finite(s)) {
    tr.events.push_back({0.0, "non_finite"});
    return tr;
  }
  if (outside(s)) {
    tr.events.push_back({0.0, "domain_exit"});
    return tr;
  }
  double t = 0.0;
  try {
    VecD a = accel(s.q, s.qdot);
    record(0.0, s, a);
    double t_prev = 0.0;
    for (long i = 1; i <= steps; ++i) {
      t = i == steps ? opt.t_end : static_cast<double>(i) * opt.dt;
      const double h = t - t_prev;
      const VecD& k1v = a;
      const VecD& k1q = s.qdot;
      const VecD q2 = s.q + 0.5 * h * k1q, v2 = s.qdot + 0.5 * h * k1v;
      const VecD k2v = accel(q2, v2);
      const VecD q3 = s.q + 0.5 * h * v2, v3 = s.qdot + 0.5 * h * k2v;
      const VecD k3v = accel(q3, v3);
      const VecD q4 = s.q + h * v3, v4 = s.qdot + h * k3v;
      const VecD k4v = accel(q4, v4);
      State next{VecD(s.q + h / 6.0 * (k1q + 2.0 * v2 + 2.0 * v3 + v4)),
                 VecD(s.qdot + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))};
      if (!detail::finite(next)) {
        tr.events.push_back({t, "non_finite"});
        break;
      }
      if (outside(next)) {
        tr.events.push_back({t, "domain_exit"});
        break;
      }
      s = std::move(next);
      a = accel(s.q, s.qdot);
      if (!a.allFinite()) {
        tr.events.push_back({t, "non_finite"});
        break;
      }
      record(t, s, a);
      t_prev = t;
    }
  } catch (const SingularityError&) {
    tr.events.push_back({t, "singularity"});
  } catch (const InvalidArgument&) {
    // fields tabulated on a finite interval throw outside it
    tr.events.push_back({t, "domain_exit"});
  }
  return tr;
}

// max_t |E(t) - E(0)| / max(1, |E(0)|)
inline double energy_drift(const Trajectory& tr) {
  if (tr.energies.empty()) throw InvalidArgument("energy_drift: trajectory has no energy samples");
  const double e0 = tr.energies.front();
  const double scale = std::max(1.0, std::abs(e0));
  double m = 0.0;
  for (double e : tr.energies) {
    const double d = std::abs(e - e0) / scale;
    if (!(d <= m)) m = d;  // NaN propagates
  }
  return m;
}

inline double max_abs_coordinate(const Trajectory& tr, int index) {
  double m = 0.0;
  for (const State& s : tr.states) m = std::max(m, std::abs(s.q(index)));
  return m;
}

namespace detail {

inline void put(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace detail

// Header t,x...,theta...,xdot...,thetadot...,u...,E and one row per sample;
// events follow as "# event,<t>,<kind>" lines. Returns the row count.
inline std::size_t write_csv(const Trajectory& tr, std::ostream& os) {
  const int ns = tr.n_shape, ng = tr.n_group;
  const int nu = ng;  // missing control samples are written as nan
  auto idx = [](const char* base, int i, int n) { return n == 1 ? std::string(base) : base + std::to_string(i + 1); };
  os << "t";
  for (int i = 0; i < ns; ++i) os << ',' << idx("x", i, ns);
  for (int i = 0; i < ng; ++i) os << ',' << idx("theta", i, ng);
  for (int i = 0; i < ns; ++i) os << ',' << idx("xdot", i, ns);
  for (int i = 0; i < ng; ++i) os << ',' << idx("thetadot", i, ng);
  for (int i = 0; i < nu; ++i) os << ',' << idx("u", i, nu);
  os << ",E\n";
  for (std::size_t r = 0; r < tr.size(); ++r) {
    detail::put(os, tr.times[r]);
    for (Eigen::Index i = 0; i < tr.states[r].q.size(); ++i) os << ',', detail::put(os, tr.states[r].q(i));
    for (Eigen::Index i = 0; i < tr.states[r].qdot.size(); ++i) os << ',', detail::put(os, tr.states[r].qdot(i));
    const VecD& u = tr.controls[r];
    for (int i = 0; i < nu; ++i) os << ',', detail::put(os, i < u.size() ? u(i) : std::numeric_limits<double>::quiet_NaN());
    os << ',';
    detail::put(os, tr.energies[r]);
    os << '\n';
  }
  for (const SimEvent& e : tr.events) {
    os << "# event,";
    detail::put(os, e.t);
    os << ',' << e.kind << '\n';
  }
  if (!os) throw IoError("write_csv: stream failure");
  return tr.size();
}

inline std::size_t write_csv(const Trajectory& tr, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  const std::size_t rows = write_csv(tr, f);
  f.flush();
  if (!f) throw IoError("write to " + path + " failed");
  return rows;
}

}  // namespace matchctl
