#pragma once

/**
 * @file matching.hpp
 * @brief Pointwise matching-condition residuals and tau synthesis.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "matchctl/errors.hpp"
#include "matchctl/field.hpp"
#include "matchctl/lagrangian.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/model.hpp"
#include "matchctl/report.hpp"

namespace matchctl {

using MatchingReport = ResidualReport;

inline std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw InvalidArgument("linspace: n must be >= 1");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return out;
}

// Tensor grid over [-range, range]^n_shape with `per_axis` points per axis.
inline std::vector<VecD> shape_grid(int n_shape, int per_axis = 41, double range = 1.3) {
  const auto axis = linspace(-range, range, per_axis);
  std::vector<VecD> pts;
  std::vector<int> idx(n_shape, 0);
  while (true) {
    VecD x(n_shape);
    for (int i = 0; i < n_shape; ++i) x(i) = axis[idx[i]];
    pts.push_back(x);
    int k = 0;
    while (k < n_shape && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == n_shape) break;
  }
  return pts;
}

namespace detail {

inline std::vector<MatD> partials(const FieldMatrix& m, const VecD& x) {
  std::vector<MatD> out;
  for (int k = 0; k < x.size(); ++k) out.push_back(m.partial(x, k));
  return out;
}

// d zeta / d x^k by a dual seed.
inline MatD zeta_partial(const MechanicalSystem& sys, const VecD& x, int k) {
  Vec<D1> xd = lift<D1>(x);
  xd(k).eps = 1.0;
  const Mat<D1> z = zeta(sys, xd);
  return detail::map_entries(z, [](const D1& v) { return v.eps; });
}

}  // namespace detail

// M1-M3 at x.
inline MatchingReport matching_residuals(const MechanicalSystem& sys, const ShapingParams& sh, const VecD& x,
                                         double tol = 1e-10) {
  sh.validate(sys);
  const int ns = sys.dims.n_shape;
  const MatD gsg = sys.g_sg.value(x), ggg = sys.g_gg.value(x), T = sh.tau.value(x);
  const MatD sig_inv = inverse(sh.sigma, "sigma");
  const MatD ginv = inverse(ggg, "g_gg");
  const auto dg = detail::partials(sys.g_gg, x);
  const auto dT = detail::partials(sh.tau, x);

  MatchingReport r("matching conditions M1-M3");
  const MatD m1_term = sig_inv * gsg.transpose();
  r.add_residual("M1", max_abs(T + m1_term), std::max(max_abs(T), max_abs(m1_term)), tol);

  double m2 = 0.0, m2s = 0.0;
  for (int a = 0; a < ns; ++a) {
    const MatD t1 = dg[a] * sig_inv, t2 = 2.0 * dg[a] * ginv;
    m2 = std::max(m2, max_abs(t1 - t2));
    m2s = std::max({m2s, max_abs(t1), max_abs(t2)});
  }
  r.add_residual("M2", m2, m2s, tol);

  double m3 = 0.0, m3s = 0.0;
  for (int a = 0; a < ns; ++a)
    for (int b = 0; b < ns; ++b) {
      const VecD t1 = dT[b].col(a), t2 = dT[a].col(b);
      const VecD t3 = ginv * dg[a] * T.col(b);
      m3 = std::max(m3, max_abs(t1 - t2 - t3));
      m3s = std::max({m3s, max_abs(t1), max_abs(t2), max_abs(t3)});
    }
  r.add_residual("M3", m3, m3s, tol);
  return r;
}

// SM1-SM5 at x. SM5 uses the group coordinates `theta` (default 0).
inline MatchingReport simplified_matching_residuals(const MechanicalSystem& sys, const ShapingParams& sh,
                                                    const VecD& x, double tol = 1e-10,
                                                    const VecD* theta = nullptr) {
  sh.validate(sys);
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  const MatD gsg = sys.g_sg.value(x), ggg = sys.g_gg.value(x), T = sh.tau.value(x);
  MatchingReport r("simplified matching conditions SM1-SM5");

  // SM1: sigma = s g_gg, best s in the Frobenius sense.
  const double gg = (ggg.array() * ggg.array()).sum();
  const double s = gg > 0 ? (sh.sigma.array() * ggg.array()).sum() / gg : 0.0;
  r.add_residual("SM1", max_abs(sh.sigma - s * ggg), max_abs(sh.sigma), tol);
  r.add_info("sigma_scalar", s);

  double sm2 = 0.0;
  for (const MatD& d : detail::partials(sys.g_gg, x)) sm2 = std::max(sm2, max_abs(d));
  r.add_residual("SM2", sm2, 0.0, tol);

  if (!r.find("SM1")->pass || s == 0.0) {
    r.add_skipped("SM3", "sigma is not a nonzero multiple of g_gg");
  } else {
    const MatD term = inverse(ggg, "g_gg") * gsg.transpose() / s;
    r.add_residual("SM3", max_abs(T + term), std::max(max_abs(T), max_abs(term)), tol);
  }

  const auto dgs = detail::partials(sys.g_sg, x);
  double sm4 = 0.0, sm4s = 0.0;
  for (int a = 0; a < ns; ++a)
    for (int d = 0; d < ns; ++d) {
      const VecD l = dgs[d].row(a).transpose(), rr = dgs[a].row(d).transpose();
      sm4 = std::max(sm4, max_abs(l - rr));
      sm4s = std::max({sm4s, max_abs(l), max_abs(rr)});
    }
  r.add_residual("SM4", sm4, sm4s, tol);

  if (!sys.breaks_group_symmetry) {
    r.add_skipped("SM5", "potential is group invariant");
  } else {
    VecD q(ns + ng);
    q << x, (theta ? *theta : VecD(VecD::Zero(ng)));
    const MatD H = sys.V.d2(q);
    const MatD P = H.topRightCorner(ns, ng) * inverse(ggg, "g_gg") * gsg.transpose();
    r.add_residual("SM5", max_abs(P - P.transpose()), max_abs(P), tol);
  }
  return r;
}

// GM1-GM4 at x.
inline MatchingReport generalized_matching_residuals(const MechanicalSystem& sys, const ShapingParams& sh,
                                                     const VecD& x, double tol = 1e-10) {
  sh.validate(sys);
  const int ns = sys.dims.n_shape;
  const MatchingReport m = matching_residuals(sys, sh, x, tol);
  MatchingReport r("generalized matching conditions GM1-GM4");
  auto copy_as = [&](const char* to, const char* from) {
    const ResidualEntry* e = m.find(from);
    r.add_residual(to, e->raw, e->scale, tol);
  };
  copy_as("GM1", "M1");
  copy_as("GM2", "M2");

  const MatD T = sh.tau.value(x);
  const MatD varpi = sh.varpi<double>(sys, x);
  const MatD rinv = inverse(sh.g_rho_at<double>(sys, x), "g_rho");
  const MatD Z = detail::zeta<double>(sys, x);
  const auto dT = detail::partials(sh.tau, x);
  const auto dg = detail::partials(sys.g_gg, x);

  double gm3 = 0.0;
  for (int k = 0; k < ns; ++k) gm3 = std::max(gm3, max_abs(sh.varpi_partial<double>(sys, x, k)));
  r.add_residual("GM3", gm3, 0.0, tol);

  std::vector<MatD> dZ;
  for (int k = 0; k < ns; ++k) dZ.push_back(detail::zeta_partial(sys, x, k));
  double gm4 = 0.0, gm4s = 0.0;
  for (int a = 0; a < ns; ++a)
    for (int d = 0; d < ns; ++d) {
      const VecD t1 = dT[d].col(a) - dT[a].col(d);
      const VecD t2 = rinv * varpi * VecD(dZ[d].col(a) - dZ[a].col(d));
      const VecD t3 = rinv * dg[d] * rinv * varpi * Z.col(a);
      const VecD t4 = rinv * dg[a] * T.col(d);
      gm4 = std::max(gm4, max_abs(t1 + t2 - t3 - t4));
      gm4s = std::max({gm4s, max_abs(t1), max_abs(t2), max_abs(t3), max_abs(t4)});
    }
  r.add_residual("GM4", gm4, gm4s, tol);
  return r;
}

// Runs a pointwise checker over a grid and merges by worst case.
template <class Check>
MatchingReport on_grid(const std::vector<VecD>& xs, Check check) {
  MatchingReport r;
  bool first = true;
  for (const VecD& x : xs) {
    MatchingReport p = check(x);
    if (first) {
      r = std::move(p);
      first = false;
    } else {
      r.merge_max(p);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// tau synthesis

// tau^b_alpha = -(1/sigma) g^{ab} g_{alpha a}
inline FieldMatrix sm3_tau(const MechanicalSystem& sys, double sigma) {
  if (sigma == 0.0 || !std::isfinite(sigma)) throw InvalidArgument("sm3_tau: sigma must be finite and nonzero");
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  std::vector<SmoothField> entries;
  for (int b = 0; b < ng; ++b)
    for (int a = 0; a < ns; ++a)
      entries.push_back(SmoothField::from_generic(ns, [sys, sigma, a, b](const auto& x) {
        using S = typename std::decay_t<decltype(x)>::Scalar;
        return S(-1.0 / sigma) * detail::zeta(sys, x)(b, a);
      }));
  return FieldMatrix(ng, ns, std::move(entries));
}

// tau(x) = k sqrt(g11 g22 - g12^2) for dims (1, 1).
inline SmoothField new_tau_closed_form_field(const MechanicalSystem& sys, double k) {
  if (sys.dims.n_shape != 1 || sys.dims.n_group != 1)
    throw DimensionError("the closed-form tau needs one shape and one group coordinate");
  const SmoothField g11 = sys.g_ss(0, 0), g12 = sys.g_sg(0, 0), g22 = sys.g_gg(0, 0);
  struct Jet {
    double v, d, dd;
  };
  auto det = [g11, g12, g22](double x) {
    VecD p(1);
    p(0) = x;
    const double a = g11.value(p), b = g12.value(p), c = g22.value(p);
    const double a1 = g11.d1(p)(0), b1 = g12.d1(p)(0), c1 = g22.d1(p)(0);
    const double a2 = g11.d2(p)(0, 0), b2 = g12.d2(p)(0, 0), c2 = g22.d2(p)(0, 0);
    Jet j{a * c - b * b, a1 * c + a * c1 - 2 * b * b1, a2 * c + 2 * a1 * c1 + a * c2 - 2 * b1 * b1 - 2 * b * b2};
    if (!(j.v > 0.0))
      throw InvalidArgument("new tau: g11 g22 - g12^2 is not positive at x = " + std::to_string(x));
    return j;
  };
  return SmoothField::univariate([det, k](double x) { return k * std::sqrt(det(x).v); },
                                 [det, k](double x) {
                                   const Jet j = det(x);
                                   return k * j.d / (2.0 * std::sqrt(j.v));
                                 },
                                 [det, k](double x) {
                                   const Jet j = det(x);
                                   const double s = std::sqrt(j.v);
                                   return k * (j.dd / (2.0 * s) - j.d * j.d / (4.0 * j.v * s));
                                 });
}

inline FieldMatrix new_tau_field(const MechanicalSystem& sys, double k) {
  return FieldMatrix(1, 1, {new_tau_closed_form_field(sys, k)});
}

inline double new_tau_closed_form(const MechanicalSystem& sys, double k, double x) {
  VecD p(1);
  p(0) = x;
  return new_tau_closed_form_field(sys, k).value(p);
}

struct OdeResidual {
  VecD value;
  double scale = 0.0;
  double normalized() const { return normalize_residual(max_abs(value), scale); }
};

namespace detail {

struct NewTauCoefficients {
  double g11, dg11, kappa0;  // kappa0 = 2 g11 - 2 g1 G^-1 g1
  VecD g1, dg1;
  MatD Ginv;
};

inline NewTauCoefficients new_tau_coefficients(const MechanicalSystem& sys, double x) {
  if (sys.dims.n_shape != 1) throw DimensionError("the tau ODE needs exactly one shape coordinate");
  VecD p(1);
  p(0) = x;
  if (!sys.g_gg.is_constant()) {
    for (const MatD& d : partials(sys.g_gg, p))
      if (max_abs(d) != 0.0) throw InvalidArgument("the tau ODE needs a constant g_gg");
  }
  NewTauCoefficients c;
  c.g11 = sys.g_ss(0, 0).value(p);
  c.dg11 = sys.g_ss(0, 0).d1(p)(0);
  c.g1 = sys.g_sg.value(p).row(0).transpose();
  c.dg1 = sys.g_sg.partial(p, 0).row(0).transpose();
  c.Ginv = inverse(sys.g_gg.value(p), "g_gg");
  c.kappa0 = 2.0 * c.g11 - 2.0 * c.g1.dot(c.Ginv * c.g1);
  return c;
}

// Coefficient of tau' in the solved form M tau' = -b.
inline MatD new_tau_matrix(const NewTauCoefficients& c, const VecD& tau) {
  const double kappa = c.kappa0 - 2.0 * c.g1.dot(tau);
  MatD M = 2.0 * tau * c.g1.transpose();
  M.diagonal().array() += kappa;
  return M;
}

// Solves M tau' = -b for tau'.
inline VecD new_tau_slope(const NewTauCoefficients& c, const VecD& tau, double x) {
  const MatD M = new_tau_matrix(c, tau);
  const VecD b = tau * (2.0 * c.g1.dot(c.Ginv * c.dg1) - c.dg11);
  if (!(rcond_of(M) > 1e-12))
    throw SingularityError("tau_ode", "tau ODE coefficient is singular at x = " + std::to_string(x));
  return M.partialPivLu().solve(VecD(-b));
}

}  // namespace detail

// Residual of the tau ODE system at x (one shape coordinate, constant g_gg).
inline OdeResidual new_tau_ode_residual(const MechanicalSystem& sys, const FieldMatrix& tau, double x) {
  const auto c = detail::new_tau_coefficients(sys, x);
  VecD p(1);
  p(0) = x;
  const VecD t = tau.value(p).col(0);
  const VecD dt = tau.partial(p, 0).col(0);
  const double s1 = 2.0 * c.g1.dot(c.Ginv * c.dg1);
  OdeResidual r;
  r.value = t * s1 + 2.0 * t * c.g1.dot(dt) - t * c.dg11 + 2.0 * c.g11 * dt -
            2.0 * c.g1.dot(c.Ginv * c.g1) * dt - 2.0 * c.g1.dot(t) * dt;
  r.scale = std::max({max_abs(VecD(t * s1)), max_abs(VecD(2.0 * t * c.g1.dot(dt))), max_abs(VecD(t * c.dg11)),
                      max_abs(VecD(2.0 * c.g11 * dt)), max_abs(VecD(2.0 * c.g1.dot(c.Ginv * c.g1) * dt)),
                      max_abs(VecD(2.0 * c.g1.dot(t) * dt))});
  return r;
}

// Solution of the tau ODE sampled on a uniform grid, with cubic Hermite
// interpolation (node slopes taken from the ODE itself).
struct SampledTau {
  std::vector<double> xs;
  std::vector<VecD> tau;
  std::vector<VecD> slope;
  bool halted = false;
  double halt_x = NAN;
  std::string halt_reason;
  FieldMatrix field;  // n_group x 1, defined on [xs.front(), xs.back()]
};

namespace detail {

struct HermiteTable {
  std::vector<double> xs;
  std::vector<double> v, d;

  // value, first and second derivative at x
  std::array<double, 3> eval(double x) const {
    if (xs.size() < 2 || x < xs.front() - 1e-12 || x > xs.back() + 1e-12)
      throw InvalidArgument("interpolated field evaluated outside its sampled range at x = " + std::to_string(x));
    std::size_t i = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
    i = std::clamp<std::size_t>(i, 1, xs.size() - 1) - 1;
    const double h = xs[i + 1] - xs[i], t = (x - xs[i]) / h;
    const double p0 = v[i], p1 = v[i + 1], m0 = d[i] * h, m1 = d[i + 1] * h;
    const double t2 = t * t, t3 = t2 * t;
    const double val = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1;
    const double dv = ((6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1 + (3 * t2 - 2 * t) * m1) / h;
    const double ddv = ((12 * t - 6) * p0 + (6 * t - 4) * m0 + (-12 * t + 6) * p1 + (6 * t - 2) * m1) / (h * h);
    return {val, dv, ddv};
  }

  SmoothField as_field() const {
    auto self = std::make_shared<const HermiteTable>(*this);
    return SmoothField::univariate([self](double x) { return self->eval(x)[0]; },
                                   [self](double x) { return self->eval(x)[1]; },
                                   [self](double x) { return self->eval(x)[2]; });
  }
};

}  // namespace detail

inline SampledTau integrate_new_tau(const MechanicalSystem& sys, const VecD& tau0, double x0, double x_lo,
                                    double x_hi, double step = 1e-3) {
  if (sys.dims.n_shape != 1) throw DimensionError("integrate_new_tau needs exactly one shape coordinate");
  if (tau0.size() != sys.dims.n_group) throw DimensionError("tau0 must have n_group entries");
  if (!(x_lo <= x0 && x0 <= x_hi) || !(step > 0)) throw InvalidArgument("integrate_new_tau: bad range or step");

  SampledTau out;
  auto slope = [&sys](double x, const VecD& t) { return detail::new_tau_slope(detail::new_tau_coefficients(sys, x), t, x); };

  // March from x0 toward `end`; returns samples in marching order (x0 excluded).
  auto march = [&](double end, std::vector<double>& xs, std::vector<VecD>& ts, std::vector<VecD>& ds) -> bool {
    const double len = end - x0;
    if (len == 0.0) return true;
    const int n = static_cast<int>(std::ceil(std::abs(len) / step - 1e-9));
    const double h = len / n;
    double x = x0;
    VecD t = tau0;
    // a sign change of det M between steps means the solution crossed a
    // singular point that the step skipped over
    auto det_at = [&sys](double xx, const VecD& tt) {
      return detail::new_tau_matrix(detail::new_tau_coefficients(sys, xx), tt).determinant();
    };
    double det_prev = det_at(x, t);
    try {
      for (int i = 0; i < n; ++i) {
        const VecD k1 = slope(x, t);
        const VecD k2 = slope(x + h / 2, VecD(t + h / 2 * k1));
        const VecD k3 = slope(x + h / 2, VecD(t + h / 2 * k2));
        const VecD k4 = slope(x + h, VecD(t + h * k3));
        t += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        x = i + 1 == n ? end : x0 + (i + 1) * h;
        if (!t.allFinite()) throw SingularityError("tau_ode", "tau ODE solution blew up at x = " + std::to_string(x));
        const double det_now = det_at(x, t);
        if (det_now * det_prev <= 0.0)
          throw SingularityError("tau_ode", "tau ODE coefficient changes sign near x = " + std::to_string(x));
        det_prev = det_now;
        ds.push_back(slope(x, t));
        xs.push_back(x);
        ts.push_back(t);
      }
    } catch (const SingularityError& e) {
      out.halted = true;
      out.halt_x = x;
      out.halt_reason = e.what();
      return false;
    }
    return true;
  };

  // singular at the initial point: nothing can be integrated, so this throws
  const VecD slope0 = slope(x0, tau0);
  std::vector<double> xb, xf;
  std::vector<VecD> tb, tf, db, df;
  march(x_lo, xb, tb, db);
  march(x_hi, xf, tf, df);
  for (std::size_t i = xb.size(); i-- > 0;) {
    out.xs.push_back(xb[i]);
    out.tau.push_back(tb[i]);
    out.slope.push_back(db[i]);
  }
  out.xs.push_back(x0);
  out.tau.push_back(tau0);
  out.slope.push_back(slope0);
  for (std::size_t i = 0; i < xf.size(); ++i) {
    out.xs.push_back(xf[i]);
    out.tau.push_back(tf[i]);
    out.slope.push_back(df[i]);
  }

  std::vector<SmoothField> entries;
  for (int a = 0; a < sys.dims.n_group; ++a) {
    detail::HermiteTable tab;
    tab.xs = out.xs;
    for (std::size_t i = 0; i < out.xs.size(); ++i) {
      tab.v.push_back(out.tau[i](a));
      tab.d.push_back(out.slope[i](a));
    }
    entries.push_back(tab.as_field());
  }
  out.field = FieldMatrix(sys.dims.n_group, 1, std::move(entries));
  return out;
}

}  // namespace matchctl
