#pragma once

/**
 * @file helmholtz.hpp
 * @brief Pointwise residuals of the three Helmholtz-condition families.
 *
 * Every residual is reported raw and normalized by the largest term entering
 * it, so that a single tolerance works across unit systems.
 */

#include <cmath>
#include <string>
#include <vector>

#include "matchctl/derivatives.hpp"
#include "matchctl/lagrangian.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/report.hpp"

namespace matchctl {

inline constexpr double kDetFloor = 1e-12;

struct SodeTensors {
  VecD gamma;        // Gamma^i
  MatD dgamma_dq;    // dGamma^i/dq^j
  MatD dgamma_dv;    // dGamma^i/dqdot^j
  MatD flow_dgamma;  // Gamma(dGamma^i/dqdot^j)
  MatD nabla;        // -1/2 dGamma^i/dqdot^j
  MatD jacobi;       // Phi^k_j
  double jacobi_scale = 0.0;
};

// Derivative of f along the vector field qdot d/dq + Gamma d/dqdot.
template <template <class> class R>
R<double> flow_derivative(const PolyFn<R, 2>& f, const ExplicitSode& field, const VecD& q, const VecD& v,
                          DerivativeMode mode = DerivativeMode::dual) {
  const VecD z = stack(q, v);
  const VecD w = stack(v, value_at(field.gamma, z));
  return dir1(f, z, w, mode);
}

inline SodeTensors sode_tensors(const ExplicitSode& field, const VecD& q, const VecD& v,
                                DerivativeMode mode = DerivativeMode::dual) {
  const int n = field.n;
  if (q.size() != n || v.size() != n) throw DimensionError("state has the wrong length");
  SodeTensors t;
  const VecD z = stack(q, v);
  t.gamma = value_at(field.gamma, z);
  t.dgamma_dq = block_jacobian(field.gamma, z, 0, mode);
  t.dgamma_dv = block_jacobian(field.gamma, z, 1, mode);
  const VecD w = stack(v, t.gamma);
  t.flow_dgamma.resize(n, n);
  for (int j = 0; j < n; ++j) t.flow_dgamma.col(j) = dir2(field.gamma, z, unit(2 * n, n + j), w, mode);
  t.nabla = -0.5 * t.dgamma_dv;
  const MatD jj = t.dgamma_dv * t.dgamma_dv;
  t.jacobi = t.flow_dgamma - 2.0 * t.dgamma_dq - 0.5 * jj;
  t.jacobi_scale = std::max({max_abs(t.flow_dgamma), 2.0 * max_abs(t.dgamma_dq), 0.5 * max_abs(jj)});
  return t;
}

// Multiplier conditions: symmetry, velocity-derivative symmetry, the
// Gamma-equation and g Phi symmetry. |det g| is informational.
inline ResidualReport explicit_helmholtz_residuals(const ExplicitSode& field, const MatField& multiplier,
                                                   const VecD& q, const VecD& v, double tol = kDefaultTolerance,
                                                   DerivativeMode mode = DerivativeMode::dual,
                                                   double det_floor = kDetFloor) {
  const int n = field.n;
  const VecD z = stack(q, v);
  const MatD g = value_at(multiplier, z);
  if (g.rows() != n || g.cols() != n) throw DimensionError("multiplier must be n x n");
  const SodeTensors t = sode_tensors(field, q, v, mode);
  ResidualReport r("explicit Helmholtz conditions");

  r.add_residual("symmetry", max_abs(MatD(g - g.transpose())), max_abs(g), tol);

  std::vector<MatD> dgv;
  for (int k = 0; k < n; ++k) dgv.push_back(dir1(multiplier, z, unit(2 * n, n + k), mode));
  double vel = 0.0, vel_s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        vel = std::max(vel, std::abs(dgv[k](i, j) - dgv[j](i, k)));
        vel_s = std::max({vel_s, std::abs(dgv[k](i, j)), std::abs(dgv[j](i, k))});
      }
  r.add_residual("velocity_symmetry", vel, vel_s, tol);

  const MatD flow_g = dir1(multiplier, z, stack(v, t.gamma), mode);
  const MatD gn = g * t.nabla, ng = t.nabla.transpose() * g;
  r.add_residual("gamma_equation", max_abs(MatD(flow_g - gn - ng)),
                 std::max({max_abs(flow_g), max_abs(gn), max_abs(ng)}), tol);

  const MatD gphi = g * t.jacobi;
  r.add_residual("jacobi_symmetry", max_abs(MatD(gphi - gphi.transpose())), max_abs(gphi), tol);

  const double det = std::abs(g.determinant());
  r.add_info("abs_det_g", det, det > det_floor ? "" : "below regularity floor");
  return r;
}

// Classical exactness conditions on an implicit system at the jet (q, v, a).
// d/dt is expanded along (v, a, qdddot), qdddot from differentiating
// solve_accel along (v, a).
inline ResidualReport exactness_residuals(const ImplicitSode& sode, const VecD& q, const VecD& v, const VecD& a,
                                          double tol = kDefaultTolerance, DerivativeMode mode = DerivativeMode::dual) {
  const int n = sode.n;
  const VecD z3 = stack(q, v, a);
  const ExplicitSode ex = to_explicit(sode);
  const VecD jerk = dir1(ex.gamma, stack(q, v), stack(v, a), mode);
  const VecD flow = stack(v, a, jerk);

  const MatD Pq = block_jacobian(sode.phi, z3, 0, mode);
  const MatD Pv = block_jacobian(sode.phi, z3, 1, mode);
  const MatD Pa = block_jacobian(sode.phi, z3, 2, mode);
  MatD dPv(n, n), dPa(n, n);
  for (int j = 0; j < n; ++j) {
    dPv.col(j) = dir2(sode.phi, z3, unit(3 * n, n + j), flow, mode);
    dPa.col(j) = dir2(sode.phi, z3, unit(3 * n, 2 * n + j), flow, mode);
  }

  ResidualReport r("exactness conditions");
  r.add_residual("HC1", max_abs(MatD(Pa - Pa.transpose())), max_abs(Pa), tol);
  const MatD hc2 = Pq - Pq.transpose() - 0.5 * (dPv - dPv.transpose());
  r.add_residual("HC2", max_abs(hc2), std::max(max_abs(Pq), 0.5 * max_abs(dPv)), tol);
  const MatD hc3 = Pv + Pv.transpose() - (dPa + dPa.transpose());
  r.add_residual("HC3", max_abs(hc3), std::max(max_abs(Pv), max_abs(dPa)), tol);
  return r;
}

namespace detail {

// Splits a residual matrix by index class (shape/group for row and column)
// and records one entry per class, normalized by the terms of that class.
inline void add_index_classes(ResidualReport& r, const std::string& family, const MatD& res,
                              const std::vector<MatD>& terms, int n_shape, double tol) {
  const int n = static_cast<int>(res.rows());
  static const char* row_names[2] = {"alpha", "a"};
  static const char* col_names[2] = {"beta", "b"};
  for (int ri = 0; ri < 2; ++ri)
    for (int ci = 0; ci < 2; ++ci) {
      const int r0 = ri == 0 ? 0 : n_shape, r1 = ri == 0 ? n_shape : n;
      const int c0 = ci == 0 ? 0 : n_shape, c1 = ci == 0 ? n_shape : n;
      if (r1 <= r0 || c1 <= c0) continue;
      const double raw = max_abs(res.block(r0, c0, r1 - r0, c1 - c0));
      double scale = 0.0;
      for (const MatD& t : terms) scale = std::max(scale, max_abs(t.block(r0, c0, r1 - r0, c1 - c0)));
      r.add_residual(family + "(" + row_names[ri] + "," + col_names[ci] + ")", raw, scale, tol);
    }
}

}  // namespace detail

// Implicit conditions (BB), (AB), (AA) for candidate Legendre components F at
// the jet (q, v, a). With the on-shell overload a = solve_accel(q, v).
inline ResidualReport implicit_helmholtz_residuals_at(const ImplicitSode& sode, const VecField& F, const VecD& q,
                                                      const VecD& v, const VecD& a, int n_shape,
                                                      double tol = kDefaultTolerance,
                                                      DerivativeMode mode = DerivativeMode::dual) {
  const int n = sode.n;
  const VecD z = stack(q, v);
  const VecD z3 = stack(q, v, a);
  const VecD w = stack(v, a);

  const MatD Fq = block_jacobian(F, z, 0, mode);
  const MatD Fv = block_jacobian(F, z, 1, mode);
  const MatD Pq = block_jacobian(sode.phi, z3, 0, mode);
  const MatD Pv = block_jacobian(sode.phi, z3, 1, mode);
  const MatD C = value_at(sode.c_matrix, z);
  const MatD W = inverse(C, "C");

  MatD dFv(n, n), dFq(n, n);
  for (int j = 0; j < n; ++j) {
    dFv.col(j) = dir2(F, z, unit(2 * n, n + j), w, mode);
    dFq.col(j) = dir2(F, z, unit(2 * n, j), w, mode);
  }

  ResidualReport r("implicit Helmholtz conditions");
  const MatD bb = Fv - Fv.transpose();
  detail::add_index_classes(r, "BB", bb, {Fv, MatD(Fv.transpose())}, n_shape, tol);

  const MatD corr_v = Fv * W * Pv;
  const MatD ab = dFv + Fq - Fq.transpose() - corr_v;
  detail::add_index_classes(r, "AB", ab, {dFv, Fq, MatD(Fq.transpose()), corr_v}, n_shape, tol);

  const MatD P = dFq - Fv * W * Pq;
  const MatD aa = P - P.transpose();
  const MatD corr_q = Fv * W * Pq;
  detail::add_index_classes(r, "AA", aa, {dFq, MatD(dFq.transpose()), corr_q, MatD(corr_q.transpose())}, n_shape, tol);
  return r;
}

inline ResidualReport implicit_helmholtz_residuals(const ImplicitSode& sode, const VecField& F, const VecD& q,
                                                   const VecD& v, int n_shape, double tol = kDefaultTolerance,
                                                   DerivativeMode mode = DerivativeMode::dual) {
  const VecD a = solve_accel<double>(sode, q, v);
  return implicit_helmholtz_residuals_at(sode, F, q, v, a, n_shape, tol, mode);
}

}  // namespace matchctl
