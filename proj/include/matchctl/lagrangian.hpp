#pragma once

/**
 * @file lagrangian.hpp
 * @brief Euler-Lagrange expressions, controlled Lagrangians, Legendre
 * transforms and the controlled second-order system.
 *
 * Everything is templated on the scalar so the same code runs at double and
 * at dual numbers. Metric fields may be differentiated once by a dual seed on
 * q; expressions containing metric derivatives (Phi, Gamma) must not receive
 * two seeds on q (see field.hpp).
 */

#include <optional>
#include <string>

#include "matchctl/derivatives.hpp"
#include "matchctl/errors.hpp"
#include "matchctl/field.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/model.hpp"
#include "matchctl/poly_function.hpp"

namespace matchctl {

enum class RhoKind { special, scalar, general };

struct ShapingParams {
  FieldMatrix tau;  // tau^a_alpha: n_group x n_shape, fields of x
  MatD sigma;       // sigma_ab, constant
  RhoKind rho_kind = RhoKind::special;
  double rho = 1.0;
  FieldMatrix g_rho;  // RhoKind::general only, fields of x
  std::optional<SmoothField> v_eps;
  double epsilon = 0.0;

  static ShapingParams unshaped(const MechanicalSystem& sys) {
    return special(FieldMatrix::zero(sys.dims.n_group, sys.dims.n_shape, sys.dims.n_shape),
                   MatD::Zero(sys.dims.n_group, sys.dims.n_group));
  }

  static ShapingParams special(FieldMatrix tau, MatD sigma) {
    ShapingParams s;
    s.tau = std::move(tau);
    s.sigma = std::move(sigma);
    return s;
  }

  ShapingParams& with_rho(double r) {
    if (!(r != 0.0 && std::isfinite(r))) throw InvalidArgument("rho must be finite and nonzero");
    rho_kind = RhoKind::scalar;
    rho = r;
    return *this;
  }

  ShapingParams& with_g_rho(FieldMatrix m) {
    rho_kind = RhoKind::general;
    g_rho = std::move(m);
    return *this;
  }

  ShapingParams& with_v_eps(SmoothField v, double eps = 0.0) {
    v_eps = std::move(v);
    epsilon = eps;
    return *this;
  }

  bool has_varpi() const {
    return rho_kind == RhoKind::general || (rho_kind == RhoKind::scalar && rho != 1.0);
  }

  // rho when g_rho = rho g_gg, otherwise empty.
  std::optional<double> scalar_rho() const {
    if (rho_kind == RhoKind::general) return std::nullopt;
    return rho_kind == RhoKind::scalar ? rho : 1.0;
  }

  template <class S>
  Mat<S> g_rho_at(const MechanicalSystem& sys, const Vec<S>& x) const {
    if (rho_kind == RhoKind::general) return g_rho.eval(x);
    const Mat<S> ggg = sys.g_gg.eval(x);
    return rho_kind == RhoKind::scalar ? Mat<S>(S(rho) * ggg) : ggg;
  }

  // varpi_ab = (g_rho)_ab - g_ab
  template <class S>
  Mat<S> varpi(const MechanicalSystem& sys, const Vec<S>& x) const {
    return g_rho_at(sys, x) - sys.g_gg.eval(x);
  }

  template <class S>
  Mat<S> varpi_partial(const MechanicalSystem& sys, const Vec<S>& x, int k) const {
    if (rho_kind == RhoKind::general) return g_rho.partial(x, k) - sys.g_gg.partial(x, k);
    return S(rho_kind == RhoKind::scalar ? rho - 1.0 : 0.0) * sys.g_gg.partial(x, k);
  }

  void validate(const MechanicalSystem& sys) const {
    const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
    if (tau.rows() != ng || tau.cols() != ns || tau.arity() != ns)
      throw DimensionError("tau must be an n_group x n_shape matrix of shape fields");
    if (sigma.rows() != ng || sigma.cols() != ng) throw DimensionError("sigma must be n_group x n_group");
    if (asymmetry(sigma) != 0.0) throw InvalidArgument("sigma must be symmetric");
    if (rho_kind == RhoKind::general && (g_rho.rows() != ng || g_rho.cols() != ng || g_rho.arity() != ns))
      throw DimensionError("g_rho must be an n_group x n_group matrix of shape fields");
    if (v_eps && v_eps->arity() != sys.n()) throw DimensionError("V_eps must take all coordinates");
  }
};

// ---------------------------------------------------------------------------
// Given Lagrangian

template <class S>
S lagrangian_value(const MechanicalSystem& sys, const Vec<S>& q, const Vec<S>& v) {
  return S(0.5) * v.dot(sys.metric(q) * v) - sys.potential(q);
}

inline double lagrangian_value(const MechanicalSystem& sys, const State& st) {
  return lagrangian_value<double>(sys, st.q, st.qdot);
}

// Euler-Lagrange expression d/dt dL/dqdot - dL/dq evaluated at (q, v, a).
template <class S>
Vec<S> el_residual(const MechanicalSystem& sys, const Vec<S>& q, const Vec<S>& v, const Vec<S>& a) {
  const int n = sys.n(), ns = sys.dims.n_shape;
  Vec<S> phi = sys.metric(q) * a + sys.potential_gradient(q);
  for (int k = 0; k < ns; ++k) {
    const Mat<S> dg = sys.metric_partial(q, k);
    phi += dg * v * v(k);
    phi(k) -= S(0.5) * v.dot(dg * v);
  }
  (void)n;
  return phi;
}

inline VecD el_residual(const MechanicalSystem& sys, const State& st, const VecD& accel) {
  if (accel.size() != sys.n()) throw DimensionError("acceleration has the wrong length");
  return el_residual<double>(sys, st.q, st.qdot, accel);
}

// ---------------------------------------------------------------------------
// Controlled Lagrangian

namespace detail {

// zeta^a_alpha = g^{ac} g_{alpha c}, as an n_group x n_shape matrix.
template <class S>
Mat<S> zeta(const MechanicalSystem& sys, const Vec<S>& x) {
  const Mat<S> ggg = sys.g_gg.eval(x);
  const Mat<S> gsg = sys.g_sg.eval(x);
  require_regular(ggg, "g_gg");
  return ggg.partialPivLu().solve(Mat<S>(gsg.transpose()));
}

}  // namespace detail

template <class S>
S controlled_kinetic(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q, const Vec<S>& v) {
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  const Vec<S> x = shape_part(q, ns);
  const Vec<S> xd = v.head(ns);
  const Mat<S> T = sh.tau.eval(x);
  const Vec<S> tx = T * xd;
  Vec<S> vs(ns + ng);
  vs << xd, Vec<S>(v.tail(ng) + tx);
  S k = S(0.5) * vs.dot(sys.metric_of_shape(x) * vs) + S(0.5) * tx.dot(lift<S>(sh.sigma) * tx);
  if (sh.has_varpi()) {
    const Vec<S> w = v.tail(ng) + detail::zeta(sys, x) * xd + tx;
    k += S(0.5) * w.dot(sh.varpi(sys, x) * w);
  }
  return k;
}

template <class S>
S controlled_potential(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q) {
  S p = sys.potential(q);
  if (sh.v_eps) p += (*sh.v_eps)(q);
  return p;
}

template <class S>
S controlled_lagrangian_value(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q, const Vec<S>& v) {
  return controlled_kinetic(sys, sh, q, v) - controlled_potential(sys, sh, q);
}

inline double controlled_lagrangian_value(const MechanicalSystem& sys, const ShapingParams& sh, const State& st) {
  sh.validate(sys);
  return controlled_lagrangian_value<double>(sys, sh, st.q, st.qdot);
}

// Legendre components (F_alpha, F_a) of the controlled Lagrangian, written
// out blockwise.
template <class S>
Vec<S> legendre_transform(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q, const Vec<S>& v) {
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  const Vec<S> x = shape_part(q, ns);
  const Vec<S> xd = v.head(ns), th = v.tail(ng);
  const Mat<S> T = sh.tau.eval(x);
  const Mat<S> gss = sys.g_ss.eval(x), gsg = sys.g_sg.eval(x), ggg = sys.g_gg.eval(x);
  const Mat<S> sig = lift<S>(sh.sigma);
  const Mat<S> gsgT = gsg * T;
  const Mat<S> horiz = gss + gsgT + Mat<S>(gsgT.transpose()) + T.transpose() * ggg * T + T.transpose() * sig * T;
  Vec<S> F(ns + ng);
  F.head(ns) = horiz * xd + (gsg + T.transpose() * ggg) * th;
  F.tail(ng) = (Mat<S>(gsg.transpose()) + ggg * T) * xd + ggg * th;
  if (sh.has_varpi()) {
    const Mat<S> zt = detail::zeta(sys, x) + T;
    const Vec<S> pw = sh.varpi(sys, x) * (th + zt * xd);
    F.head(ns) += zt.transpose() * pw;
    F.tail(ng) += pw;
  }
  return F;
}

inline VecD legendre_transform(const MechanicalSystem& sys, const ShapingParams& sh, const State& st) {
  sh.validate(sys);
  return legendre_transform<double>(sys, sh, st.q, st.qdot);
}

inline VecField legendre_field(const MechanicalSystem& sys, const ShapingParams& sh) {
  sh.validate(sys);
  return [sys, sh](const auto& q, const auto& v) { return legendre_transform(sys, sh, q, v); };
}

// Velocity Hessian of the controlled Lagrangian. The kinetic part is
// quadratic, so column j is the Legendre transform at the unit velocity e_j.
template <class S>
Mat<S> controlled_multiplier_matrix(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q) {
  const int n = sys.n();
  Mat<S> g(n, n);
  for (int j = 0; j < n; ++j) g.col(j) = legendre_transform(sys, sh, q, lift<S>(unit(n, j)));
  return g;
}

inline MatField controlled_multiplier_field(const MechanicalSystem& sys, const ShapingParams& sh) {
  sh.validate(sys);
  return [sys, sh](const auto& q, const auto&) { return controlled_multiplier_matrix(sys, sh, q); };
}

// ---------------------------------------------------------------------------
// C~ and its block inverse

template <class S>
Mat<S> ctilde(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q) {
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  const Vec<S> x = shape_part(q, ns);
  Mat<S> C = sys.metric_of_shape(x);
  C.bottomLeftCorner(ng, ns) += sys.g_gg.eval(x) * sh.tau.eval(x);
  return C;
}

// A_{alpha beta} = g_{alpha beta} - g_{alpha b} g^{ab} (g_{a beta} + g_{ad} tau^d_beta)
template <class S>
Mat<S> a_matrix(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& x) {
  const Mat<S> gss = sys.g_ss.eval(x), gsg = sys.g_sg.eval(x), ggg = sys.g_gg.eval(x);
  require_regular(ggg, "g_gg");
  const Mat<S> rhs = Mat<S>(gsg.transpose()) + ggg * sh.tau.eval(x);
  return gss - gsg * ggg.partialPivLu().solve(rhs);
}

struct BlockInverse {
  MatD C;
  MatD W;
  MatD A_ss;
  MatD A_ss_inv;
  double identity_error = 0.0;   // max |C W - I|
  double dense_mismatch = 0.0;   // max |W - inverse(C)|
};

inline BlockInverse ctilde_and_block_inverse(const MechanicalSystem& sys, const ShapingParams& sh, const VecD& q) {
  sh.validate(sys);
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  const VecD x = q.head(ns);
  const MatD gsg = sys.g_sg.value(x), ggg = sys.g_gg.value(x);
  const MatD T = sh.tau.value(x);
  BlockInverse b;
  b.C = ctilde<double>(sys, sh, q);
  const MatD ginv = inverse(ggg, "g_gg");
  b.A_ss = a_matrix<double>(sys, sh, x);
  b.A_ss_inv = inverse(b.A_ss, "A_ss");
  const MatD& Ai = b.A_ss_inv;
  const MatD lower = ginv * gsg.transpose() + T;  // g^{ab} g_{b gamma} + tau^a_gamma
  const MatD right = gsg * ginv;                   // g_{gamma d} g^{db}
  b.W.resize(ns + ng, ns + ng);
  b.W.topLeftCorner(ns, ns) = Ai;
  b.W.topRightCorner(ns, ng) = -Ai * right;
  b.W.bottomLeftCorner(ng, ns) = -lower * Ai;
  b.W.bottomRightCorner(ng, ng) = ginv + lower * Ai * right;
  b.identity_error = max_abs(MatD(b.C * b.W - MatD::Identity(ns + ng, ns + ng)));
  b.dense_mismatch = max_abs(MatD(b.W - inverse(b.C, "C")));
  return b;
}

// ---------------------------------------------------------------------------
// Second-order systems

struct ImplicitSode {
  int n = 0;
  JetField phi;       // (q, qdot, qddot) -> Phi
  MatField c_matrix;  // (q, qdot) -> dPhi/dqddot
};

struct ExplicitSode {
  int n = 0;
  VecField gamma;  // (q, qdot) -> qddot
};

// Controlled Euler-Lagrange expression. With scalar rho (or a shaped
// potential V_eps) the group rows also carry the potential adjustments
// (1/rho - 1) dV/dtheta + (1/rho) dV_eps/dtheta.
template <class S>
Vec<S> controlled_phi(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q, const Vec<S>& v,
                      const Vec<S>& a) {
  const int ns = sys.dims.n_shape, ng = sys.dims.n_group;
  Vec<S> phi = el_residual(sys, q, v, a);
  const Vec<S> x = shape_part(q, ns);
  const Vec<S> xd = v.head(ns);
  const Mat<S> ggg = sys.g_gg.eval(x);
  const Mat<S> T = sh.tau.eval(x);
  Vec<S> extra = ggg * T * Vec<S>(a.head(ns));
  for (int c = 0; c < ns; ++c) {
    const Mat<S> d = sys.g_gg.partial(x, c) * T + ggg * sh.tau.partial(x, c);
    extra += d * xd * xd(c);
  }
  const auto r = sh.scalar_rho();
  if (!r) throw InvalidArgument("the controlled system is defined for scalar rho only");
  if (*r != 1.0) extra += S(1.0 / *r - 1.0) * Vec<S>(sys.potential_gradient(q).tail(ng));
  if (sh.v_eps) extra += S(1.0 / *r) * Vec<S>(sh.v_eps->gradient(q).tail(ng));
  phi.tail(ng) += extra;
  return phi;
}

// u_a = Phi_a - Phi~_a
template <class S>
Vec<S> feedback_control(const MechanicalSystem& sys, const ShapingParams& sh, const Vec<S>& q, const Vec<S>& v,
                        const Vec<S>& a) {
  const int ng = sys.dims.n_group;
  return Vec<S>(el_residual(sys, q, v, a).tail(ng) - controlled_phi(sys, sh, q, v, a).tail(ng));
}

inline VecD feedback_control(const MechanicalSystem& sys, const ShapingParams& sh, const State& st, const VecD& accel) {
  sh.validate(sys);
  return feedback_control<double>(sys, sh, st.q, st.qdot, accel);
}

inline ImplicitSode uncontrolled_implicit_sode(const MechanicalSystem& sys) {
  ImplicitSode s;
  s.n = sys.n();
  s.phi = [sys](const auto& q, const auto& v, const auto& a) { return el_residual(sys, q, v, a); };
  s.c_matrix = [sys](const auto& q, const auto&) { return sys.metric(q); };
  return s;
}

inline ImplicitSode controlled_implicit_sode(const MechanicalSystem& sys, const ShapingParams& sh) {
  sh.validate(sys);
  if (!sh.scalar_rho()) throw InvalidArgument("the controlled system is defined for scalar rho only");
  ImplicitSode s;
  s.n = sys.n();
  s.phi = [sys, sh](const auto& q, const auto& v, const auto& a) { return controlled_phi(sys, sh, q, v, a); };
  s.c_matrix = [sys, sh](const auto& q, const auto&) { return ctilde(sys, sh, q); };
  return s;
}

// qddot = -C^{-1} Phi(q, qdot, 0); Phi is affine in qddot for every system here.
template <class S>
Vec<S> solve_accel(const ImplicitSode& sode, const Vec<S>& q, const Vec<S>& v) {
  if (q.size() != sode.n || v.size() != sode.n) throw DimensionError("state has the wrong length");
  const Vec<S> phi0 = sode.phi(q, v, Vec<S>(Vec<S>::Zero(sode.n)));
  return -solve(Mat<S>(sode.c_matrix(q, v)), phi0, "C");
}

inline VecD solve_accel(const ImplicitSode& sode, const State& st) { return solve_accel<double>(sode, st.q, st.qdot); }

inline ExplicitSode to_explicit(const ImplicitSode& sode) {
  return ExplicitSode{sode.n, [sode](const auto& q, const auto& v) { return solve_accel(sode, q, v); }};
}

}  // namespace matchctl
