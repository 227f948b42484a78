#pragma once

/**
 * @file control.hpp
 * @brief Feedback laws, gain selection, shaped multipliers and potentials
 * for the cart-pole and the pendulum on an incline.
 *
 * The shaped potential of a matched closed loop is never given in closed
 * form. It is recovered from the closed-loop field: at zero velocity the
 * Euler-Lagrange equations of the controlled Lagrangian reduce to
 * dV~/dq = -g~ Gamma(q, 0). Along the group directions this gradient equals
 * that of V + V_eps whenever rho is scalar, so only a one-dimensional
 * shape integral W(x) has to be tabulated.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "matchctl/errors.hpp"
#include "matchctl/field.hpp"
#include "matchctl/lagrangian.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/matching.hpp"
#include "matchctl/model.hpp"

namespace matchctl {

struct GainSelection {
  double k = 35.0;
  double sigma = 1.0;  // sigma_ab = sigma * g_ab
  double rho = 1.0;    // incline only
  double c = 0.0;      // incline only: G(x) = c x^2
  double s0 = 0.0;     // incline only: target cart position

  void check_finite() const {
    for (double v : {k, sigma, rho, c, s0})
      if (!std::isfinite(v)) throw InvalidArgument("gains must be finite");
  }
};

// ---------------------------------------------------------------------------
// Gain bound and velocity-free control

// k_min(x) = D / (beta gamma cos x sqrt(D)), D = alpha gamma - beta^2 cos^2 x
inline double gain_bound(const CartpoleParams& p, double x) {
  p.validate();
  const double c = std::cos(x);
  if (!(c > 0.0)) throw InvalidArgument("gain_bound needs cos x > 0");
  const double D = p.det(x);
  return D / (p.beta() * p.gamma() * c * std::sqrt(D));
}

// u_a = g_ab tau^b A^{11} V' for one shape coordinate and constant g_gg.
inline VecD position_feedback_control(const MechanicalSystem& sys, const FieldMatrix& tau, const VecD& q) {
  if (sys.dims.n_shape != 1) throw DimensionError("position_feedback_control needs one shape coordinate");
  if (!sys.g_gg.is_constant()) throw InvalidArgument("position_feedback_control needs constant g_gg");
  if (q.size() != sys.n()) throw DimensionError("q has the wrong length");
  const int ng = sys.dims.n_group;
  auto sh = ShapingParams::special(tau, MatD::Zero(ng, ng));
  sh.validate(sys);
  const VecD x = q.head(1);
  const double A = a_matrix<double>(sys, sh, x)(0, 0);
  if (A == 0.0 || !std::isfinite(A))
    throw SingularityError("A_ss", "A_11 vanishes at x = " + std::to_string(x(0)));
  const double dV = sys.V.d1(q)(0);
  return sys.g_gg.value(x) * tau.value(x).col(0) * (dV / A);
}

// ---------------------------------------------------------------------------
// Shaping presets

inline ShapingParams cartpole_shaping(const MechanicalSystem& sys, const GainSelection& g) {
  g.check_finite();
  return ShapingParams::special(new_tau_field(sys, g.k), MatD(g.sigma * sys.g_gg.value(VecD::Zero(1))));
}

// First interval around x = 0 on which A_11 keeps its sign. The closed loop
// is singular at both ends.
inline std::array<double, 2> regular_interval(const MechanicalSystem& sys, const ShapingParams& sh,
                                              double limit = std::numbers::pi / 2, double scan = 1e-3) {
  if (sys.dims.n_shape != 1) throw DimensionError("regular_interval needs one shape coordinate");
  auto a11 = [&](double x) { return a_matrix<double>(sys, sh, VecD::Constant(1, x))(0, 0); };
  const double a0 = a11(0.0);
  if (!(a0 != 0.0)) throw SingularityError("A_ss", "A_11 vanishes at x = 0");
  auto edge = [&](double dir) {
    double prev = 0.0;
    for (double x = scan; x < limit; x += scan) {
      const double v = a11(dir * x);
      if (!(v * a0 > 0.0)) {
        double lo = prev, hi = x;
        for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
          const double mid = 0.5 * (lo + hi);
          (a11(dir * mid) * a0 > 0.0 ? lo : hi) = mid;
        }
        return dir * lo;
      }
      prev = x;
    }
    return dir * limit;
  };
  return {edge(-1.0), edge(1.0)};
}

// ---------------------------------------------------------------------------
// Shaped multipliers

struct ShapedMultipliers {
  MatD g;  // g~ = velocity Hessian of the controlled Lagrangian
  double D = 0.0;        // det of the original metric
  double D_tilde = 0.0;  // det g~
  // rho (D + sigma_ab g_ab tau^a tau^b) for one shape and one group coordinate
  std::optional<double> D_expected;
  double min_eigenvalue = 0.0;
  bool positive_definite = false;
};

inline ShapedMultipliers shaped_multipliers(const MechanicalSystem& sys, const ShapingParams& sh, const VecD& q) {
  sh.validate(sys);
  const int n = sys.n();
  if (q.size() != n) throw DimensionError("q has the wrong length");
  ShapedMultipliers out;
  out.g.resize(n, n);
  const Vec<D2> qq = lift<D2>(q);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      Vec<D2> v = Vec<D2>::Zero(n);
      v(i).re.eps += 1.0;
      v(j).eps.re += 1.0;
      out.g(i, j) = out.g(j, i) = controlled_lagrangian_value<D2>(sys, sh, qq, v).eps.eps;
    }
  out.D = sys.metric<double>(q).determinant();
  out.D_tilde = out.g.determinant();
  if (sys.dims.n_shape == 1 && sys.dims.n_group == 1 && sh.scalar_rho()) {
    const VecD x = q.head(1);
    const double t = sh.tau.value(x)(0, 0);
    out.D_expected = *sh.scalar_rho() * (out.D + sh.sigma(0, 0) * sys.g_gg.value(x)(0, 0) * t * t);
  }
  Eigen::SelfAdjointEigenSolver<MatD> es(out.g, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.positive_definite = out.min_eigenvalue > 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Shaped potential

struct PotentialGradient {
  VecD gradient;           // dV~/dq from the zero-velocity identity
  double velocity_spread;  // max deviation over the random velocities
  double scale;            // magnitude of the terms that had to cancel
};

// dV~/dq = dK~/dq - d/dt F~ along the closed loop. Evaluated at zero
// velocity and at n_checks random velocities; any velocity dependence above
// tol * scale means the closed loop is not matched by this shaping.
inline PotentialGradient reconstruct_shaped_potential_gradient(const MechanicalSystem& sys, const ShapingParams& sh,
                                                               const ExplicitSode& closed_loop, const VecD& q,
                                                               int n_checks = 8, double tol = 1e-10,
                                                               unsigned long long seed = 7, double v_range = 2.0) {
  sh.validate(sys);
  const int n = sys.n();
  if (q.size() != n || closed_loop.n != n) throw DimensionError("state and closed loop dimensions differ");
  auto at = [&](const VecD& v, double& scale) {
    const VecD acc = closed_loop.gamma(q, v);
    // dK~/dq by one dual seed per coordinate
    VecD dK(n);
    for (int i = 0; i < n; ++i) {
      Vec<D1> qd = lift<D1>(q);
      qd(i).eps = 1.0;
      dK(i) = controlled_kinetic<D1>(sys, sh, qd, lift<D1>(v)).eps;
    }
    // d/dt F~ along (q + t v, v + t acc)
    Vec<D1> qd(n), vd(n);
    for (int i = 0; i < n; ++i) {
      qd(i) = D1(q(i), v(i));
      vd(i) = D1(v(i), acc(i));
    }
    const Vec<D1> F = legendre_transform<D1>(sys, sh, qd, vd);
    VecD dF(n);
    for (int i = 0; i < n; ++i) dF(i) = F(i).eps;
    scale = std::max({scale, max_abs(dK), max_abs(dF)});
    return VecD(dK - dF);
  };
  PotentialGradient out;
  out.scale = 1.0;
  out.velocity_spread = 0.0;
  out.gradient = at(VecD::Zero(n), out.scale);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-v_range, v_range);
  for (int c = 0; c < n_checks; ++c) {
    VecD v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng);
    const VecD g = at(v, out.scale);
    out.velocity_spread = std::max(out.velocity_spread, max_abs(VecD(g - out.gradient)));
  }
  if (!std::isfinite(out.velocity_spread) || out.velocity_spread > tol * out.scale)
    throw MatchingFailure("reconstructed potential gradient depends on velocity (spread " +
                          std::to_string(out.velocity_spread) + ") at x = " + std::to_string(q(0)));
  return out;
}

namespace detail {

// Tabulates f' on a grid with spacing about h over [lo, hi] and f by
// Gauss-Kronrod quadrature outward from x = 0, so f(0) = 0.
template <class Deriv>
HermiteTable integrate_to_table(Deriv deriv, double lo, double hi, double h, const char* what) {
  if (!(lo <= 0.0 && 0.0 <= hi && lo < hi && h > 0.0)) throw InvalidArgument(std::string(what) + ": bad range");
  std::vector<double> neg, pos;
  const int nl = static_cast<int>(std::ceil(-lo / h - 1e-9)), nr = static_cast<int>(std::ceil(hi / h - 1e-9));
  for (int i = nl; i >= 1; --i) neg.push_back(lo * i / nl);
  HermiteTable t;
  t.xs = neg;
  t.xs.push_back(0.0);
  for (int i = 1; i <= nr; ++i) t.xs.push_back(hi * i / nr);
  const std::size_t zero = neg.size();
  t.v.assign(t.xs.size(), 0.0);
  t.d.resize(t.xs.size());
  for (std::size_t i = 0; i < t.xs.size(); ++i) t.d[i] = deriv(t.xs[i]);
  auto panel = [&](double a, double b) {
    double err = 0.0;
    const double r = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(deriv, a, b, 8, 1e-10, &err);
    if (!std::isfinite(r) || err > 1e-10 * std::max(1.0, std::abs(r)))
      throw QuadratureError(std::string(what) + ": quadrature failed on [" + std::to_string(a) + ", " +
                            std::to_string(b) + "]");
    return r;
  };
  for (std::size_t i = zero + 1; i < t.xs.size(); ++i) t.v[i] = t.v[i - 1] + panel(t.xs[i - 1], t.xs[i]);
  for (std::size_t i = zero; i-- > 0;) t.v[i] = t.v[i + 1] - panel(t.xs[i], t.xs[i + 1]);
  return t;
}

}  // namespace detail

// V~(x, theta) = W(x) + V_T(x, theta) - V_T(x, theta0), V_T = V + V_eps and
// W(x) = integral from 0 to x of dV~/dx at theta0. One shape coordinate.
class ShapedPotential {
 public:
  ShapedPotential(const MechanicalSystem& sys, const ShapingParams& sh, const ExplicitSode& closed_loop, double lo,
                  double hi, VecD theta0, double spacing = 1e-3)
      : sys_(sys), sh_(sh), loop_(closed_loop), theta0_(std::move(theta0)) {
    sh_.validate(sys_);
    if (sys_.dims.n_shape != 1) throw DimensionError("ShapedPotential needs one shape coordinate");
    if (theta0_.size() != sys_.dims.n_group) throw DimensionError("theta0 must have n_group entries");
    if (!sh_.scalar_rho()) throw InvalidArgument("ShapedPotential needs scalar rho");
    const int n = sys_.n();
    auto w_prime = [this](double x) { return w_prime_exact(x); };
    table_ = std::make_shared<const detail::HermiteTable>(
        detail::integrate_to_table(w_prime, lo, hi, spacing, "shaped potential"));
  }

  // W'(x) straight from the closed loop, not from the table
  double w_prime_exact(double x) const {
    VecD q(sys_.n());
    q << x, theta0_;
    return reconstruct_shaped_potential_gradient(sys_, sh_, loop_, q, 0).gradient(0);
  }

  double lo() const { return table_->xs.front(); }
  double hi() const { return table_->xs.back(); }
  const detail::HermiteTable& table() const { return *table_; }

  SmoothField field() const {
    const int n = sys_.n();
    auto self = std::make_shared<const ShapedPotential>(*this);
    auto ref = [self](const VecD& q) {
      VecD r = q;
      r.tail(self->theta0_.size()) = self->theta0_;
      return r;
    };
    auto vt = [self](const VecD& q) { return controlled_potential<double>(self->sys_, self->sh_, q); };
    auto vt_grad = [self](const VecD& q) {
      VecD g = self->sys_.potential_gradient(q);
      if (self->sh_.v_eps) g += self->sh_.v_eps->gradient(q);
      return g;
    };
    auto vt_hess = [self](const VecD& q) {
      MatD h = self->sys_.V.d2(q);
      if (self->sh_.v_eps) h += self->sh_.v_eps->d2(q);
      return h;
    };
    return SmoothField(
        n, [self, ref, vt](const VecD& q) { return self->table_->eval(q(0))[0] + vt(q) - vt(ref(q)); },
        [self, ref, vt_grad](const VecD& q) {
          VecD g = vt_grad(q);
          self->table_->eval(q(0));  // range check
          g(0) += self->w_prime_exact(q(0)) - vt_grad(ref(q))(0);
          return g;
        },
        [self, ref, vt_hess](const VecD& q) {
          MatD h = vt_hess(q);
          h(0, 0) += self->table_->eval(q(0))[2] - vt_hess(ref(q))(0, 0);
          return h;
        });
  }

 private:
  MechanicalSystem sys_;
  ShapingParams sh_;
  ExplicitSode loop_;
  VecD theta0_;
  std::shared_ptr<const detail::HermiteTable> table_;
};

// E = 1/2 qdot^T g~ qdot + V~(q)
inline double shaped_energy(const MechanicalSystem& sys, const ShapingParams& sh, const SmoothField& potential,
                            const State& st) {
  const MatD g = controlled_multiplier_matrix<double>(sys, sh, st.q);
  return 0.5 * st.qdot.dot(g * st.qdot) + potential.value(st.q);
}

// ---------------------------------------------------------------------------
// Cart-pole closed loop in the displayed closed form

inline ExplicitSode cartpole_closed_loop(const CartpoleParams& p, double k) {
  p.validate();
  const double a = p.alpha(), b = p.beta(), g = p.gamma(), d = p.d();
  return ExplicitSode{2, [a, b, g, d, k](const auto& q, const auto& v) {
                        using S = typename std::decay_t<decltype(q)>::Scalar;
                        using std::cos;
                        using std::sin;
                        using std::sqrt;
                        const S x = q(0), xd = v(0);
                        const S c = cos(x), sn = sin(x);
                        const S D = S(a * g) - S(b * b) * c * c;
                        const S sd = sqrt(D);
                        const S den = S(b * g * k) * c * sd - S(a * g) + S(b * b) * c * c;
                        Vec<S> out(2);
                        out(0) = sn * (S(d * g) * (S(b * b) * c * c - S(a * g)) / (-den) - S(b * b) * xd * xd * c) / D;
                        out(1) = sn * (S(-a * d * g * g * k) / (sd * den) + S(b * d) * c / D + S(a * b) * xd * xd / D);
                        return out;
                      }};
}

// ---------------------------------------------------------------------------
// Incline

namespace detail {

template <class S>
S incline_A(const InclineParams& p, const S& tau, double sigma, double rho, const S& x) {
  using std::cos;
  const double a = p.alpha(), b = p.beta(), g = p.gamma();
  const S c = cos(S(p.psi) - x);
  const S den = S(g * rho) * (S(a * g) - S(b * b) * c * c - S(b * g) * tau * c);
  if (value_of(den) == 0.0) throw SingularityError("A_ss", "incline A(x): denominator vanishes");
  const S first = S(0.5 * b * (rho - 1.0)) * c * (S(-2.0 * a * g) + S(b * b) * cos(S(2.0) * (S(p.psi) - x)) + S(b * b));
  const S second = S(b * g * g * (rho + sigma)) * tau * tau * c + S(g * rho) * tau * (S(2.0 * b * b) * c * c - S(a * g));
  return (first + second) / den;
}

}  // namespace detail

// sigma here is the scalar with sigma_ab = sigma * gamma.
inline double incline_A_coefficient(const InclineParams& p, double tau, double sigma, double rho, double x) {
  return detail::incline_A<double>(p, tau, sigma, rho, x);
}

inline double incline_A_coefficient(const InclineParams& p, const ShapingParams& sh, double x) {
  const auto r = sh.scalar_rho();
  if (!r) throw InvalidArgument("incline A(x) needs scalar rho");
  return incline_A_coefficient(p, sh.tau.value(VecD::Constant(1, x))(0, 0), sh.sigma(0, 0) / p.gamma(), *r, x);
}

// reduced display for the sm3 tau
inline double incline_A_sm3(const InclineParams& p, double sigma, double rho, double x) {
  const double c = std::cos(p.psi - x);
  return -p.beta() * c * (rho * (sigma - 1.0) - sigma) / (p.gamma() * rho * sigma);
}

// reduced display for the new tau
inline double incline_A_new_tau(const InclineParams& p, double k, double sigma, double rho, double x) {
  const double a = p.alpha(), b = p.beta(), g = p.gamma();
  const double c = std::cos(p.psi - x), D = a * g - b * b * c * c, sd = std::sqrt(D);
  const double den = g * rho * (-b * g * k * c * sd + D);
  return (b * (g * g * k * k * (rho + sigma) - rho + 1.0) * c * D + g * k * rho * sd * (2 * b * b * c * c - a * g)) /
         den;
}

struct VepsValue {
  double value;
  VecD gradient;
  double h;
};

// V_eps = gamma grav sin(psi) s + s^2/2 - s h(x) + c x^2 - s0 s + s0 h(x),
// h(x) = integral of A from 0 to x, tabulated once over [lo, hi].
class InclineVeps {
 public:
  InclineVeps(const InclineParams& p, const FieldMatrix& tau, const GainSelection& gains, double lo, double hi,
              double spacing = 1e-3)
      : p_(p), tau_(tau), gains_(gains) {
    p_.validate();
    gains_.check_finite();
    if (tau_.rows() != 1 || tau_.cols() != 1 || tau_.arity() != 1) throw DimensionError("incline tau must be 1 x 1");
    auto A = [this](double x) { return a_of(x); };
    table_ = std::make_shared<const detail::HermiteTable>(detail::integrate_to_table(A, lo, hi, spacing, "h(x)"));
  }

  double a_of(double x) const {
    return detail::incline_A<double>(p_, tau_.value(VecD::Constant(1, x))(0, 0), gains_.sigma, gains_.rho, x);
  }
  double a_prime(double x) const {
    const Vec<D1> xv = Vec<D1>::Constant(1, D1(x, 1.0));
    return detail::incline_A<D1>(p_, tau_.eval(xv)(0, 0), gains_.sigma, gains_.rho, xv(0)).eps;
  }
  double h(double x) const { return table_->eval(x)[0]; }
  double lo() const { return table_->xs.front(); }
  double hi() const { return table_->xs.back(); }

  VepsValue eval(double x, double s) const {
    const double hx = h(x), A = a_of(x), c = gains_.c, s0 = gains_.s0;
    const double slope = p_.gamma() * p_.grav * std::sin(p_.psi);
    VepsValue out{slope * s + 0.5 * s * s - s * hx + c * x * x - s0 * s + s0 * hx, VecD(2), hx};
    out.gradient << -(s - s0) * A + 2.0 * c * x, slope + s - hx - s0;
    return out;
  }

  SmoothField field() const {
    auto self = std::make_shared<const InclineVeps>(*this);
    return SmoothField(
        2, [self](const VecD& q) { return self->eval(q(0), q(1)).value; },
        [self](const VecD& q) { return self->eval(q(0), q(1)).gradient; },
        [self](const VecD& q) {
          MatD H(2, 2);
          const double A = self->a_of(q(0));
          H << -(q(1) - self->gains_.s0) * self->a_prime(q(0)) + 2.0 * self->gains_.c, -A, -A, 1.0;
          return H;
        });
  }

 private:
  InclineParams p_;
  FieldMatrix tau_;
  GainSelection gains_;
  std::shared_ptr<const detail::HermiteTable> table_;
};

inline VepsValue incline_Veps(const InclineVeps& veps, double x, double s) { return veps.eval(x, s); }

// V_eps = eps d gamma^2 y^2 / (2 beta^2) for the sm3 tau, with
// y = s + (-1/sigma + (rho-1)/rho) (beta/gamma) (sin(x - psi) + sin(psi))
inline SmoothField incline_sm3_veps(const InclineParams& p, double sigma, double rho, double eps) {
  if (sigma == 0.0 || rho == 0.0) throw InvalidArgument("incline_sm3_veps: sigma and rho must be nonzero");
  const double kap = (-1.0 / sigma + (rho - 1.0) / rho) * p.beta() / p.gamma();
  const double amp = eps * p.d() * p.gamma() * p.gamma() / (p.beta() * p.beta());
  const double psi = p.psi;
  return SmoothField::from_generic(2, [kap, amp, psi](const auto& q) {
    using S = typename std::decay_t<decltype(q)>::Scalar;
    using std::sin;
    const S y = q(1) + S(kap) * (sin(q(0) - S(psi)) + S(std::sin(psi)));
    return S(0.5 * amp) * y * y;
  });
}

struct InclineShaping {
  ShapingParams shaping;
  InclineVeps veps;
  std::array<double, 2> interval;  // regular interval of the closed loop
};

// new tau with sigma_ab = sigma gamma, scalar rho and V_eps tabulated over
// the regular interval (shrunk by `margin` at both ends).
inline InclineShaping incline_shaping(const MechanicalSystem& sys, const InclineParams& p, const GainSelection& g,
                                      double margin = 0.02) {
  ShapingParams sh = ShapingParams::special(new_tau_field(sys, g.k), MatD::Constant(1, 1, g.sigma * p.gamma()));
  sh.with_rho(g.rho);
  auto iv = regular_interval(sys, sh);
  iv[0] += margin;
  iv[1] -= margin;
  InclineVeps veps(p, sh.tau, g, iv[0], iv[1]);
  sh.with_v_eps(veps.field());
  return {sh, veps, iv};
}

struct HessianCheck {
  MatD H;  // Hessian of V_T at (0, s0) with G = c x^2
  double A0;
  double c_min;
  double min_eigenvalue;
  bool positive_definite;  // c > c_min
};

inline HessianCheck incline_hessian_check(const InclineParams& p, const FieldMatrix& tau, const GainSelection& g) {
  const double A0 = detail::incline_A<double>(p, tau.value(VecD::Zero(1))(0, 0), g.sigma, g.rho, 0.0);
  HessianCheck out;
  out.A0 = A0;
  out.H.resize(2, 2);
  out.H << p.d() + 2.0 * g.c, -A0, -A0, 1.0;
  out.c_min = (-p.d() + A0 * A0) / 2.0;
  Eigen::SelfAdjointEigenSolver<MatD> es(out.H, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.positive_definite = g.c > out.c_min;
  return out;
}

}  // namespace matchctl
