#pragma once

/**
 * @file model.hpp
 * @brief Mechanical systems with an Abelian symmetry.
 *
 * Coordinates are ordered q = (x^1..x^ns, theta^1..theta^ng). Metric blocks
 * depend on the shape coordinates x only; the potential takes all of q.
 */

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "matchctl/errors.hpp"
#include "matchctl/field.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/report.hpp"

namespace matchctl {

struct Dims {
  int n_shape = 1;
  int n_group = 1;

  int total() const { return n_shape + n_group; }

  void validate() const {
    if (n_shape < 1 || n_group < 1) throw DimensionError("Dims: n_shape and n_group must be >= 1");
  }
};

struct State {
  VecD q;
  VecD qdot;
};

template <class S>
Vec<S> shape_part(const Vec<S>& q, int n_shape) {
  return q.head(n_shape);
}

struct MechanicalSystem {
  Dims dims;
  FieldMatrix g_ss;  // g_{alpha beta}
  FieldMatrix g_sg;  // g_{alpha a}
  FieldMatrix g_gg;  // g_{ab}
  SmoothField V;     // arity dims.total()
  bool breaks_group_symmetry = false;

  int n() const { return dims.total(); }

  template <class S>
  Mat<S> metric_of_shape(const Vec<S>& x) const {
    const int ns = dims.n_shape, ng = dims.n_group;
    Mat<S> g(ns + ng, ns + ng);
    g.topLeftCorner(ns, ns) = g_ss.eval(x);
    const Mat<S> c = g_sg.eval(x);
    g.topRightCorner(ns, ng) = c;
    g.bottomLeftCorner(ng, ns) = c.transpose();
    g.bottomRightCorner(ng, ng) = g_gg.eval(x);
    return g;
  }

  template <class S>
  Mat<S> metric(const Vec<S>& q) const {
    return metric_of_shape<S>(shape_part(q, dims.n_shape));
  }

  // d g / d q^k; zero for group coordinates.
  template <class S>
  Mat<S> metric_partial(const Vec<S>& q, int k) const {
    const int ns = dims.n_shape, ng = dims.n_group;
    Mat<S> d = Mat<S>::Zero(ns + ng, ns + ng);
    if (k >= ns) return d;
    const Vec<S> x = shape_part(q, ns);
    d.topLeftCorner(ns, ns) = g_ss.partial(x, k);
    const Mat<S> c = g_sg.partial(x, k);
    d.topRightCorner(ns, ng) = c;
    d.bottomLeftCorner(ng, ns) = c.transpose();
    d.bottomRightCorner(ng, ng) = g_gg.partial(x, k);
    return d;
  }

  template <class S>
  S potential(const Vec<S>& q) const {
    return V(q);
  }

  template <class S>
  Vec<S> potential_gradient(const Vec<S>& q) const {
    return V.gradient(q);
  }
};

namespace detail {

inline bool block_symmetric_at(const FieldMatrix& m, const VecD& x) {
  const MatD v = m.value(x);
  return asymmetry(v) == 0.0;
}

inline std::vector<VecD> symmetry_probe_points(int ns) {
  std::vector<VecD> pts;
  for (double t : {0.0, 0.37, -0.81}) {
    VecD x(ns);
    for (int i = 0; i < ns; ++i) x(i) = t * (1.0 + 0.1 * i);
    pts.push_back(x);
  }
  return pts;
}

}  // namespace detail

inline MechanicalSystem build_mechanical_system(Dims dims, FieldMatrix g_ss, FieldMatrix g_sg, FieldMatrix g_gg,
                                                SmoothField V, bool breaks_group_symmetry = false) {
  dims.validate();
  const int ns = dims.n_shape, ng = dims.n_group;
  auto check_shape = [ns](const FieldMatrix& m, int r, int c, const char* name) {
    if (m.rows() != r || m.cols() != c)
      throw DimensionError(std::string("block ") + name + " has shape " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
    if (m.arity() != ns) throw DimensionError(std::string("block ") + name + " must depend on the shape coordinates only");
  };
  check_shape(g_ss, ns, ns, "g_ss");
  check_shape(g_sg, ns, ng, "g_sg");
  check_shape(g_gg, ng, ng, "g_gg");
  if (V.arity() != dims.total()) throw DimensionError("potential must take all coordinates");
  for (const VecD& x : detail::symmetry_probe_points(ns)) {
    if (!detail::block_symmetric_at(g_ss, x)) throw InvalidArgument("block g_ss is not symmetric");
    if (!detail::block_symmetric_at(g_gg, x)) throw InvalidArgument("block g_gg is not symmetric");
  }
  return MechanicalSystem{dims, std::move(g_ss), std::move(g_sg), std::move(g_gg), std::move(V), breaks_group_symmetry};
}

struct CartpoleParams {
  double m = 0.14;
  double M = 0.44;
  double l = 0.215;
  double grav = 9.81;

  void validate() const {
    if (!(m > 0 && M > 0 && l > 0 && grav > 0))
      throw InvalidArgument("cart-pole parameters m, M, l, grav must be strictly positive");
  }
  double alpha() const { return m * l * l; }
  double beta() const { return m * l; }
  double gamma() const { return m + M; }
  double d() const { return -m * grav * l; }
  // alpha*gamma - beta^2 cos^2(x)
  double det(double x) const {
    const double c = std::cos(x);
    return alpha() * gamma() - beta() * beta() * c * c;
  }
};

struct InclineParams : CartpoleParams {
  double psi = 0.0;

  void validate() const {
    CartpoleParams::validate();
    if (!(std::abs(psi) < std::numbers::pi / 2)) throw InvalidArgument("incline angle must satisfy |psi| < pi/2");
  }
  double det(double x) const {
    const double c = std::cos(x - psi);
    return alpha() * gamma() - beta() * beta() * c * c;
  }
};

namespace detail {

inline MechanicalSystem pendulum_cart(const CartpoleParams& p, double psi, bool incline) {
  const double a = p.alpha(), b = p.beta(), gm = p.gamma(), d = p.d();
  const Dims dims{1, 1};
  auto g_ss = FieldMatrix::constant(MatD::Constant(1, 1, a), 1);
  FieldMatrix g_sg(1, 1,
                   {SmoothField::univariate([b, psi](double x) { return b * std::cos(x - psi); },
                                            [b, psi](double x) { return -b * std::sin(x - psi); },
                                            [b, psi](double x) { return -b * std::cos(x - psi); })});
  auto g_gg = FieldMatrix::constant(MatD::Constant(1, 1, gm), 1);
  const double slope = gm * p.grav * std::sin(psi);  // V = -d cos x - slope * s
  SmoothField V(
      2, [d, slope](const VecD& q) { return -d * std::cos(q(0)) - slope * q(1); },
      [d, slope](const VecD& q) {
        VecD g(2);
        g << d * std::sin(q(0)), -slope;
        return g;
      },
      [d](const VecD& q) {
        MatD h = MatD::Zero(2, 2);
        h(0, 0) = d * std::cos(q(0));
        return h;
      });
  return build_mechanical_system(dims, g_ss, g_sg, g_gg, V, incline && slope != 0.0);
}

}  // namespace detail

inline MechanicalSystem cartpole_system(const CartpoleParams& p) {
  p.validate();
  return detail::pendulum_cart(p, 0.0, false);
}

inline MechanicalSystem incline_system(const InclineParams& p) {
  p.validate();
  return detail::pendulum_cart(p, p.psi, true);
}

// Samples shape coordinates uniformly in [-x_range, x_range] and group
// coordinates in [-1, 1].
inline ResidualReport validate_system(const MechanicalSystem& sys, int n_samples, double x_range = 1.3,
                                      unsigned long long seed = 1) {
  if (n_samples < 1) throw InvalidArgument("validate_system: n_samples must be >= 1");
  const int ns = sys.dims.n_shape, n = sys.n();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-x_range, x_range), ut(-1.0, 1.0);

  double sym = 0.0, min_eig = INFINITY, mismatch = 0.0, invariance = 0.0;
  auto fd_check = [&](const SmoothField& f, const VecD& at) {
    const VecD g = f.d1(at);
    const MatD h = f.d2(at);
    sym = std::max(sym, asymmetry(h));
    const SmoothField fd = SmoothField::finite_difference(f.arity(), [&f](const VecD& y) { return f.value(y); });
    const VecD gf = fd.d1(at);
    // Hessian oracle: central differences of the analytic gradient.
    MatD hf(f.arity(), f.arity());
    for (int j = 0; j < f.arity(); ++j) {
      const double h_step = detail::fd_step(at(j), 1.0 / 3.0);
      VecD p = at, m = at;
      p(j) += h_step;
      m(j) -= h_step;
      hf.col(j) = (f.d1(p) - f.d1(m)) / (2.0 * h_step);
    }
    mismatch = std::max(mismatch, max_abs(g - gf) / std::max(1.0, max_abs(g)));
    mismatch = std::max(mismatch, max_abs(h - hf) / std::max(1.0, max_abs(h)));
  };

  for (int s = 0; s < n_samples; ++s) {
    VecD q(n);
    for (int i = 0; i < n; ++i) q(i) = i < ns ? ux(rng) : ut(rng);
    const VecD x = q.head(ns);
    const MatD g = sys.metric(q);
    sym = std::max(sym, asymmetry(g));
    min_eig = std::min(min_eig, min_eigenvalue(0.5 * (g + g.transpose())));
    for (const FieldMatrix* m : {&sys.g_ss, &sys.g_sg, &sys.g_gg})
      for (int i = 0; i < m->rows(); ++i)
        for (int j = 0; j < m->cols(); ++j) fd_check((*m)(i, j), x);
    fd_check(sys.V, q);
    if (!sys.breaks_group_symmetry) invariance = std::max(invariance, max_abs(VecD(sys.V.d1(q).tail(n - ns))));
  }

  ResidualReport r("system validation");
  r.add_residual("symmetry", sym, 0.0, 0.0);
  r.add_lower_bound("min_metric_eigenvalue", min_eig, 0.0);
  r.add_residual("derivative_mismatch", mismatch, 0.0, 1e-5);
  if (sys.breaks_group_symmetry)
    r.add_skipped("group_invariance", "potential breaks the group symmetry");
  else
    r.add_residual("group_invariance", invariance, 0.0, 0.0);
  return r;
}

}  // namespace matchctl
