#pragma once

/**
 * @file derivatives.hpp
 * @brief Directional derivatives of PolyFn fields in stacked jet coordinates.
 *
 * Arguments are stacked into one vector z = (q, qdot) or (q, qdot, qddot).
 * The dual backend is exact; the finite-difference backend is the oracle used
 * to cross-check it.
 */

#include <cmath>
#include <limits>

#include "matchctl/dual.hpp"
#include "matchctl/errors.hpp"
#include "matchctl/linalg.hpp"
#include "matchctl/poly_function.hpp"

namespace matchctl {

enum class DerivativeMode { dual, finite_difference };

inline VecD stack(const VecD& a, const VecD& b) {
  VecD z(a.size() + b.size());
  z << a, b;
  return z;
}

inline VecD stack(const VecD& a, const VecD& b, const VecD& c) {
  VecD z(a.size() + b.size() + c.size());
  z << a, b, c;
  return z;
}

// Unit vector e_i in R^len.
inline VecD unit(Eigen::Index len, Eigen::Index i) {
  VecD e = VecD::Zero(len);
  e(i) = 1.0;
  return e;
}

namespace detail {

template <template <class> class R, std::size_t N, class S>
R<S> call_stacked(const PolyFn<R, N>& f, const Vec<S>& z) {
  if (z.size() % static_cast<Eigen::Index>(N) != 0) throw DimensionError("stacked argument has the wrong length");
  const Eigen::Index n = z.size() / static_cast<Eigen::Index>(N);
  if constexpr (N == 2) {
    return f(Vec<S>(z.head(n)), Vec<S>(z.segment(n, n)));
  } else {
    static_assert(N == 3);
    return f(Vec<S>(z.head(n)), Vec<S>(z.segment(n, n)), Vec<S>(z.tail(n)));
  }
}

template <class T, class F>
  requires is_dual_v<T>
double map_entries(const T& v, F f) {
  return f(v);
}

template <class T, int Rows, int Cols, class F>
Eigen::Matrix<double, Rows, Cols> map_entries(const Eigen::Matrix<T, Rows, Cols>& m, F f) {
  Eigen::Matrix<double, Rows, Cols> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = f(m(i, j));
  return out;
}

inline double fd_scale(const VecD& z, const VecD& u, double power) {
  const double zn = z.size() ? z.cwiseAbs().maxCoeff() : 0.0;
  const double un = u.cwiseAbs().maxCoeff();
  if (un == 0.0) return 0.0;
  return std::pow(std::numeric_limits<double>::epsilon(), power) * std::max(1.0, zn) / un;
}

}  // namespace detail

template <template <class> class R, std::size_t N>
R<double> value_at(const PolyFn<R, N>& f, const VecD& z) {
  return detail::call_stacked(f, z);
}

// d/dt f(z + t u) at t = 0.
template <template <class> class R, std::size_t N>
R<double> dir1(const PolyFn<R, N>& f, const VecD& z, const VecD& u, DerivativeMode mode = DerivativeMode::dual) {
  if (mode == DerivativeMode::dual) {
    Vec<D1> zd(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) zd(i) = D1(z(i), u(i));
    return detail::map_entries(detail::call_stacked(f, zd), [](const D1& v) { return v.eps; });
  }
  const double h = detail::fd_scale(z, u, 1.0 / 3.0);
  if (h == 0.0) return R<double>(0.0 * value_at(f, z));
  return R<double>((value_at(f, VecD(z + h * u)) - value_at(f, VecD(z - h * u))) / (2.0 * h));
}

// d^2/(ds dt) f(z + s u + t w) at s = t = 0.
template <template <class> class R, std::size_t N>
R<double> dir2(const PolyFn<R, N>& f, const VecD& z, const VecD& u, const VecD& w,
               DerivativeMode mode = DerivativeMode::dual) {
  if (mode == DerivativeMode::dual) {
    Vec<D2> zd(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) zd(i) = D2(D1(z(i), u(i)), D1(w(i), 0.0));
    return detail::map_entries(detail::call_stacked(f, zd), [](const D2& v) { return v.eps.eps; });
  }
  const double h = detail::fd_scale(z, u, 0.25), k = detail::fd_scale(z, w, 0.25);
  if (h == 0.0 || k == 0.0) return R<double>(0.0 * value_at(f, z));
  auto at = [&](double a, double b) { return value_at(f, VecD(z + a * h * u + b * k * w)); };
  return R<double>((at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * k));
}

// Jacobian of a vector field with respect to argument block `block`
// (0 = q, 1 = qdot, 2 = qddot): column j is d f / d z_{block*n + j}.
template <std::size_t N>
MatD block_jacobian(const PolyFn<Vec, N>& f, const VecD& z, int block, DerivativeMode mode = DerivativeMode::dual) {
  const Eigen::Index n = z.size() / static_cast<Eigen::Index>(N);
  MatD J;
  for (Eigen::Index j = 0; j < n; ++j) {
    const VecD col = dir1(f, z, unit(z.size(), block * n + j), mode);
    if (j == 0) J.resize(col.size(), n);
    J.col(j) = col;
  }
  return J;
}

}  // namespace matchctl
