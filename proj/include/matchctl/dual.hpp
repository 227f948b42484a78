#pragma once

/**
 * @file dual.hpp
 * @brief Forward-mode dual numbers.
 *
 * Dual<T> carries a value and one directional derivative. Nesting
 * (Dual<Dual<double>>) gives exact mixed second derivatives: seed the inner
 * level along one direction and the outer level along another, and the
 * eps.eps component is the second directional derivative.
 */

#include <cmath>
#include <concepts>
#include <ostream>
#include <type_traits>

#include <Eigen/Core>

namespace matchctl {

template <class T>
struct Dual {
  T re{};
  T eps{};

  constexpr Dual() = default;
  constexpr Dual(double v) : re(v), eps(0.0) {}  // NOLINT: implicit by design of the scalar algebra
  constexpr Dual(const T& r) requires(!std::same_as<T, double>) : re(r), eps(0.0) {}
  constexpr Dual(const T& r, const T& e) : re(r), eps(e) {}

  friend constexpr Dual operator+(const Dual& a, const Dual& b) { return {a.re + b.re, a.eps + b.eps}; }
  friend constexpr Dual operator-(const Dual& a, const Dual& b) { return {a.re - b.re, a.eps - b.eps}; }
  friend constexpr Dual operator-(const Dual& a) { return {-a.re, -a.eps}; }
  friend constexpr Dual operator+(const Dual& a) { return a; }
  friend constexpr Dual operator*(const Dual& a, const Dual& b) {
    return {a.re * b.re, a.re * b.eps + a.eps * b.re};
  }
  friend constexpr Dual operator/(const Dual& a, const Dual& b) {
    T r = a.re / b.re;
    return {r, (a.eps - r * b.eps) / b.re};
  }

  constexpr Dual& operator+=(const Dual& o) { return *this = *this + o; }
  constexpr Dual& operator-=(const Dual& o) { return *this = *this - o; }
  constexpr Dual& operator*=(const Dual& o) { return *this = *this * o; }
  constexpr Dual& operator/=(const Dual& o) { return *this = *this / o; }

  // Ordering looks at the value only; pivoting and branch selection need it.
  friend constexpr bool operator<(const Dual& a, const Dual& b) { return a.re < b.re; }
  friend constexpr bool operator>(const Dual& a, const Dual& b) { return a.re > b.re; }
  friend constexpr bool operator<=(const Dual& a, const Dual& b) { return a.re <= b.re; }
  friend constexpr bool operator>=(const Dual& a, const Dual& b) { return a.re >= b.re; }
  friend constexpr bool operator==(const Dual& a, const Dual& b) { return a.re == b.re && a.eps == b.eps; }
  friend constexpr bool operator!=(const Dual& a, const Dual& b) { return !(a == b); }

  friend std::ostream& operator<<(std::ostream& os, const Dual& d) {
    return os << '(' << d.re << " + " << d.eps << "e)";
  }
};

using D1 = Dual<double>;
using D2 = Dual<D1>;

template <class S>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};
template <class S>
inline constexpr bool is_dual_v = is_dual<S>::value;

inline constexpr double value_of(double x) { return x; }
template <class T>
constexpr double value_of(const Dual<T>& d) {
  return value_of(d.re);
}

inline constexpr bool is_zero(double x) { return x == 0.0; }
template <class T>
constexpr bool is_zero(const Dual<T>& d) {
  return is_zero(d.re) && is_zero(d.eps);
}

// Chain rule for a scalar function with known value and derivative.
template <class T>
constexpr Dual<T> chain(const Dual<T>& a, const T& f, const T& df) {
  return {f, df * a.eps};
}

template <class T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return chain(a, T(sin(a.re)), T(cos(a.re)));
}

template <class T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return chain(a, T(cos(a.re)), T(-sin(a.re)));
}

template <class T>
Dual<T> tan(const Dual<T>& a) {
  using std::tan;
  T t = tan(a.re);
  return chain(a, t, T(1.0 + t * t));
}

template <class T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  T s = sqrt(a.re);
  return chain(a, s, T(0.5 / s));
}

template <class T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  T e = exp(a.re);
  return chain(a, e, e);
}

template <class T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return chain(a, T(log(a.re)), T(1.0 / a.re));
}

template <class T>
Dual<T> pow(const Dual<T>& a, double p) {
  using std::pow;
  return chain(a, T(pow(a.re, p)), T(p * pow(a.re, p - 1.0)));
}

template <class T>
Dual<T> abs(const Dual<T>& a) {
  return a.re < T(0.0) ? -a : a;
}

template <class T>
bool isfinite(const Dual<T>& a) {
  using std::isfinite;
  return isfinite(a.re) && isfinite(a.eps);
}

}  // namespace matchctl

namespace Eigen {

template <class T>
struct NumTraits<matchctl::Dual<T>> : NumTraits<double> {
  using Real = matchctl::Dual<T>;
  using NonInteger = matchctl::Dual<T>;
  using Nested = matchctl::Dual<T>;
  using Literal = matchctl::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2 * NumTraits<T>::ReadCost,
    AddCost = 2 * NumTraits<T>::AddCost,
    MulCost = 3 * NumTraits<T>::MulCost
  };
};

}  // namespace Eigen
