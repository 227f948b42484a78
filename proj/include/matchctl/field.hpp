#pragma once

/**
 * @file field.hpp
 * @brief Smooth scalar fields with analytic first and second derivatives.
 *
 * A SmoothField stores value, gradient and Hessian callables over double
 * arguments. Evaluation at a dual-number argument uses the second-order
 * Taylor expansion about the value part, which is exact whenever every
 * product of three infinitesimal parts vanishes (always true for D1 and D2).
 * Gradient evaluation at a dual argument is first order and therefore needs
 * every product of two infinitesimal parts to vanish; both conditions are
 * checked and violations throw std::logic_error.
 */

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "matchctl/dual.hpp"
#include "matchctl/errors.hpp"
#include "matchctl/linalg.hpp"

namespace matchctl {

namespace detail {

template <class S>
struct dual_depth : std::integral_constant<int, 0> {};
template <class T>
struct dual_depth<Dual<T>> : std::integral_constant<int, 1 + dual_depth<T>::value> {};

template <class S>
Vec<S> infinitesimal_part(const Vec<S>& x, const VecD& x0) {
  Vec<S> d(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) d(i) = x(i) - S(x0(i));
  return d;
}

template <class S>
bool all_zero(const Vec<S>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!is_zero(v(i))) return false;
  return true;
}

inline double fd_step(double x, double power) {
  return std::pow(std::numeric_limits<double>::epsilon(), power) * std::max(1.0, std::abs(x));
}

}  // namespace detail

class SmoothField {
 public:
  using ValueFn = std::function<double(const VecD&)>;
  using GradFn = std::function<VecD(const VecD&)>;
  using HessFn = std::function<MatD(const VecD&)>;

  SmoothField() : SmoothField(constant(1, 0.0)) {}

  SmoothField(int arity, ValueFn value, GradFn grad, HessFn hess)
      : impl_(std::make_shared<Impl>(Impl{arity, std::move(value), std::move(grad), std::move(hess), false})) {
    if (arity < 1) throw DimensionError("SmoothField arity must be >= 1");
  }

  static SmoothField constant(int arity, double c) {
    SmoothField f(
        arity, [c](const VecD&) { return c; }, [arity](const VecD&) { return VecD::Zero(arity); },
        [arity](const VecD&) { return MatD::Zero(arity, arity); });
    f.impl_->constant = true;
    return f;
  }

  // One-argument field from f, f', f''.
  static SmoothField univariate(std::function<double(double)> f, std::function<double(double)> df,
                                std::function<double(double)> d2f) {
    return SmoothField(
        1, [f](const VecD& x) { return f(x(0)); },
        [df](const VecD& x) {
          VecD g(1);
          g(0) = df(x(0));
          return g;
        },
        [d2f](const VecD& x) {
          MatD h(1, 1);
          h(0, 0) = d2f(x(0));
          return h;
        });
  }

  // A field of `arity` arguments that only depends on argument `index`.
  static SmoothField of_coordinate(int arity, int index, std::function<double(double)> f,
                                   std::function<double(double)> df, std::function<double(double)> d2f) {
    return SmoothField(
        arity, [f, index](const VecD& x) { return f(x(index)); },
        [df, index, arity](const VecD& x) {
          VecD g = VecD::Zero(arity);
          g(index) = df(x(index));
          return g;
        },
        [d2f, index, arity](const VecD& x) {
          MatD h = MatD::Zero(arity, arity);
          h(index, index) = d2f(x(index));
          return h;
        });
  }

  // Derivatives of a generic callable `f(const Vec<S>&) -> S` by dual numbers.
  template <class F>
  static SmoothField from_generic(int arity, F f) {
    return SmoothField(
        arity, [f](const VecD& x) { return static_cast<double>(f(x)); },
        [f, arity](const VecD& x) {
          VecD g(arity);
          for (int i = 0; i < arity; ++i) {
            Vec<D1> xd = lift<D1>(x);
            xd(i).eps = 1.0;
            g(i) = f(xd).eps;
          }
          return g;
        },
        [f, arity](const VecD& x) {
          MatD h(arity, arity);
          for (int i = 0; i < arity; ++i) {
            for (int j = i; j < arity; ++j) {
              Vec<D2> xd = lift<D2>(x);
              xd(i).re.eps += 1.0;
              xd(j).eps.re += 1.0;
              h(i, j) = h(j, i) = f(xd).eps.eps;
            }
          }
          return h;
        });
  }

  // Finite-difference fallback for fields supplied by value only.
  static SmoothField finite_difference(int arity, ValueFn f) {
    auto grad = [f, arity](const VecD& x) {
      VecD g(arity);
      for (int i = 0; i < arity; ++i) {
        const double h = detail::fd_step(x(i), 1.0 / 3.0);
        VecD xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        g(i) = (f(xp) - f(xm)) / (2.0 * h);
      }
      return g;
    };
    auto hess = [f, arity](const VecD& x) {
      MatD hm(arity, arity);
      for (int i = 0; i < arity; ++i) {
        for (int j = i; j < arity; ++j) {
          const double hi = detail::fd_step(x(i), 0.25), hj = detail::fd_step(x(j), 0.25);
          auto at = [&](double si, double sj) {
            VecD y = x;
            y(i) += si * hi;
            y(j) += sj * hj;
            return f(y);
          };
          hm(i, j) = hm(j, i) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
        }
      }
      return hm;
    };
    return SmoothField(arity, f, grad, hess);
  }

  int arity() const { return impl_->arity; }
  bool is_constant() const { return impl_->constant; }

  double value(const VecD& x) const {
    check_arity(x.size());
    return impl_->value(x);
  }
  VecD d1(const VecD& x) const {
    check_arity(x.size());
    return impl_->grad(x);
  }
  MatD d2(const VecD& x) const {
    check_arity(x.size());
    return impl_->hess(x);
  }

  template <class S>
  S operator()(const Vec<S>& x) const {
    check_arity(x.size());
    if constexpr (std::is_same_v<S, double>) {
      return impl_->value(x);
    } else {
      const VecD x0 = values_of(x);
      S out(impl_->value(x0));
      if (impl_->constant) return out;
      const Vec<S> dx = detail::infinitesimal_part(x, x0);
      if (detail::all_zero(dx)) return out;
      if constexpr (detail::dual_depth<S>::value >= 3) require_nilpotent(dx, 3);
      const VecD g = impl_->grad(x0);
      const MatD h = impl_->hess(x0);
      for (Eigen::Index i = 0; i < dx.size(); ++i) {
        out += S(g(i)) * dx(i);
        for (Eigen::Index j = 0; j < dx.size(); ++j) out += S(0.5 * h(i, j)) * dx(i) * dx(j);
      }
      return out;
    }
  }

  template <class S>
  Vec<S> gradient(const Vec<S>& x) const {
    check_arity(x.size());
    if constexpr (std::is_same_v<S, double>) {
      return impl_->grad(x);
    } else {
      const VecD x0 = values_of(x);
      Vec<S> out = lift<S>(impl_->grad(x0));
      if (impl_->constant) return out;
      const Vec<S> dx = detail::infinitesimal_part(x, x0);
      if (detail::all_zero(dx)) return out;
      if constexpr (detail::dual_depth<S>::value >= 2) require_nilpotent(dx, 2);
      const MatD h = impl_->hess(x0);
      for (Eigen::Index i = 0; i < dx.size(); ++i)
        for (Eigen::Index j = 0; j < dx.size(); ++j) out(i) += S(h(i, j)) * dx(j);
      return out;
    }
  }

 private:
  struct Impl {
    int arity;
    ValueFn value;
    GradFn grad;
    HessFn hess;
    bool constant;
  };

  void check_arity(Eigen::Index n) const {
    if (n != impl_->arity)
      throw DimensionError("SmoothField expects " + std::to_string(impl_->arity) + " arguments, got " +
                           std::to_string(n));
  }

  // Every product of `order` infinitesimal parts must vanish for the
  // truncated Taylor evaluation to be exact.
  template <class S>
  static void require_nilpotent(const Vec<S>& dx, int order) {
    const Eigen::Index n = dx.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        S p = dx(i) * dx(j);
        if (order == 2) {
          if (!is_zero(p)) throw std::logic_error("SmoothField: derivative order exceeds the supplied analytic data");
          continue;
        }
        for (Eigen::Index k = 0; k < n; ++k)
          if (!is_zero(p * dx(k)))
            throw std::logic_error("SmoothField: derivative order exceeds the supplied analytic data");
      }
    }
  }

  std::shared_ptr<Impl> impl_;
};

// Dense matrix of fields sharing one argument vector.
class FieldMatrix {
 public:
  FieldMatrix() = default;
  FieldMatrix(int rows, int cols, std::vector<SmoothField> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (static_cast<int>(entries_.size()) != rows_ * cols_)
      throw DimensionError("FieldMatrix: entry count does not match shape");
    for (const auto& e : entries_)
      if (e.arity() != entries_.front().arity()) throw DimensionError("FieldMatrix: mixed field arities");
  }

  static FieldMatrix constant(const MatD& m, int arity) {
    std::vector<SmoothField> e;
    e.reserve(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) e.push_back(SmoothField::constant(arity, m(i, j)));
    return FieldMatrix(static_cast<int>(m.rows()), static_cast<int>(m.cols()), std::move(e));
  }

  static FieldMatrix zero(int rows, int cols, int arity) { return constant(MatD::Zero(rows, cols), arity); }

  // Builds a symmetric matrix from its upper triangle (row-major, i <= j).
  static FieldMatrix symmetric(int n, const std::vector<SmoothField>& upper) {
    if (static_cast<int>(upper.size()) != n * (n + 1) / 2)
      throw DimensionError("FieldMatrix::symmetric: expected n(n+1)/2 entries");
    std::vector<SmoothField> e(n * n);
    std::size_t k = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        e[i * n + j] = upper[k];
        e[j * n + i] = upper[k];
        ++k;
      }
    return FieldMatrix(n, n, std::move(e));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int arity() const { return entries_.empty() ? 0 : entries_.front().arity(); }
  bool empty() const { return entries_.empty(); }

  const SmoothField& operator()(int i, int j) const { return entries_[i * cols_ + j]; }
  SmoothField& operator()(int i, int j) { return entries_[i * cols_ + j]; }

  bool is_constant() const {
    for (const auto& e : entries_)
      if (!e.is_constant()) return false;
    return true;
  }

  template <class S>
  Mat<S> eval(const Vec<S>& x) const {
    Mat<S> m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j)(x);
    return m;
  }

  // Entrywise partial derivative with respect to argument k.
  template <class S>
  Mat<S> partial(const Vec<S>& x, int k) const {
    Mat<S> m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) {
        const auto& f = (*this)(i, j);
        m(i, j) = f.is_constant() ? S(0.0) : f.gradient(x)(k);
      }
    return m;
  }

  MatD value(const VecD& x) const { return eval(x); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<SmoothField> entries_;
};

}  // namespace matchctl
