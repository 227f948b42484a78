#pragma once

/**
 * @file poly_function.hpp
 * @brief Type-erased callables usable at double, D1 and D2 scalars.
 *
 * A PolyFn is built from one generic lambda and stores one std::function per
 * scalar type, so fields of (q, qdot) or (q, qdot, qddot) can be passed around
 * by value and still be differentiated with dual numbers.
 */

#include <cstddef>
#include <functional>
#include <tuple>
#include <utility>

#include "matchctl/dual.hpp"
#include "matchctl/linalg.hpp"

namespace matchctl {

template <class S>
using Scalar = S;

namespace detail {

template <class R, class Arg, std::size_t N, class... Acc>
struct fn_n : fn_n<R, Arg, N - 1, const Arg&, Acc...> {};
template <class R, class Arg, class... Acc>
struct fn_n<R, Arg, 0, Acc...> {
  using type = std::function<R(Acc...)>;
};

}  // namespace detail

template <template <class> class R, std::size_t N>
class PolyFn {
  template <class S>
  using Fn = typename detail::fn_n<R<S>, Vec<S>, N>::type;

 public:
  static constexpr std::size_t arity = N;

  PolyFn() = default;

  template <class F>
    requires(!std::same_as<std::remove_cvref_t<F>, PolyFn>)
  PolyFn(F f)  // NOLINT: implicit from generic lambdas is the intended use
      : fns_(Fn<double>(f), Fn<D1>(f), Fn<D2>(f)) {}

  template <class S, class... Rest>
  R<S> operator()(const Vec<S>& first, const Rest&... rest) const {
    static_assert(sizeof...(Rest) + 1 == N, "PolyFn called with the wrong number of arguments");
    return std::get<Fn<S>>(fns_)(first, rest...);
  }

  explicit operator bool() const { return static_cast<bool>(std::get<0>(fns_)); }

 private:
  std::tuple<Fn<double>, Fn<D1>, Fn<D2>> fns_;
};

using ScalarField = PolyFn<Scalar, 2>;  // (q, qdot) -> S
using VecField = PolyFn<Vec, 2>;        // (q, qdot) -> vector
using MatField = PolyFn<Mat, 2>;        // (q, qdot) -> matrix
using JetField = PolyFn<Vec, 3>;        // (q, qdot, qddot) -> vector

}  // namespace matchctl
