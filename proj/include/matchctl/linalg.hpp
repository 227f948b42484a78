#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "matchctl/dual.hpp"
#include "matchctl/errors.hpp"

namespace matchctl {

template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using VecD = Vec<double>;
using MatD = Mat<double>;

template <class S, int R, int C>
Eigen::Matrix<double, R, C> values_of(const Eigen::Matrix<S, R, C>& m) {
  Eigen::Matrix<double, R, C> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = value_of(m(i, j));
  return out;
}

template <class S>
Vec<S> lift(const VecD& v) {
  Vec<S> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = S(v(i));
  return out;
}

template <class S>
Mat<S> lift(const MatD& m) {
  Mat<S> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = S(m(i, j));
  return out;
}

template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Reciprocal condition estimate of the value part; 0 for an exactly singular matrix.
inline double rcond_of(const MatD& a) {
  if (a.rows() == 0) return 1.0;
  Eigen::JacobiSVD<MatD> svd(a);
  const auto& s = svd.singularValues();
  if (s(0) == 0.0) return 0.0;
  return s(s.size() - 1) / s(0);
}

inline constexpr double kSingularRcond = 1e-13;

template <class S>
void require_regular(const Mat<S>& a, const std::string& block) {
  if (a.rows() != a.cols())
    throw DimensionError("matrix '" + block + "' is not square");
  if (!(rcond_of(values_of(a)) > kSingularRcond))
    throw SingularityError(block, "matrix '" + block + "' is singular");
}

template <class S>
Vec<S> solve(const Mat<S>& a, const Vec<S>& b, const std::string& block = "C") {
  require_regular(a, block);
  return a.partialPivLu().solve(b);
}

template <class S>
Mat<S> inverse(const Mat<S>& a, const std::string& block = "C") {
  require_regular(a, block);
  return a.partialPivLu().inverse();
}

inline double min_eigenvalue(const MatD& sym) {
  Eigen::SelfAdjointEigenSolver<MatD> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double asymmetry(const MatD& m) { return max_abs(m - m.transpose()); }

}  // namespace matchctl
