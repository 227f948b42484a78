#include <gtest/gtest.h>

#include <random>

#include "matchctl/model.hpp"

using namespace matchctl;

namespace {

MechanicalSystem free_particle() {
  return build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Identity(1, 1), 1),
                                 FieldMatrix::constant(MatD::Zero(1, 1), 1),
                                 FieldMatrix::constant(MatD::Identity(1, 1), 1), SmoothField::constant(2, 0.0));
}

VecD vec(std::initializer_list<double> v) {
  VecD out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double d : v) out(i++) = d;
  return out;
}

}  // namespace

TEST(Model, FreeParticleIsValidAndExact) {
  const auto sys = free_particle();
  EXPECT_EQ(sys.n(), 2);
  const auto r = validate_system(sys, 10);
  EXPECT_TRUE(r.pass());
  EXPECT_EQ(r.find("symmetry")->raw, 0.0);
  EXPECT_EQ(r.find("derivative_mismatch")->raw, 0.0);
  EXPECT_EQ(r.find("group_invariance")->raw, 0.0);
}

TEST(Model, CartpoleParameterArithmetic) {
  const CartpoleParams p;
  // m l^2, m l, m + M, -m g l by hand
  EXPECT_NEAR(p.alpha(), 0.14 * 0.215 * 0.215, 1e-15);
  EXPECT_NEAR(p.alpha(), 0.0064715, 1e-7);
  EXPECT_NEAR(p.beta(), 0.0301, 1e-12);
  EXPECT_NEAR(p.gamma(), 0.58, 1e-12);
  EXPECT_NEAR(p.d(), -0.295281, 1e-6);
  EXPECT_NEAR(p.det(0.0), 0.00284746, 1e-8);
}

TEST(Model, CartpoleBlocksAndPositiveDefinite) {
  const CartpoleParams p;
  const auto sys = cartpole_system(p);
  const MatD g0 = sys.metric<double>(vec({0.0, 0.7}));
  EXPECT_NEAR(g0(0, 0), p.alpha(), 1e-15);
  EXPECT_NEAR(g0(0, 1), p.beta(), 1e-15);
  EXPECT_NEAR(g0(1, 0), p.beta(), 1e-15);
  EXPECT_NEAR(g0(1, 1), p.gamma(), 1e-15);
  EXPECT_NEAR(g0.determinant(), p.det(0.0), 1e-15);
  for (double x : {-1.3, -0.4, 0.9, 2.5}) {
    const MatD g = sys.metric<double>(vec({x, 0.0}));
    EXPECT_NEAR(g(0, 1), p.beta() * std::cos(x), 1e-15);
    EXPECT_NEAR(g.determinant(), p.alpha() * p.gamma() - std::pow(p.beta() * std::cos(x), 2), 1e-14);
    EXPECT_GT(g.determinant(), 0.0);
  }
  // V = -d cos x
  EXPECT_NEAR(sys.potential<double>(vec({0.3, 5.0})), -p.d() * std::cos(0.3), 1e-15);
  const auto r = validate_system(sys, 50, 1.3);
  EXPECT_TRUE(r.pass()) << r.to_text();
  EXPECT_GT(r.find("min_metric_eigenvalue")->raw, 0.0);
}

TEST(Model, InclineReducesToCartpoleAtZeroSlope) {
  InclineParams ip;
  ip.psi = 0.0;
  const auto a = incline_system(ip);
  const auto b = cartpole_system(ip);
  EXPECT_FALSE(a.breaks_group_symmetry);
  for (double x : {-1.0, 0.0, 0.4}) {
    const VecD q = vec({x, 0.3});
    EXPECT_EQ(a.metric<double>(q), b.metric<double>(q));
    EXPECT_EQ(a.potential<double>(q), b.potential<double>(q));
  }
}

TEST(Model, InclinePotentialSlope) {
  InclineParams ip;
  ip.psi = 0.3;
  const auto sys = incline_system(ip);
  EXPECT_TRUE(sys.breaks_group_symmetry);
  const VecD grad = sys.V.d1(vec({0.2, 1.0}));
  EXPECT_NEAR(grad(1), -0.58 * 9.81 * std::sin(0.3), 1e-12);
  EXPECT_NEAR(grad(1), -1.68147, 3e-5);  // quoted value is rounded; exact is -1.681451
  EXPECT_TRUE(sys.g_gg.is_constant());
  EXPECT_NEAR(sys.g_sg.value(vec({0.5}))(0, 0), ip.beta() * std::cos(0.5 - 0.3), 1e-15);
  const auto r = validate_system(sys, 20);
  EXPECT_TRUE(r.pass()) << r.to_text();
  EXPECT_EQ(r.find("group_invariance")->kind, CheckKind::skipped);
}

TEST(Model, OneShapeTwoGroupSystem) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  MatD m(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) m(i, j) = u(rng);
  const MatD ggg = m * m.transpose() + 2.0 * MatD::Identity(2, 2);
  FieldMatrix gsg(1, 2,
                  {SmoothField::univariate([](double x) { return std::sin(x); }, [](double x) { return std::cos(x); },
                                           [](double x) { return -std::sin(x); }),
                   SmoothField::univariate([](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); },
                                           [](double x) { return -std::cos(x); })});
  const auto sys = build_mechanical_system(Dims{1, 2}, FieldMatrix::constant(MatD::Constant(1, 1, 3.0), 1), gsg,
                                           FieldMatrix::constant(ggg, 1), SmoothField::constant(3, 0.0));
  // eigenvalue oracle at 20 sample points
  for (double x : std::vector<double>{-1.3, -1.1, -0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3,
                                      2.0, 2.5, 3.0, -2.0, -2.5, -3.0}) {
    Eigen::SelfAdjointEigenSolver<MatD> es(sys.metric<double>(vec({x, 0.0, 0.0})));
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
  EXPECT_TRUE(validate_system(sys, 20).pass());
}

TEST(Model, ValidationFlagsNegativeMetric) {
  const auto sys = build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Constant(1, 1, -1.0), 1),
                                           FieldMatrix::constant(MatD::Zero(1, 1), 1),
                                           FieldMatrix::constant(MatD::Identity(1, 1), 1), SmoothField::constant(2, 0.0));
  const auto r = validate_system(sys, 5);
  EXPECT_FALSE(r.pass());
  EXPECT_FALSE(r.find("min_metric_eigenvalue")->pass);
}

TEST(Model, ValidationFlagsWrongDerivative) {
  // d1 deliberately off by a factor of 2
  SmoothField bad = SmoothField::univariate([](double x) { return std::sin(x); },
                                            [](double x) { return 2.0 * std::cos(x); },
                                            [](double x) { return -std::sin(x); });
  const auto sys = build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Constant(1, 1, 4.0), 1),
                                           FieldMatrix(1, 1, {bad}), FieldMatrix::constant(MatD::Identity(1, 1), 1),
                                           SmoothField::constant(2, 0.0));
  EXPECT_FALSE(validate_system(sys, 5).find("derivative_mismatch")->pass);
}

TEST(Model, BuilderErrors) {
  const auto one = FieldMatrix::constant(MatD::Identity(1, 1), 1);
  EXPECT_THROW(build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Identity(2, 2), 1), one, one,
                                       SmoothField::constant(2, 0.0)),
               DimensionError);
  EXPECT_THROW(build_mechanical_system(Dims{1, 1}, one, one, one, SmoothField::constant(1, 0.0)), DimensionError);
  EXPECT_THROW(build_mechanical_system(Dims{0, 1}, one, one, one, SmoothField::constant(1, 0.0)), DimensionError);
  MatD ns(2, 2);
  ns << 1, 2, 3, 4;
  EXPECT_THROW(build_mechanical_system(Dims{1, 2}, one, FieldMatrix::constant(MatD::Zero(1, 2), 1),
                                       FieldMatrix::constant(ns, 1), SmoothField::constant(3, 0.0)),
               InvalidArgument);
  CartpoleParams bad;
  bad.m = 0.0;
  EXPECT_THROW(cartpole_system(bad), InvalidArgument);
  InclineParams steep;
  steep.psi = 1.6;
  EXPECT_THROW(incline_system(steep), InvalidArgument);
}
