#include <gtest/gtest.h>

#include <random>

#include "matchctl/lagrangian.hpp"
#include "matchctl/matching.hpp"
#include "oracles.hpp"

using namespace matchctl;

namespace {

VecD vec(std::initializer_list<double> v) {
  VecD out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double d : v) out(i++) = d;
  return out;
}

MechanicalSystem free_particle() {
  return build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Identity(1, 1), 1),
                                 FieldMatrix::constant(MatD::Zero(1, 1), 1),
                                 FieldMatrix::constant(MatD::Identity(1, 1), 1), SmoothField::constant(2, 0.0));
}

FieldMatrix constant_tau(double t) { return FieldMatrix::constant(MatD::Constant(1, 1, t), 1); }

ShapingParams cart_shaping(const MechanicalSystem& sys, const CartpoleParams& p, double k, double sigma) {
  return ShapingParams::special(new_tau_field(sys, k), MatD::Constant(1, 1, sigma * p.gamma()));
}

// Velocity gradient of the controlled Lagrangian by dual seeds.
VecD lagrangian_velocity_gradient(const MechanicalSystem& sys, const ShapingParams& sh, const VecD& q, const VecD& v) {
  VecD out(q.size());
  for (int j = 0; j < q.size(); ++j) {
    Vec<D1> vd = lift<D1>(v);
    vd(j).eps = 1.0;
    out(j) = controlled_lagrangian_value<D1>(sys, sh, lift<D1>(q), vd).eps;
  }
  return out;
}

}  // namespace

TEST(Lagrangian, ValueExamples) {
  const auto fp = free_particle();
  EXPECT_DOUBLE_EQ(lagrangian_value(fp, State{vec({0.3, 0.1}), vec({1, 1})}), 1.0);

  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  EXPECT_NEAR(lagrangian_value(cp, State{vec({0, 0}), vec({0, 0})}), p.d(), 1e-15);
  EXPECT_NEAR(lagrangian_value(cp, State{vec({0, 0}), vec({1, 0})}), 0.5 * p.alpha() + p.d(), 1e-15);
}

TEST(Lagrangian, EulerLagrangeExamples) {
  const auto fp = free_particle();
  const VecD phi = el_residual(fp, State{vec({0.4, -1}), vec({0.2, 0.1})}, vec({2, 3}));
  EXPECT_DOUBLE_EQ(phi(0), 2.0);
  EXPECT_DOUBLE_EQ(phi(1), 3.0);

  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const VecD r = el_residual(cp, State{vec({0.1, 0}), vec({0, 0})}, vec({0, 0}));
  // dV/dx of V = -d cos x
  EXPECT_NEAR(r(0), p.d() * std::sin(0.1), 1e-15);
  EXPECT_NEAR(r(1), 0.0, 1e-15);
}

TEST(Lagrangian, EulerLagrangeMatchesFiniteDifferenceOracle) {
  std::mt19937_64 rng(11);
  const CartpoleParams p;
  InclineParams ip;
  ip.psi = 0.25;
  std::vector<MechanicalSystem> systems{cartpole_system(p), incline_system(ip)};
  for (auto [ns, ng] : {std::pair{1, 2}, std::pair{2, 1}}) systems.push_back(oracle::random_sm_system(ns, ng, rng).sys);
  for (const auto& sys : systems) {
    const int n = sys.n();
    auto L = [&sys](const VecD& q, const VecD& v) { return lagrangian_value<double>(sys, q, v); };
    for (int s = 0; s < 10; ++s) {
      const VecD q = oracle::random_vec(n, -1.2, 1.2, rng), v = oracle::random_vec(n, -2, 2, rng),
                 a = oracle::random_vec(n, -2, 2, rng);
      const VecD ours = el_residual<double>(sys, q, v, a);
      const VecD ref = oracle::fd_euler_lagrange(L, q, v, a);
      EXPECT_LT(max_abs(VecD(ours - ref)) / std::max(1.0, max_abs(ours)), 1e-5);
    }
  }
}

TEST(Lagrangian, ControlledValueExamples) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const State st{vec({0.3, 0.2}), vec({0.7, -0.4})};
  EXPECT_NEAR(controlled_lagrangian_value(cp, ShapingParams::unshaped(cp), st), lagrangian_value(cp, st), 1e-15);

  const auto sh_const = ShapingParams::special(constant_tau(2.5), MatD::Constant(1, 1, 3.0));
  const State rest{vec({0.3, 0.2}), vec({0, 0})};
  EXPECT_NEAR(controlled_lagrangian_value(cp, sh_const, rest), -cp.potential<double>(rest.q), 1e-15);

  // tau = 1, sigma = [2], x = 0, xdot = 1, sdot = 0:
  // L(xdot, sdot + tau xdot) = 1/2 (alpha + 2 beta + gamma), sigma term = 1, -V(0) = d
  const auto sh = ShapingParams::special(constant_tau(1.0), MatD::Constant(1, 1, 2.0));
  const double expect = 0.5 * (p.alpha() + 2 * p.beta() + p.gamma()) + 1.0 + p.d();
  EXPECT_NEAR(controlled_lagrangian_value(cp, sh, State{vec({0, 0}), vec({1, 0})}), expect, 1e-15);
}

TEST(Lagrangian, LegendreBasics) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const State st{vec({0.3, 0.2}), vec({0.7, -0.4})};
  const VecD F = legendre_transform(cp, ShapingParams::unshaped(cp), st);
  EXPECT_LT(max_abs(VecD(F - cp.metric<double>(st.q) * st.qdot)), 1e-15);
  const auto sh = cart_shaping(cp, p, 35, 1);
  EXPECT_EQ(max_abs(legendre_transform(cp, sh, State{st.q, vec({0, 0})})), 0.0);
}

TEST(Lagrangian, LegendreIsVelocityGradientOfControlledLagrangian) {
  std::mt19937_64 rng(5);
  for (auto [ns, ng] : {std::pair{1, 1}, std::pair{1, 2}, std::pair{2, 1}}) {
    const auto rs = oracle::random_sm_system(ns, ng, rng);
    for (double rho : {1.0, 1.7}) {
      auto sh = ShapingParams::special(oracle::random_tau(ns, ng, rng), oracle::random_spd(ng, rng));
      if (rho != 1.0) sh.with_rho(rho);
      const int n = ns + ng;
      for (int s = 0; s < 10; ++s) {
        const VecD q = oracle::random_vec(n, -1.2, 1.2, rng), v = oracle::random_vec(n, -2, 2, rng);
        const VecD F = legendre_transform<double>(rs.sys, sh, q, v);
        const VecD dL = lagrangian_velocity_gradient(rs.sys, sh, q, v);
        EXPECT_LT(max_abs(VecD(F - dL)), 1e-10 * std::max(1.0, max_abs(F)));
      }
    }
  }
}

TEST(Lagrangian, InclineLegendreMatchesDisplay) {
  std::mt19937_64 rng(8);
  InclineParams ip;
  ip.psi = 0.3;
  const auto sys = incline_system(ip);
  const double a = ip.alpha(), b = ip.beta(), g = ip.gamma();
  for (double rho : {1.0, 1.5, 3.0}) {
    const double sigma = 0.8, k = 2.0;
    auto sh = ShapingParams::special(new_tau_field(sys, k), MatD::Constant(1, 1, sigma * g));
    if (rho != 1.0) sh.with_rho(rho);
    for (int s = 0; s < 10; ++s) {
      const VecD q = oracle::random_vec(2, -1.2, 1.2, rng), v = oracle::random_vec(2, -2, 2, rng);
      const double x = q(0), c = std::cos(ip.psi - x);
      const double tau = k * std::sqrt(a * g - b * b * c * c);
      // sigma in the display is the scalar with sigma_ab = sigma gamma
      const double F1 = (a + b * b * (rho - 1) * c * c / g + 2 * b * rho * tau * c + g * (rho + sigma) * tau * tau) * v(0) +
                        rho * (b * c + g * tau) * v(1);
      const double F2 = rho * (b * c + g * tau) * v(0) + rho * g * v(1);
      const VecD F = legendre_transform(sys, sh, State{q, v});
      EXPECT_NEAR(F(0), F1, 1e-12 * std::max(1.0, std::abs(F1)));
      EXPECT_NEAR(F(1), F2, 1e-12 * std::max(1.0, std::abs(F2)));
      // multipliers: gbar
      const MatD gb = controlled_multiplier_matrix<double>(sys, sh, q);
      EXPECT_NEAR(gb(0, 0), a + b * b * (rho - 1) * c * c / g + 2 * b * rho * c * tau + g * (rho + sigma) * tau * tau, 1e-12);
      EXPECT_NEAR(gb(0, 1), rho * (b * c + g * tau), 1e-12);
      EXPECT_NEAR(gb(1, 0), rho * (b * c + g * tau), 1e-12);
      EXPECT_NEAR(gb(1, 1), rho * g, 1e-12);
    }
  }
}

TEST(Lagrangian, BlockInverseUnshapedIsMetricInverse) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const VecD q = vec({0.4, 0.0});
  const auto bi = ctilde_and_block_inverse(cp, ShapingParams::unshaped(cp), q);
  EXPECT_EQ(bi.C, cp.metric<double>(q));
  EXPECT_LT(max_abs(MatD(bi.W - cp.metric<double>(q).inverse())), 1e-10);
}

TEST(Lagrangian, CartpoleAIsNegativeAboveGainBound) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const auto bi = ctilde_and_block_inverse(cp, cart_shaping(cp, p, 35, 1), vec({0, 0}));
  const double tau0 = 35 * std::sqrt(p.det(0.0));
  EXPECT_NEAR(bi.A_ss(0, 0), p.alpha() - p.beta() / p.gamma() * (p.beta() + p.gamma() * tau0), 1e-14);
  EXPECT_LT(bi.A_ss(0, 0), 0.0);
}

TEST(Lagrangian, BlockInverseMatchesDenseAndIdentities) {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (auto [ns, ng] : {std::pair{1, 2}, std::pair{2, 1}, std::pair{1, 1}}) {
    const auto rs = oracle::random_sm_system(ns, ng, rng);
    const auto sh = ShapingParams::special(oracle::random_tau(ns, ng, rng), oracle::random_spd(ng, rng));
    const int n = ns + ng;
    for (int s = 0; s < 34; ++s, ++checked) {
      const VecD q = oracle::random_vec(n, -1.2, 1.2, rng);
      const auto bi = ctilde_and_block_inverse(rs.sys, sh, q);
      EXPECT_LT(bi.identity_error, 1e-12 * std::max(1.0, max_abs(bi.W)));
      EXPECT_LT(bi.dense_mismatch, 1e-10 * std::max(1.0, max_abs(bi.W)));

      // FW1 / FW2 from the blocks of dF/dqdot
      const VecD x = q.head(ns);
      const MatD Fv = controlled_multiplier_matrix<double>(rs.sys, sh, q);
      const MatD FW = Fv.topRows(ns) * bi.W;
      const MatD T = sh.tau.value(x), gsg = rs.sys.g_sg.value(x), ggg = rs.sys.g_gg.value(x);
      const MatD K = gsg * T + T.transpose() * sh.sigma * T;
      const MatD fw1 = MatD::Identity(ns, ns) + K * bi.A_ss_inv;
      const MatD fw2 = T.transpose() - K * bi.A_ss_inv * gsg * ggg.inverse();
      EXPECT_LT(max_abs(MatD(FW.leftCols(ns) - fw1)), 1e-10 * std::max(1.0, max_abs(fw1)));
      EXPECT_LT(max_abs(MatD(FW.rightCols(ng) - fw2)), 1e-10 * std::max(1.0, max_abs(fw2)));
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(Lagrangian, SingularBlocksAreNamed) {
  const auto fp = free_particle();
  // g_gg = 1, g_sg = 0, g_ss = 1: A = 1 - 0 = 1 regular; force A singular by g_ss = g_sg^2
  const auto sys = build_mechanical_system(Dims{1, 1}, FieldMatrix::constant(MatD::Constant(1, 1, 1.0), 1),
                                           FieldMatrix::constant(MatD::Constant(1, 1, 1.0), 1),
                                           FieldMatrix::constant(MatD::Identity(1, 1), 1), SmoothField::constant(2, 0));
  try {
    ctilde_and_block_inverse(sys, ShapingParams::unshaped(sys), vec({0, 0}));
    FAIL() << "expected a singularity error";
  } catch (const SingularityError& e) {
    EXPECT_EQ(e.block(), "A_ss");
  }
  (void)fp;
}

TEST(Lagrangian, ControlledSodeReducesWithoutShaping) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const auto unc = uncontrolled_implicit_sode(cp);
  const auto ctl = controlled_implicit_sode(cp, ShapingParams::unshaped(cp));
  const VecD q = vec({0.3, 1}), v = vec({0.2, -1}), a = vec({1.5, 0.3});
  EXPECT_EQ(unc.phi(q, v, a), ctl.phi(q, v, a));
  EXPECT_EQ(max_abs(feedback_control(cp, ShapingParams::unshaped(cp), State{q, v}, a)), 0.0);
}

TEST(Lagrangian, SolveAccelRoundTrip) {
  std::mt19937_64 rng(2);
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const auto sh = cart_shaping(cp, p, 35, 1);
  const auto ctl = controlled_implicit_sode(cp, sh);
  for (int s = 0; s < 20; ++s) {
    const VecD q = oracle::random_vec(2, -1.2, 1.2, rng), v = oracle::random_vec(2, -3, 3, rng);
    const VecD a = solve_accel(ctl, State{q, v});
    EXPECT_LT(max_abs(ctl.phi(q, v, a)), 1e-12);
  }
  // free particle and the uncontrolled upright equilibrium
  EXPECT_EQ(max_abs(solve_accel(uncontrolled_implicit_sode(free_particle()), State{vec({1, 2}), vec({3, 4})})), 0.0);
  EXPECT_LT(max_abs(solve_accel(uncontrolled_implicit_sode(cp), State{vec({0, 0.5}), vec({0, 0})})), 1e-15);
}

TEST(Lagrangian, CartpoleClosedLoopMatchesDisplays) {
  std::mt19937_64 rng(4);
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  const double k = 35;
  const oracle::Cart c(p, k);
  const auto sh = cart_shaping(cp, p, k, 1);
  const auto ctl = controlled_implicit_sode(cp, sh);
  auto check = [&](double x, double xd, double sd) {
    const VecD a = solve_accel(ctl, State{vec({x, 0.3}), vec({xd, sd})});
    EXPECT_NEAR(a(0), c.F(x, xd), 1e-10 * std::max(1.0, std::abs(c.F(x, xd))));
    EXPECT_NEAR(a(1), c.G(x, xd), 1e-10 * std::max(1.0, std::abs(c.G(x, xd))));
    const VecD u = feedback_control(cp, sh, State{vec({x, 0.3}), vec({xd, sd})}, a);
    EXPECT_NEAR(u(0), c.u(x), 1e-10 * std::max(1.0, std::abs(c.u(x))));
  };
  check(0.1, 0.0, 0.0);
  for (int s = 0; s < 20; ++s) {
    const VecD r = oracle::random_vec(3, -1.2, 1.2, rng);
    check(r(0), 3 * r(1), 3 * r(2));
  }
}

TEST(Lagrangian, InclineControlledSodeMatchesDisplay) {
  std::mt19937_64 rng(9);
  InclineParams ip;
  ip.psi = 0.3;
  const auto sys = incline_system(ip);
  const double a = ip.alpha(), b = ip.beta(), g = ip.gamma(), grav = ip.grav, psi = ip.psi, k = 3.0;
  const double eps = 0.7;
  // V_eps = eps (s^2/2 + s sin x)
  SmoothField veps = SmoothField::from_generic(2, [eps](const auto& q) {
    using std::sin;
    using S = typename std::decay_t<decltype(q)>::Scalar;
    return S(eps) * (S(0.5) * q(1) * q(1) + q(1) * sin(q(0)));
  });
  for (double rho : {1.0, 2.0}) {
    auto sh = ShapingParams::special(new_tau_field(sys, k), MatD::Constant(1, 1, 0.5 * g));
    sh.with_v_eps(veps, eps);
    if (rho != 1.0) sh.with_rho(rho);
    const auto ctl = controlled_implicit_sode(sys, sh);
    for (int s = 0; s < 10; ++s) {
      const VecD q = oracle::random_vec(2, -1.2, 1.2, rng), v = oracle::random_vec(2, -2, 2, rng),
                 acc = oracle::random_vec(2, -2, 2, rng);
      const double x = q(0), c = std::cos(psi - x), sn = std::sin(psi - x);
      const double D = a * g - b * b * c * c;
      const double tau = k * std::sqrt(D);
      // d/dx of k sqrt(alpha gamma - beta^2 cos^2(x - psi))
      const double dtau = k * b * b * std::sin(2 * (x - psi)) / (2 * std::sqrt(D));
      const double dveps_ds = eps * (q(1) + std::sin(x));
      const double phi_x = a * acc(0) + b * acc(1) * c + ip.d() * std::sin(x);
      const double phi_s = v(0) * v(0) * (b * sn + g * dtau) + (b * c + g * tau) * acc(0) + g * acc(1) +
                           dveps_ds / rho - grav * g / rho * std::sin(psi);
      const VecD ours = ctl.phi(q, v, acc);
      EXPECT_NEAR(ours(0), phi_x, 1e-12);
      EXPECT_NEAR(ours(1), phi_s, 1e-12 * std::max(1.0, std::abs(phi_s)));

      // control display (second line)
      const double u = (1 - rho) / rho * g * grav * std::sin(psi) - dveps_ds / rho - g * tau * acc(0) - g * dtau * v(0) * v(0);
      EXPECT_NEAR(feedback_control(sys, sh, State{q, v}, acc)(0), u, 1e-12 * std::max(1.0, std::abs(u)));
    }
  }
}

TEST(Lagrangian, InclineDegeneratesToSpecialMatchingControl) {
  std::mt19937_64 rng(10);
  InclineParams ip;
  ip.psi = 0.0;
  const auto sys = incline_system(ip);
  const auto sh = ShapingParams::special(new_tau_field(sys, 4.0), MatD::Constant(1, 1, ip.gamma()));
  for (int s = 0; s < 10; ++s) {
    const VecD q = oracle::random_vec(2, -1.2, 1.2, rng), v = oracle::random_vec(2, -2, 2, rng),
               acc = oracle::random_vec(2, -2, 2, rng);
    VecD x(1);
    x << q(0);
    const double tau = sh.tau.value(x)(0, 0), dtau = sh.tau.partial(x, 0)(0, 0);
    const double u = -ip.gamma() * (dtau * v(0) * v(0) + tau * acc(0));
    EXPECT_NEAR(feedback_control(sys, sh, State{q, v}, acc)(0), u, 1e-13);
  }
}

TEST(Lagrangian, GeneralRhoIsRejectedForTheControlledSystem) {
  const CartpoleParams p;
  const auto cp = cartpole_system(p);
  auto sh = ShapingParams::unshaped(cp);
  sh.with_g_rho(FieldMatrix::constant(MatD::Constant(1, 1, 2.0), 1));
  EXPECT_THROW(controlled_implicit_sode(cp, sh), InvalidArgument);
  // the Legendre transform still supports it
  EXPECT_NO_THROW(legendre_transform(cp, sh, State{vec({0.1, 0}), vec({1, 1})}));
}
