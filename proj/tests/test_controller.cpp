#include <doctest.h>

#include <cmath>

#include "preadapt/controller.hpp"
#include "preadapt/simengine.hpp"

using namespace preadapt;

namespace {

Matd m1(double v) { return Matd::Constant(1, 1, v); }
Vecd c1(double v) { return Vecd::Constant(1, v); }

double max_real_eig(const Matd& M) {
  Eigen::EigenSolver<Matd> es(M, false);
  return es.eigenvalues().real().maxCoeff();
}

}  // namespace

TEST_CASE("solve_lyapunov closed forms") {
  SUBCASE("scalar") {
    const Matd P = solve_lyapunov<double>(m1(-1.0));
    CHECK(std::abs(P(0, 0) - 0.5) < 1e-12);
  }
  SUBCASE("negative identity") {
    const Matd P = solve_lyapunov<double>(-Matd::Identity(3, 3));
    CHECK((P - 0.5 * Matd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("companion 2x2") {
    Matd Ar(2, 2);
    Ar << 0, 1, -2, -3;
    Matd expected(2, 2);
    expected << 1.25, 0.25, 0.25, 0.25;
    const Matd P = solve_lyapunov<double>(Ar);
    CHECK((P - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lyapunov_residual<double>(Ar, P) < 1e-12);
  }
}

TEST_CASE("solve_lyapunov on the B-747 reference model") {
  const auto p = b747_plant();
  const auto K = lqr_gain<double>(p.A, p.B, Matd::Identity(3, 3), 1.0);
  const Matd Ar = p.A - p.B * K;
  const Matd P = solve_lyapunov<double>(Ar);
  CHECK(lyapunov_residual<double>(Ar, P) < 1e-9);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Matd> es(P);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("solve_lyapunov error paths") {
  CHECK_THROWS_AS(solve_lyapunov<double>(Matd::Identity(2, 2)), SolverError);
  CHECK_THROWS_AS(solve_lyapunov<double>(Matd::Zero(2, 3)), ContractError);
  CHECK_THROWS_AS(solve_lyapunov_general<double>(Matd::Zero(2, 2), Matd::Identity(2, 2)), SolverError);
  CHECK_THROWS_AS(solve_lyapunov_general<double>(-Matd::Identity(2, 2), Matd::Identity(3, 3)),
                  ContractError);
}

TEST_CASE("kron matches the block definition") {
  Matd a(2, 2), b(1, 2);
  a << 1, 2, 3, 4;
  b << 5, 6;
  Matd expected(2, 4);
  expected << 5, 6, 10, 12, 15, 18, 20, 24;
  CHECK(kron<double>(a, b) == expected);
}

TEST_CASE("lqr_gain closed forms") {
  SUBCASE("integrator") {
    Matd P;
    const auto K = lqr_gain<double>(m1(0.0), c1(1.0), m1(1.0), 1.0, &P);
    CHECK(std::abs(K[0] - 1.0) < 1e-12);
    CHECK(std::abs(P(0, 0) - 1.0) < 1e-12);
  }
  SUBCASE("stable scalar") {
    const auto K = lqr_gain<double>(m1(-1.0), c1(1.0), m1(1.0), 1.0);
    CHECK(std::abs(K[0] - (std::sqrt(2.0) - 1.0)) < 1e-12);
  }
  SUBCASE("unstable scalar starts from a stabilizing bootstrap") {
    // A = 2: P^2 - 4P - 1 = 0, K = P = 2 + sqrt(5)
    const auto K = lqr_gain<double>(m1(2.0), c1(1.0), m1(1.0), 1.0);
    CHECK(std::abs(K[0] - (2.0 + std::sqrt(5.0))) < 1e-12);
  }
}

TEST_CASE("lqr_gain on the B-747 plant") {
  const auto p = b747_plant();
  Matd P;
  const Matd Q = Matd::Identity(3, 3);
  const auto K = lqr_gain<double>(p.A, p.B, Q, 1.0, &P);
  CHECK(care_residual<double>(p.A, p.B, Q, 1.0, P) < 1e-8);
  CHECK(max_real_eig(p.A - p.B * K) < 0.0);
  CHECK(is_hurwitz<double>(p.A - p.B * K));
}

TEST_CASE("bootstrap gain stabilizes") {
  const auto p = b747_plant();
  const auto K0 = bootstrap_gain<double>(p.A, p.B);
  CHECK(is_hurwitz<double>(p.A - p.B * K0));
}

TEST_CASE("lqr_gain error paths") {
  CHECK_THROWS_AS(lqr_gain<double>(m1(0.0), c1(1.0), m1(1.0), 0.0), ContractError);
  CHECK_THROWS_AS(lqr_gain<double>(m1(0.0), c1(1.0), Matd::Identity(2, 2), 1.0), ContractError);
  CHECK_THROWS_AS(lqr_gain<double>(m1(1.0), c1(0.0), m1(1.0), 1.0), SolverError);
  const auto p = b747_plant();
  LqrOptions opts;
  opts.max_iterations = 1;
  CHECK_THROWS_AS(lqr_gain<double>(p.A, p.B, Matd::Identity(3, 3), 1.0, nullptr, opts), SolverError);
}

TEST_CASE("control_input") {
  ControllerConfig<double> cfg;
  cfg.K = RowVec<double>(3);
  cfg.K << 1, 2, 3;
  cfg.k0 = 0.0;
  cfg.P = Matd::Identity(3, 3);

  CHECK(control_input(cfg, Vecd::Zero(3), Vecd::Constant(3, 7.0), 0.0) == 0.0);

  const Vecd x = (Vecd(3) << 0.4, -1.1, 2.5).finished();
  CHECK(control_input(cfg, x, Vecd::Zero(3), 0.0) == -cfg.K.dot(x));

  CHECK(control_input(cfg, Vecd::Ones(3), Vecd::Constant(3, 0.1), 0.1) ==
        doctest::Approx(-6.3).epsilon(1e-15));

  cfg.k0 = 2.0;
  CHECK(control_input(cfg, Vecd::Zero(3), Vecd::Zero(3), 0.5) == 1.0);
  CHECK_THROWS_AS(control_input(cfg, Vecd::Zero(2), Vecd::Zero(3), 0.0), ContractError);
}

TEST_CASE("adaptation_derivative") {
  ControllerConfig<double> cfg;
  cfg.K = RowVec<double>::Zero(3);
  cfg.gamma = 10.0;
  cfg.P = Matd::Identity(3, 3);
  const Vecd B = Vecd::Unit(3, 2);

  CHECK(adaptation_derivative(cfg, Vecd::Ones(3), Vecd::Zero(3), B) == Vecd::Zero(3));
  CHECK(adaptation_derivative(cfg, Vecd::Zero(3), Vecd::Ones(3), B) == Vecd::Zero(3));

  const Vecd d = adaptation_derivative(cfg, Vecd::Unit(3, 0), Vecd(2.0 * Vecd::Unit(3, 2)), B);
  CHECK(d == (Vecd(3) << 20, 0, 0).finished());
  CHECK_THROWS_AS(adaptation_derivative(cfg, Vecd::Zero(2), Vecd::Zero(3), B), ContractError);
}

TEST_CASE("make_controller") {
  const auto p = b747_plant();
  const auto c = make_controller<double>(p, Matd::Identity(3, 3), 1.0, 10.0, 0.0);
  CHECK(c.gamma == 10.0);
  CHECK(lyapunov_residual<double>(p.A - p.B * c.K, c.P) < 1e-9);
  CHECK_THROWS_AS(make_controller<double>(p, Matd::Identity(3, 3), 1.0, 0.0, 0.0), ContractError);
}
