#pragma once

// Baseline LQR gain, MRAC control and adaptation laws, and the small dense
// Lyapunov/Riccati solvers they depend on.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "preadapt/dynamics.hpp"
#include "preadapt/errors.hpp"

namespace preadapt {

template <typename Scalar>
Mat<Scalar> kron(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  Mat<Scalar> out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Solves M^T X + X M + C = 0 through the n^2 x n^2 vectorized system
/// (I kron M^T + M^T kron I) vec(X) = -vec(C). The result is symmetrized.
template <typename Scalar>
Mat<Scalar> solve_lyapunov_general(const Mat<Scalar>& M, const Mat<Scalar>& C) {
  const Index n = M.rows();
  if (M.cols() != n || C.rows() != n || C.cols() != n)
    throw ContractError("lyapunov: dimension mismatch");
  const Mat<Scalar> I = Mat<Scalar>::Identity(n, n);
  const Mat<Scalar> Mt = M.transpose();
  const Mat<Scalar> L = kron<Scalar>(I, Mt) + kron<Scalar>(Mt, I);

  Eigen::FullPivLU<Mat<Scalar>> lu(L);
  if (!lu.isInvertible()) throw SolverError("lyapunov: singular vectorized operator");
  const Vec<Scalar> rhs = -Eigen::Map<const Vec<Scalar>>(C.data(), n * n);
  const Vec<Scalar> v = lu.solve(rhs);
  Mat<Scalar> X = Eigen::Map<const Mat<Scalar>>(v.data(), n, n);
  return (X + X.transpose()) / Scalar(2);
}

/// Solves Ar^T P + P Ar = -I for the symmetric positive-definite P used by the
/// adaptation law.
template <typename Scalar>
Mat<Scalar> solve_lyapunov(const Mat<Scalar>& Ar) {
  if (Ar.rows() != Ar.cols()) throw ContractError("solve_lyapunov: Ar must be square");
  if (!is_hurwitz<Scalar>(Ar)) throw SolverError("solve_lyapunov: Ar is not Hurwitz");
  const Index n = Ar.rows();
  Mat<Scalar> P = solve_lyapunov_general<Scalar>(Ar, Mat<Scalar>::Identity(n, n));
  Eigen::LLT<Mat<Scalar>> llt(P);
  if (llt.info() != Eigen::Success) throw SolverError("solve_lyapunov: P is not positive definite");
  return P;
}

template <typename Scalar>
Scalar lyapunov_residual(const Mat<Scalar>& Ar, const Mat<Scalar>& P) {
  const Index n = Ar.rows();
  return (Ar.transpose() * P + P * Ar + Mat<Scalar>::Identity(n, n))
      .cwiseAbs()
      .rowwise()
      .sum()
      .maxCoeff();
}

template <typename Scalar>
Scalar care_residual(const Mat<Scalar>& A, const Vec<Scalar>& B, const Mat<Scalar>& Q, Scalar R,
                     const Mat<Scalar>& P) {
  const Mat<Scalar> res =
      A.transpose() * P + P * A - (P * B) * (B.transpose() * P) / R + Q;
  return res.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Stabilizing gain from the shifted Lyapunov bootstrap: with beta large
/// enough that -(A + beta I) is Hurwitz, solve
/// (A + beta I) Z + Z (A + beta I)^T = 2 B B^T and take K0 = B^T Z^{-1}.
template <typename Scalar>
RowVec<Scalar> bootstrap_gain(const Mat<Scalar>& A, const Vec<Scalar>& B) {
  const Index n = A.rows();
  Eigen::EigenSolver<Mat<Scalar>> es(A, false);
  const Scalar beta = es.eigenvalues().real().cwiseAbs().maxCoeff() + Scalar(1);
  const Mat<Scalar> M = -(A + beta * Mat<Scalar>::Identity(n, n)).transpose();
  const Mat<Scalar> Z = solve_lyapunov_general<Scalar>(M, Scalar(2) * B * B.transpose());
  Eigen::LLT<Mat<Scalar>> llt(Z);
  if (llt.info() != Eigen::Success)
    throw SolverError("lqr_gain: bootstrap Gramian not positive definite (pair not stabilizable)");
  return llt.solve(B).transpose();
}

struct LqrOptions {
  int max_iterations = 100;
  double tolerance = 1e-12;
};

/// Continuous-time LQR gain K = R^{-1} B^T P via Kleinman-Newton iteration.
template <typename Scalar>
RowVec<Scalar> lqr_gain(const Mat<Scalar>& A, const Vec<Scalar>& B, const Mat<Scalar>& Q, Scalar R,
                        Mat<Scalar>* riccati_out = nullptr, LqrOptions opts = {}) {
  const Index n = A.rows();
  if (A.cols() != n || B.size() != n || Q.rows() != n || Q.cols() != n)
    throw ContractError("lqr_gain: dimension mismatch");
  if (!(R > Scalar(0))) throw ContractError("lqr_gain: R must be positive");
  if (controllability_rank<Scalar>(A, B) != n)
    throw SolverError("lqr_gain: (A, B) is not controllable");

  RowVec<Scalar> K = bootstrap_gain<Scalar>(A, B);
  Mat<Scalar> P_prev;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Mat<Scalar> Acl = A - B * K;
    if (!is_hurwitz<Scalar>(Acl)) throw SolverError("lqr_gain: Newton iterate lost stability");
    const Mat<Scalar> rhs = Q + K.transpose() * R * K;
    Mat<Scalar> P = solve_lyapunov_general<Scalar>(Acl, rhs);
    K = (B.transpose() * P) / R;
    if (it > 0) {
      const Scalar change = (P - P_prev).cwiseAbs().rowwise().sum().maxCoeff();
      if (change < Scalar(opts.tolerance)) {
        if (riccati_out) *riccati_out = P;
        return K;
      }
    }
    P_prev = std::move(P);
  }
  throw SolverError("lqr_gain: Kleinman iteration did not converge");
}

template <typename Scalar>
struct ControllerConfig {
  RowVec<Scalar> K;
  Scalar k0 = 0;
  Scalar gamma = 1;
  Mat<Scalar> P;
};

/// Builds K from the LQR weights, then P from the resulting reference model.
template <typename Scalar>
ControllerConfig<Scalar> make_controller(const PlantConfig<Scalar>& plant, const Mat<Scalar>& Q,
                                         Scalar R, Scalar gamma, Scalar k0) {
  if (!(gamma > Scalar(0))) throw ContractError("controller: gamma must be positive");
  ControllerConfig<Scalar> cfg;
  cfg.K = lqr_gain<Scalar>(plant.A, plant.B, Q, R);
  cfg.k0 = k0;
  cfg.gamma = gamma;
  cfg.P = solve_lyapunov<Scalar>(plant.A - plant.B * cfg.K);
  return cfg;
}

// u = u_bl + u_ad = -K x - theta_hat' x + k0 r
template <typename Scalar, typename DerivedX, typename DerivedT>
Scalar control_input(const ControllerConfig<Scalar>& cfg, const Eigen::MatrixBase<DerivedX>& x,
                     const Eigen::MatrixBase<DerivedT>& theta_hat, Scalar r) {
  if (x.size() != cfg.K.size() || theta_hat.size() != cfg.K.size())
    throw ContractError("control_input: dimension mismatch");
  return -cfg.K.dot(x) - theta_hat.dot(x) + cfg.k0 * r;
}

// theta_hat_dot = gamma x (e_v' P B)
template <typename Scalar, typename DerivedX, typename DerivedE>
Vec<Scalar> adaptation_derivative(const ControllerConfig<Scalar>& cfg,
                                  const Eigen::MatrixBase<DerivedX>& x,
                                  const Eigen::MatrixBase<DerivedE>& e_v, const Vec<Scalar>& B) {
  const Index n = cfg.P.rows();
  if (x.size() != n || e_v.size() != n || B.size() != n)
    throw ContractError("adaptation_derivative: dimension mismatch");
  const Scalar s = e_v.dot(cfg.P * B);
  return cfg.gamma * s * x;
}

}  // namespace preadapt
