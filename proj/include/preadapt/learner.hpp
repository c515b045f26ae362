#pragma once

// Forward-sensitivity learner for the preadaptation network.
//
// Over an adaptation phase [t_u, t_d] the sensitivities S_e = d e_v / d theta_I
// and S_th = d theta_hat / d theta_I obey
//
//   d/dt [S_e; S_th] = Pi(e_v, x_r, theta - theta_hat) [S_e; S_th],
//   S_e(t_u) = 0,  S_th(t_u) = I,
//
// and are integrated by the same RK4 step as the plant. The phase cost
// E = int |e| dt and its gradient dE/dtheta_I = int sign(e) S_e(i, :) dt are
// accumulated with the rectangle rule and backpropagated into (W, V) when the
// phase closes.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <utility>

#include "preadapt/dynamics.hpp"
#include "preadapt/errors.hpp"
#include "preadapt/network.hpp"

namespace preadapt {

enum class GradientMode { exact, approximated };

inline std::string_view to_string(GradientMode m) {
  return m == GradientMode::exact ? "exact" : "approximated";
}

template <typename Scalar>
struct PhaseSnapshot {
  Eigen::Matrix<Scalar, 2, 1> input;
  Vec<Scalar> hidden;
  PreadaptNet<Scalar> net;
  Scalar t_u = 0;
  std::size_t step_u = 0;
};

template <typename Scalar>
struct SensitivityState {
  Mat<Scalar> S_e;
  Mat<Scalar> S_th;
  RowVec<Scalar> dE_dthI;
  Scalar E_acc = 0;
  bool active = false;
  PhaseSnapshot<Scalar> snapshot;
};

template <typename Scalar>
void activate(SensitivityState<Scalar>& sens, const ForwardPass<Scalar>& fwd,
              const PreadaptNet<Scalar>& net, Scalar t_u, std::size_t step_u) {
  const Index n = net.output_dim();
  sens.S_e = Mat<Scalar>::Zero(n, n);
  sens.S_th = Mat<Scalar>::Identity(n, n);
  sens.dE_dthI = RowVec<Scalar>::Zero(n);
  sens.E_acc = 0;
  sens.active = true;
  sens.snapshot = PhaseSnapshot<Scalar>{fwd.input, fwd.hidden, net, t_u, step_u};
}

template <typename Scalar>
Mat<Scalar> pi_matrix(const Vec<Scalar>& e_v, const Vec<Scalar>& x_r, const Vec<Scalar>& dtheta,
                      const Mat<Scalar>& Ar, const Vec<Scalar>& B, const Mat<Scalar>& P,
                      Scalar gamma) {
  const Index n = Ar.rows();
  if (e_v.size() != n || x_r.size() != n || dtheta.size() != n || B.size() != n ||
      P.rows() != n || P.cols() != n)
    throw ContractError("pi_matrix: dimension mismatch");
  const Vec<Scalar> x = e_v + x_r;
  const Vec<Scalar> PB = P * B;
  Mat<Scalar> pi = Mat<Scalar>::Zero(2 * n, 2 * n);
  pi.topLeftCorner(n, n) = Ar + B * dtheta.transpose();
  pi.topRightCorner(n, n) = -B * x.transpose();
  pi.bottomLeftCorner(n, n) = gamma * e_v.dot(PB) * Mat<Scalar>::Identity(n, n) +
                              gamma * x * PB.transpose();
  return pi;
}

/// Pi with the unknown theta - theta_hat replaced by zero.
template <typename Scalar>
Mat<Scalar> pi_hat(const Vec<Scalar>& e_v, const Vec<Scalar>& x_r, const Mat<Scalar>& Ar,
                   const Vec<Scalar>& B, const Mat<Scalar>& P, Scalar gamma) {
  return pi_matrix<Scalar>(e_v, x_r, Vec<Scalar>::Zero(Ar.rows()), Ar, B, P, gamma);
}

template <typename Scalar, typename DerivedE, typename DerivedT>
std::pair<Mat<Scalar>, Mat<Scalar>> sensitivity_derivative(const Eigen::MatrixBase<DerivedE>& S_e,
                                                           const Eigen::MatrixBase<DerivedT>& S_th,
                                                           const Mat<Scalar>& pi) {
  const Index n = S_e.rows();
  if (S_e.cols() != n || S_th.rows() != n || S_th.cols() != n || pi.rows() != 2 * n ||
      pi.cols() != 2 * n)
    throw ContractError("sensitivity_derivative: dimension mismatch");
  if (!S_e.allFinite() || !S_th.allFinite())
    throw DivergenceError("sensitivity_derivative: non-finite sensitivity", 0.0, -1);
  Mat<Scalar> dSe = pi.topLeftCorner(n, n) * S_e + pi.topRightCorner(n, n) * S_th;
  Mat<Scalar> dSth = pi.bottomLeftCorner(n, n) * S_e + pi.bottomRightCorner(n, n) * S_th;
  return {std::move(dSe), std::move(dSth)};
}

template <typename Scalar>
Scalar sign_or_zero(Scalar v) {
  return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
}

/// Rectangle-rule step: E += |e| dt, dE/dtheta_I += sign(e) S_e(i, :) dt.
template <typename Scalar, typename Derived>
void accumulate_cost(SensitivityState<Scalar>& sens, Scalar e,
                     const Eigen::MatrixBase<Derived>& S_e_row, Scalar dt) {
  if (!sens.active) throw std::logic_error("accumulate_cost: sensitivity not active");
  sens.E_acc += std::abs(e) * dt;
  sens.dE_dthI += (sign_or_zero(e) * dt) * S_e_row;
}

template <typename Scalar>
struct WeightGradients {
  Mat<Scalar> dW;  // h x n, same shape as W
  Mat<Scalar> dV;  // 2 x h, same shape as V
};

/// Backpropagates dE/dtheta_I through the network evaluated at (input, hidden).
template <typename Scalar>
WeightGradients<Scalar> grad_weights(const RowVec<Scalar>& dE_dthI, const PreadaptNet<Scalar>& net,
                                     const Eigen::Matrix<Scalar, 2, 1>& input,
                                     const Vec<Scalar>& hidden) {
  if (dE_dthI.size() != net.output_dim() || hidden.size() != net.hidden_width())
    throw ContractError("grad_weights: dimension mismatch");
  WeightGradients<Scalar> g;
  g.dW = hidden * dE_dthI;
  const Vec<Scalar> back =
      (hidden.array() * (Scalar(1) - hidden.array())).matrix().cwiseProduct(net.W * dE_dthI.transpose());
  g.dV = input * back.transpose();
  return g;
}

template <typename Scalar>
PreadaptNet<Scalar> update_weights(const PreadaptNet<Scalar>& net, const WeightGradients<Scalar>& g,
                                   Scalar gamma_pa) {
  if (g.dW.rows() != net.W.rows() || g.dW.cols() != net.W.cols() || g.dV.rows() != net.V.rows() ||
      g.dV.cols() != net.V.cols())
    throw ContractError("update_weights: gradient shape mismatch");
  PreadaptNet<Scalar> out{net.W - gamma_pa * g.dW, net.V - gamma_pa * g.dV};
  if (!out.W.allFinite() || !out.V.allFinite())
    throw LearnerError("update_weights: non-finite weights after update");
  return out;
}

template <typename Scalar>
struct PhaseReport {
  Scalar t_u = 0;
  Scalar t_d = 0;
  std::size_t step_u = 0;
  std::size_t step_d = 0;
  Scalar E_acc = 0;
  RowVec<Scalar> dE_dthI;
  Scalar grad_W_norm = 0;
  Scalar grad_V_norm = 0;
  GradientMode mode = GradientMode::approximated;
  bool update_applied = false;
};

template <typename Scalar>
struct PhaseClose {
  PreadaptNet<Scalar> net;
  PhaseReport<Scalar> report;
};

/// Ends the active phase. The update is anchored to the weights captured at
/// t_u. When `learn` is false or the update is non-finite, the returned net
/// is the snapshot and report.update_applied is false.
template <typename Scalar>
PhaseClose<Scalar> close_phase(SensitivityState<Scalar>& sens, Scalar gamma_pa, Scalar t_d,
                               std::size_t step_d, GradientMode mode, bool learn,
                               std::optional<Scalar> clip = std::nullopt) {
  if (!sens.active) throw std::logic_error("close_phase: no active phase");
  const auto& snap = sens.snapshot;
  WeightGradients<Scalar> g = grad_weights<Scalar>(sens.dE_dthI, snap.net, snap.input, snap.hidden);

  PhaseClose<Scalar> out{snap.net, {}};
  auto& rep = out.report;
  rep.t_u = snap.t_u;
  rep.t_d = t_d;
  rep.step_u = snap.step_u;
  rep.step_d = step_d;
  rep.E_acc = sens.E_acc;
  rep.dE_dthI = sens.dE_dthI;
  rep.grad_W_norm = g.dW.norm();
  rep.grad_V_norm = g.dV.norm();
  rep.mode = mode;

  if (clip) {
    const Scalar total = std::sqrt(g.dW.squaredNorm() + g.dV.squaredNorm());
    if (total > *clip && total > Scalar(0)) {
      g.dW *= *clip / total;
      g.dV *= *clip / total;
    }
  }
  if (learn) {
    try {
      out.net = update_weights<Scalar>(snap.net, g, gamma_pa);
      rep.update_applied = true;
    } catch (const LearnerError&) {
      rep.update_applied = false;
    }
  }
  sens.active = false;
  return out;
}

}  // namespace preadapt
