#pragma once

// Two-layer sigmoid network mapping (e, |edot_hat|) to the reinitialization
// value of the parameter estimate.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

#include "preadapt/dynamics.hpp"
#include "preadapt/errors.hpp"

namespace preadapt {

template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar z = std::exp(x);
  return z / (Scalar(1) + z);
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return logistic(v); }).eval();
}

/// theta_I = W^T sigma(V^T [e, |edot|]^T), W is h x n and V is 2 x h.
template <typename Scalar>
struct PreadaptNet {
  Mat<Scalar> W;
  Mat<Scalar> V;

  Index hidden_width() const { return W.rows(); }
  Index output_dim() const { return W.cols(); }
};

template <typename Scalar>
PreadaptNet<Scalar> make_net(Mat<Scalar> W, Mat<Scalar> V) {
  if (V.rows() != 2) throw ContractError("preadapt net: V must have 2 rows");
  if (W.rows() != V.cols() || W.rows() == 0)
    throw ContractError("preadapt net: hidden widths of W and V disagree");
  if (!W.allFinite() || !V.allFinite()) throw ContractError("preadapt net: non-finite weights");
  return PreadaptNet<Scalar>{std::move(W), std::move(V)};
}

/// Entries i.i.d. uniform on [-scale, scale], W filled before V, row-major.
template <typename Scalar>
PreadaptNet<Scalar> random_net(Index hidden, Index n, std::uint64_t seed, Scalar scale = 0.5) {
  if (hidden <= 0 || n <= 0) throw ContractError("preadapt net: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-static_cast<double>(scale),
                                              static_cast<double>(scale));
  Mat<Scalar> W(hidden, n);
  Mat<Scalar> V(2, hidden);
  for (Index i = 0; i < W.rows(); ++i)
    for (Index j = 0; j < W.cols(); ++j) W(i, j) = Scalar(dist(rng));
  for (Index i = 0; i < V.rows(); ++i)
    for (Index j = 0; j < V.cols(); ++j) V(i, j) = Scalar(dist(rng));
  return PreadaptNet<Scalar>{std::move(W), std::move(V)};
}

template <typename Scalar>
struct ForwardPass {
  Vec<Scalar> theta_init;
  Vec<Scalar> hidden;                  // sigma(V^T input)
  Eigen::Matrix<Scalar, 2, 1> input;   // [e, |edot_hat|]
};

template <typename Scalar>
ForwardPass<Scalar> theta_init(const PreadaptNet<Scalar>& net, Scalar e, Scalar edot_hat) {
  ForwardPass<Scalar> out;
  out.input << e, std::abs(edot_hat);
  out.hidden = sigmoid(net.V.transpose() * out.input);
  out.theta_init = net.W.transpose() * out.hidden;
  return out;
}

/// Reinitializes only on an onset event flagged by the attention function.
template <typename Scalar>
Vec<Scalar> apply_preadaptation(bool attention, bool onset, const Vec<Scalar>& theta_hat,
                                const Vec<Scalar>& theta_I) {
  if (attention && onset) {
    if (theta_I.size() != theta_hat.size())
      throw ContractError("apply_preadaptation: dimension mismatch");
    return theta_I;
  }
  return theta_hat;
}

}  // namespace preadapt
