#pragma once

// Plant, reference model, parameter schedules and the fixed-step integrator
// shared by every stateful block of the closed loop.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "preadapt/errors.hpp"

namespace preadapt {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Eigen::Index;

/// Largest state magnitude accepted before a run is declared divergent.
inline constexpr double kDivergenceBound = 1e6;

template <typename Scalar>
bool is_hurwitz(const Mat<Scalar>& M) {
  if (M.rows() != M.cols() || M.rows() == 0) return false;
  Eigen::EigenSolver<Mat<Scalar>> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) return false;
  return (es.eigenvalues().real().array() < Scalar(0)).all();
}

/// Rank of [B, AB, ..., A^{n-1}B].
template <typename Scalar>
Index controllability_rank(const Mat<Scalar>& A, const Vec<Scalar>& B) {
  const Index n = A.rows();
  Mat<Scalar> C(n, n);
  Vec<Scalar> col = B;
  for (Index k = 0; k < n; ++k) {
    C.col(k) = col;
    col = A * col;
  }
  Eigen::ColPivHouseholderQR<Mat<Scalar>> qr(C);
  qr.setThreshold(Scalar(1e-10));
  return qr.rank();
}

// xdot = A x + B (theta' x + u) + B1r r,  y = x(output_index)
template <typename Scalar>
struct PlantConfig {
  Mat<Scalar> A;
  Vec<Scalar> B;
  Vec<Scalar> B1r;
  Index output_index = 0;  // zero-based

  Index n() const { return A.rows(); }
};

template <typename Scalar>
PlantConfig<Scalar> make_plant(Mat<Scalar> A, Vec<Scalar> B, Vec<Scalar> B1r,
                               Index output_index) {
  const Index n = A.rows();
  if (n == 0 || A.cols() != n) throw ContractError("plant: A must be square and non-empty");
  if (B.size() != n) throw ContractError("plant: B must have n rows");
  if (B1r.size() != n) throw ContractError("plant: B1r must have n rows");
  if (output_index < 0 || output_index >= n)
    throw ContractError("plant: output index out of range");
  if (!A.allFinite() || !B.allFinite() || !B1r.allFinite())
    throw ContractError("plant: non-finite entries");
  if (controllability_rank<Scalar>(A, B) != n)
    throw ContractError("plant: (A, B) is not controllable");
  return PlantConfig<Scalar>{std::move(A), std::move(B), std::move(B1r), output_index};
}

// xr_dot = Ar xr + (B1r + B2r) r,  Ar = A - B K,  B2r = k0 B
template <typename Scalar>
struct ReferenceConfig {
  Mat<Scalar> Ar;
  Vec<Scalar> B1r;
  Vec<Scalar> B2r;
};

template <typename Scalar>
ReferenceConfig<Scalar> make_reference(const PlantConfig<Scalar>& plant,
                                       const RowVec<Scalar>& K, Scalar k0) {
  if (K.size() != plant.n()) throw ContractError("reference: K must be 1 x n");
  ReferenceConfig<Scalar> ref{plant.A - plant.B * K, plant.B1r, k0 * plant.B};
  if (!is_hurwitz<Scalar>(ref.Ar))
    throw ContractError("reference: A - B K is not Hurwitz");
  return ref;
}

/// Piecewise-constant, right-continuous parameter schedule on [0, horizon].
template <typename Scalar>
struct ThetaSchedule {
  struct Piece {
    Scalar t_start;
    Vec<Scalar> theta;
  };
  std::vector<Piece> pieces;
  Scalar horizon = 0;
  // Component-wise box bounding every theta.
  Vec<Scalar> omega_lower;
  Vec<Scalar> omega_upper;

  Index n() const { return pieces.empty() ? 0 : pieces.front().theta.size(); }
};

template <typename Scalar>
ThetaSchedule<Scalar> make_schedule(std::vector<typename ThetaSchedule<Scalar>::Piece> pieces,
                                    Scalar horizon, Vec<Scalar> omega_lower,
                                    Vec<Scalar> omega_upper) {
  if (pieces.empty()) throw ContractError("schedule: no pieces");
  if (pieces.front().t_start != Scalar(0))
    throw ContractError("schedule: first piece must start at t = 0");
  const Index n = pieces.front().theta.size();
  if (omega_lower.size() != n || omega_upper.size() != n)
    throw ContractError("schedule: omega bounds must have n entries");
  if (!(omega_lower.array() <= omega_upper.array()).all())
    throw ContractError("schedule: omega lower bound exceeds upper bound");
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    const auto& p = pieces[k];
    if (p.theta.size() != n) throw ContractError("schedule: inconsistent theta dimension");
    if (!p.theta.allFinite()) throw ContractError("schedule: non-finite theta");
    if (k > 0 && !(p.t_start > pieces[k - 1].t_start))
      throw ContractError("schedule: piece start times must be strictly increasing");
    if ((p.theta.array() < omega_lower.array()).any() ||
        (p.theta.array() > omega_upper.array()).any())
      throw ContractError("schedule: theta outside the declared box");
  }
  if (!(horizon > pieces.back().t_start))
    throw ContractError("schedule: horizon must exceed the last piece start");
  return ThetaSchedule<Scalar>{std::move(pieces), horizon, std::move(omega_lower),
                               std::move(omega_upper)};
}

template <typename Scalar>
const Vec<Scalar>& theta_at(const ThetaSchedule<Scalar>& schedule, Scalar t) {
  if (!(t >= Scalar(0)) || t > schedule.horizon)
    throw std::out_of_range("theta_at: t = " + std::to_string(static_cast<double>(t)) +
                            " outside [0, horizon]");
  const auto* current = &schedule.pieces.front();
  for (const auto& p : schedule.pieces) {
    if (p.t_start <= t) current = &p;
    else break;
  }
  return current->theta;
}

/// Start times of every piece after the first.
template <typename Scalar>
std::vector<Scalar> jump_times(const ThetaSchedule<Scalar>& schedule) {
  std::vector<Scalar> out;
  for (std::size_t k = 1; k < schedule.pieces.size(); ++k)
    out.push_back(schedule.pieces[k].t_start);
  return out;
}

template <typename Scalar, typename DerivedX, typename DerivedT>
Vec<Scalar> plant_derivative(const PlantConfig<Scalar>& cfg,
                             const Eigen::MatrixBase<DerivedX>& x, Scalar u,
                             const Eigen::MatrixBase<DerivedT>& theta, Scalar r) {
  if (x.size() != cfg.n() || theta.size() != cfg.n())
    throw ContractError("plant_derivative: dimension mismatch");
  return cfg.A * x + cfg.B * (theta.dot(x) + u) + cfg.B1r * r;
}

template <typename Scalar, typename Derived>
Vec<Scalar> reference_derivative(const ReferenceConfig<Scalar>& cfg,
                                 const Eigen::MatrixBase<Derived>& x_r, Scalar r) {
  if (x_r.size() != cfg.Ar.rows()) throw ContractError("reference_derivative: dimension mismatch");
  return cfg.Ar * x_r + (cfg.B1r + cfg.B2r) * r;
}

/// One classical RK4 step of y' = f(t, y). Throws DivergenceError when any
/// stage derivative is non-finite.
template <typename F, typename Derived>
auto rk4_step(F&& f, const Eigen::MatrixBase<Derived>& y, typename Derived::Scalar t,
              typename Derived::Scalar dt) {
  using Scalar = typename Derived::Scalar;
  using V = Vec<Scalar>;
  if (!(dt > Scalar(0))) throw ContractError("rk4_step: dt must be positive");

  auto checked = [&](Scalar ts, const V& ys) {
    V d = f(ts, ys);
    for (Index i = 0; i < d.size(); ++i) {
      if (!std::isfinite(static_cast<double>(d[i])))
        throw DivergenceError("non-finite derivative in component " + std::to_string(i),
                              static_cast<double>(ts), i);
    }
    return d;
  };

  const V y0 = y;
  const Scalar half = dt / Scalar(2);
  const V k1 = checked(t, y0);
  const V k2 = checked(t + half, y0 + half * k1);
  const V k3 = checked(t + half, y0 + half * k2);
  const V k4 = checked(t + dt, y0 + dt * k3);
  return V(y0 + (dt / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4));
}

}  // namespace preadapt
