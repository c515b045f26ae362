#pragma once

// Output-error velocity estimation and disturbance onset/recovery detection.

#include <cmath>
#include <optional>

#include "preadapt/errors.hpp"

namespace preadapt {

struct AttentionConfig {
  double c_e = 0.005;   // error threshold
  double c_ed = 0.02;   // error-rate threshold
  double tau_f = 0.05;  // velocity filter time constant [s]
};

inline void validate(const AttentionConfig& cfg) {
  if (!(cfg.c_e > 0)) throw ContractError("attention: c_e must be positive");
  if (!(cfg.c_ed > 0)) throw ContractError("attention: c_ed must be positive");
  if (!(cfg.tau_f > 0)) throw ContractError("attention: tau_f must be positive");
}

struct AttentionState {
  double e_prev = 0.0;
  double edot_hat = 0.0;
  // True between an onset event and the next recovery event.
  bool in_disturbance = false;
  std::optional<double> t_u;
  std::optional<double> t_d;
};

struct AttentionEvents {
  bool onset = false;     // E_u
  bool recovery = false;  // E_d

  bool attention() const { return onset || recovery; }
};

/// Dirty-derivative update: edot <- edot + (dt / tau_f) ((e - e_prev) / dt - edot).
/// Does not modify the state.
inline double velocity_estimate(const AttentionState& state, double e, double dt, double tau_f) {
  if (!(dt > 0)) throw ContractError("velocity_estimate: dt must be positive");
  const double slope = (e - state.e_prev) / dt;
  return state.edot_hat + (dt / tau_f) * (slope - state.edot_hat);
}

/// Sample-to-sample threshold crossing test on |e| - c_e, gated by the rate
/// estimate. Onset and recovery strictly alternate. Updates e_prev, edot_hat,
/// the phase flag and the event timestamps.
inline AttentionEvents detect_events(const AttentionConfig& cfg, AttentionState& state, double e,
                                     double edot_hat, double t) {
  const double before = std::abs(state.e_prev) - cfg.c_e;
  const double after = std::abs(e) - cfg.c_e;
  const double rate = std::abs(edot_hat);

  AttentionEvents ev;
  if (!state.in_disturbance) {
    ev.onset = before < 0.0 && after >= 0.0 && rate > cfg.c_ed;
  } else {
    ev.recovery = before > 0.0 && after <= 0.0 && rate < cfg.c_ed;
  }

  if (ev.onset) {
    state.in_disturbance = true;
    state.t_u = t;
    state.t_d.reset();
  } else if (ev.recovery) {
    state.in_disturbance = false;
    state.t_d = t;
  }
  state.e_prev = e;
  state.edot_hat = edot_hat;
  return ev;
}

}  // namespace preadapt
