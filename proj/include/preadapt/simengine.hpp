#pragma once

// Closed-loop simulation of MRAC with preadaptation, the B-747 scenario
// library, run comparison and the finite-difference gradient check.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "preadapt/attention.hpp"
#include "preadapt/controller.hpp"
#include "preadapt/dynamics.hpp"
#include "preadapt/learner.hpp"
#include "preadapt/network.hpp"

namespace preadapt {

using Matd = Mat<double>;
using Vecd = Vec<double>;

struct SignalPiece {
  double t_start = 0.0;
  double value = 0.0;
};

/// Right-continuous piecewise-constant lookup; pieces must start at 0.
double signal_at(const std::vector<SignalPiece>& pieces, double t);

struct PreadaptSettings {
  bool enabled = false;
  bool learner_enabled = false;
  GradientMode mode = GradientMode::approximated;
  double gamma_pa = 10.0;
  Index hidden_width = 3;
  std::uint64_t seed = 1;
  double init_scale = 0.5;
  std::optional<double> grad_clip;
  // Overrides the seeded initialization when present.
  std::optional<PreadaptNet<double>> initial_weights;
};

struct RunConfig {
  std::string name = "custom";
  std::string plant_name = "custom";  // "b747" when built from the library
  PlantConfig<double> plant;
  Matd Q;
  double R = 1.0;
  double gamma = 10.0;
  double k0 = 0.0;
  AttentionConfig attention;
  PreadaptSettings preadapt;
  ThetaSchedule<double> schedule;
  std::vector<SignalPiece> r_signal{{0.0, 0.1}};
  double dt = 1e-3;
  Vecd x0;
  Vecd theta_hat0;
};

/// Throws ConfigError naming the offending field.
void validate(const RunConfig& cfg);

/// Number of integration steps; the trace holds step_count + 1 records.
std::size_t step_count(const RunConfig& cfg);

struct TraceRecord {
  double t = 0.0;
  Vecd x;
  Vecd x_r;
  double e = 0.0;
  double edot_hat = 0.0;
  Vecd theta;
  Vecd theta_hat;  // value after any reinitialization at this step
  double u = 0.0;
  bool onset = false;
  bool recovery = false;
};

enum class EventKind { onset, recovery };

struct EventRecord {
  double t = 0.0;
  std::size_t step = 0;
  EventKind kind = EventKind::onset;
};

/// One attention phase. The peak runs from t_u to the next onset (or the
/// horizon); E_phase integrates |e| from t_u until recovery.
struct PhaseMetrics {
  double t_u = 0.0;
  std::size_t step_u = 0;
  std::optional<double> t_d;
  std::optional<std::size_t> step_d;
  double peak_abs_e = 0.0;
  double E_phase = 0.0;
  bool recovered = false;
};

/// Coupled state at an onset step, before the estimate was overwritten.
struct ReinitState {
  std::size_t step = 0;
  Vecd x;
  Vecd x_r;
  Vecd theta_hat_before;
  Vecd theta_I;
};

enum class RunStatus { ok, diverged };

struct RunResult {
  RunStatus status = RunStatus::ok;
  std::optional<std::size_t> failed_step;
  std::string error;
  std::vector<TraceRecord> trace;
  std::vector<EventRecord> events;
  std::vector<PhaseMetrics> phases;
  std::vector<PhaseReport<double>> reports;
  std::vector<ReinitState> reinits;
  PreadaptNet<double> initial_net;
  PreadaptNet<double> final_net;
  ControllerConfig<double> controller;
  ReferenceConfig<double> reference;
  std::vector<std::string> log;
};

/// Packed closed-loop state [x | x_r | theta_hat | S_e | S_th] and its
/// derivative, with theta and r held constant over a step.
class ClosedLoop {
 public:
  ClosedLoop(PlantConfig<double> plant, ControllerConfig<double> controller,
             ReferenceConfig<double> reference);

  Index n() const { return plant_.n(); }
  Index size() const { return 3 * n() + 2 * n() * n(); }

  Vecd derivative(const Vecd& z, const Vecd& theta, double r, GradientMode mode,
                  bool sensitivity) const;

  Vecd initial_state(const Vecd& x0, const Vecd& theta_hat0) const;
  void reset_sensitivity(Vecd& z) const;

  auto x(const Vecd& z) const { return z.segment(0, n()); }
  auto x_r(const Vecd& z) const { return z.segment(n(), n()); }
  auto theta_hat(const Vecd& z) const { return z.segment(2 * n(), n()); }
  auto theta_hat(Vecd& z) const { return z.segment(2 * n(), n()); }
  Eigen::Map<const Matd> S_e(const Vecd& z) const {
    return Eigen::Map<const Matd>(z.data() + 3 * n(), n(), n());
  }
  Eigen::Map<const Matd> S_th(const Vecd& z) const {
    return Eigen::Map<const Matd>(z.data() + 3 * n() + n() * n(), n(), n());
  }
  double output_error(const Vecd& z) const {
    const Index i = plant_.output_index;
    return z[i] - z[n() + i];
  }

  const PlantConfig<double>& plant() const { return plant_; }
  const ControllerConfig<double>& controller() const { return controller_; }
  const ReferenceConfig<double>& reference() const { return reference_; }

 private:
  PlantConfig<double> plant_;
  ControllerConfig<double> controller_;
  ReferenceConfig<double> reference_;
};

RunResult run(const RunConfig& cfg);

/// Per-jump comparison of two runs over the windows between schedule jumps.
struct ComparisonRow {
  double t_jump = 0.0;
  double t_end = 0.0;
  std::optional<double> t_u_a;
  std::optional<double> t_u_b;
  double peak_a = 0.0;
  double peak_b = 0.0;
  double reduction = 0.0;  // 1 - peak_b / peak_a
  double E_a = 0.0;
  double E_b = 0.0;
};

struct Comparison {
  std::string name_a;
  std::string name_b;
  RunStatus status_a = RunStatus::ok;
  RunStatus status_b = RunStatus::ok;
  std::vector<ComparisonRow> rows;
};

std::vector<ComparisonRow> compare_traces(const RunResult& a, const RunResult& b,
                                          const ThetaSchedule<double>& schedule, double dt);
Comparison compare(const RunConfig& a, const RunConfig& b);

struct GradCheckReport {
  std::size_t phase_index = 0;
  double t_u = 0.0;
  double t_d = 0.0;
  std::size_t steps = 0;
  double delta = 0.0;
  Vecd theta_I;
  double E = 0.0;
  Vecd finite_difference;
  Vecd exact;
  Vecd approximated;
  Vecd rel_err_exact;
  Vecd rel_err_approximated;
  // The run's own accumulated gradient equals the replay in the run's mode.
  bool recorded_matches = false;

  double max_rel_err(GradientMode m) const;
};

/// Relative error with absolute comparison for |reference| < floor.
double gradient_error(double reference, double value, double floor = 1e-8);

/// Re-simulates one closed phase with events frozen and compares the
/// sensitivity gradient (both modes) with central differences in theta_I.
GradCheckReport grad_check(const RunConfig& cfg, std::size_t phase_index, double delta);

// --- scenario library -------------------------------------------------------

PlantConfig<double> b747_plant();

/// Piecewise-constant theta schedules of flight-control scenarios 1, 2 and 3.
ThetaSchedule<double> scenario_schedule(int id);

enum class Variant { rac, preadapt, learner };

/// B-747 defaults: Q = I, R = 1, gamma = 10, k0 = 0, c_e = 0.005,
/// c_ed = 0.02, gamma_pa = 10, h = 3, r = 0.1, dt = 1e-3, x0 = 0.
RunConfig b747_config();
RunConfig scenario_config(int id, Variant variant, GradientMode mode = GradientMode::approximated,
                          std::uint64_t seed = 1);

}  // namespace preadapt
