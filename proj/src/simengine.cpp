#include "preadapt/simengine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace preadapt {

double signal_at(const std::vector<SignalPiece>& pieces, double t) {
  if (pieces.empty()) throw ContractError("signal_at: empty signal");
  double v = pieces.front().value;
  for (const auto& p : pieces) {
    if (p.t_start <= t) v = p.value;
    else break;
  }
  return v;
}

namespace {

bool same_shape(const Matd& a, Index rows, Index cols) {
  return a.rows() == rows && a.cols() == cols;
}

}  // namespace

void validate(const RunConfig& cfg) {
  const Index n = cfg.plant.n();
  if (n == 0) throw ConfigError("plant", "empty plant");
  if (!same_shape(cfg.plant.A, n, n) || cfg.plant.B.size() != n || cfg.plant.B1r.size() != n)
    throw ConfigError("plant", "inconsistent matrix dimensions");
  if (cfg.plant.output_index < 0 || cfg.plant.output_index >= n)
    throw ConfigError("plant.output_index", "out of range");
  if (!same_shape(cfg.Q, n, n)) throw ConfigError("controller.Q", "must be n x n");
  if (!(cfg.R > 0)) throw ConfigError("controller.R", "must be positive");
  if (!(cfg.gamma > 0)) throw ConfigError("controller.gamma", "must be positive");
  if (!std::isfinite(cfg.k0)) throw ConfigError("controller.k0", "must be finite");
  if (!(cfg.attention.c_e > 0)) throw ConfigError("attention.c_e", "must be positive");
  if (!(cfg.attention.c_ed > 0)) throw ConfigError("attention.c_ed", "must be positive");
  if (!(cfg.attention.tau_f > 0)) throw ConfigError("attention.tau_f", "must be positive");
  if (cfg.schedule.n() != n) throw ConfigError("schedule", "theta dimension must equal n");
  if (!(cfg.dt > 0)) throw ConfigError("dt", "must be positive");
  const double steps = cfg.schedule.horizon / cfg.dt;
  if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
    throw ConfigError("dt", "horizon must be a multiple of dt");
  if (cfg.x0.size() != n) throw ConfigError("x0", "must have n entries");
  if (cfg.theta_hat0.size() != n) throw ConfigError("theta_hat0", "must have n entries");
  if (cfg.r_signal.empty() || cfg.r_signal.front().t_start != 0.0)
    throw ConfigError("reference.r", "signal must start at t = 0");
  for (std::size_t k = 1; k < cfg.r_signal.size(); ++k)
    if (!(cfg.r_signal[k].t_start > cfg.r_signal[k - 1].t_start))
      throw ConfigError("reference.r", "piece start times must be strictly increasing");

  const auto& pa = cfg.preadapt;
  if (!pa.enabled && pa.learner_enabled)
    throw ConfigError("preadapt.learner", "learner requires preadaptation to be enabled");
  if (pa.hidden_width < 1) throw ConfigError("preadapt.hidden_width", "must be at least 1");
  if (!(pa.gamma_pa >= 0)) throw ConfigError("preadapt.gamma_pa", "must be non-negative");
  if (!(pa.init_scale >= 0)) throw ConfigError("preadapt.init_scale", "must be non-negative");
  if (pa.grad_clip && !(*pa.grad_clip > 0))
    throw ConfigError("preadapt.grad_clip", "must be positive");
  if (pa.initial_weights) {
    const auto& w = *pa.initial_weights;
    if (!same_shape(w.W, pa.hidden_width, n) || !same_shape(w.V, 2, pa.hidden_width))
      throw ConfigError("preadapt.initial_weights", "shape does not match hidden_width and n");
    if (!w.W.allFinite() || !w.V.allFinite())
      throw ConfigError("preadapt.initial_weights", "non-finite weights");
  }
}

std::size_t step_count(const RunConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.schedule.horizon / cfg.dt));
}

ClosedLoop::ClosedLoop(PlantConfig<double> plant, ControllerConfig<double> controller,
                       ReferenceConfig<double> reference)
    : plant_(std::move(plant)), controller_(std::move(controller)), reference_(std::move(reference)) {}

Vecd ClosedLoop::initial_state(const Vecd& x0, const Vecd& theta_hat0) const {
  Vecd z = Vecd::Zero(size());
  z.segment(0, n()) = x0;
  z.segment(n(), n()) = x0;
  z.segment(2 * n(), n()) = theta_hat0;
  return z;
}

void ClosedLoop::reset_sensitivity(Vecd& z) const {
  const Index m = n() * n();
  Eigen::Map<Matd>(z.data() + 3 * n(), n(), n()).setZero();
  Eigen::Map<Matd>(z.data() + 3 * n() + m, n(), n()).setIdentity();
}

Vecd ClosedLoop::derivative(const Vecd& z, const Vecd& theta, double r, GradientMode mode,
                            bool sensitivity) const {
  const Index nn = n();
  const Vecd x = z.segment(0, nn);
  const Vecd xr = z.segment(nn, nn);
  const Vecd th = z.segment(2 * nn, nn);
  const Vecd ev = x - xr;

  Vecd dz(size());
  const double u = control_input(controller_, x, th, r);
  dz.segment(0, nn) = plant_derivative(plant_, x, u, theta, r);
  dz.segment(nn, nn) = reference_derivative(reference_, xr, r);
  dz.segment(2 * nn, nn) = adaptation_derivative(controller_, x, ev, plant_.B);

  if (sensitivity) {
    const Matd pi = mode == GradientMode::exact
                        ? pi_matrix<double>(ev, xr, theta - th, reference_.Ar, plant_.B,
                                            controller_.P, controller_.gamma)
                        : pi_hat<double>(ev, xr, reference_.Ar, plant_.B, controller_.P,
                                         controller_.gamma);
    auto [dSe, dSth] = sensitivity_derivative<double>(S_e(z), S_th(z), pi);
    dz.segment(3 * nn, nn * nn) = Eigen::Map<const Vecd>(dSe.data(), nn * nn);
    dz.segment(3 * nn + nn * nn, nn * nn) = Eigen::Map<const Vecd>(dSth.data(), nn * nn);
  } else {
    dz.tail(2 * nn * nn).setZero();
  }
  return dz;
}

namespace {

struct Setup {
  ClosedLoop loop;
  PreadaptNet<double> net;
};

Setup build(const RunConfig& cfg) {
  validate(cfg);
  auto controller = make_controller<double>(cfg.plant, cfg.Q, cfg.R, cfg.gamma, cfg.k0);
  auto reference = make_reference<double>(cfg.plant, controller.K, cfg.k0);
  const auto& pa = cfg.preadapt;
  PreadaptNet<double> net = pa.initial_weights
                                ? *pa.initial_weights
                                : random_net<double>(pa.hidden_width, cfg.plant.n(), pa.seed,
                                                     pa.init_scale);
  return Setup{ClosedLoop(cfg.plant, std::move(controller), std::move(reference)), std::move(net)};
}

bool out_of_bounds(const Vecd& z) {
  return !z.allFinite() || z.cwiseAbs().maxCoeff() > kDivergenceBound;
}

std::string fmt_time(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

}  // namespace

RunResult run(const RunConfig& cfg) {
  Setup setup = build(cfg);
  const ClosedLoop& loop = setup.loop;
  const Index n = loop.n();
  const Index out_i = cfg.plant.output_index;
  const auto& pa = cfg.preadapt;
  const double dt = cfg.dt;
  const std::size_t steps = step_count(cfg);

  RunResult res;
  res.controller = loop.controller();
  res.reference = loop.reference();
  res.initial_net = setup.net;
  PreadaptNet<double> net = setup.net;

  Vecd z = loop.initial_state(cfg.x0, cfg.theta_hat0);
  AttentionState att;
  SensitivityState<double> sens;
  std::optional<std::size_t> current;  // index of the latest phase
  res.trace.reserve(steps + 1);

  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Vecd& theta = theta_at(cfg.schedule, t);
    const double r = signal_at(cfg.r_signal, t);

    // error and velocity estimate
    const double e = loop.output_error(z);
    const double edot = velocity_estimate(att, e, dt, cfg.attention.tau_f);
    const AttentionEvents ev = detect_events(cfg.attention, att, e, edot, t);

    if (ev.onset) {
      res.events.push_back({t, k, EventKind::onset});
      PhaseMetrics pm;
      pm.t_u = t;
      pm.step_u = k;
      res.phases.push_back(pm);
      current = res.phases.size() - 1;

      if (pa.enabled) {
        const ForwardPass<double> fwd = theta_init<double>(net, e, edot);
        const Vecd before = loop.theta_hat(z);
        loop.theta_hat(z) =
            apply_preadaptation<double>(ev.attention(), ev.onset, before, fwd.theta_init);
        loop.reset_sensitivity(z);
        activate(sens, fwd, net, t, k);
        res.reinits.push_back({k, loop.x(z), loop.x_r(z), before, fwd.theta_init});
      }
    }

    if (ev.recovery) {
      res.events.push_back({t, k, EventKind::recovery});
      if (current) {
        auto& pm = res.phases[*current];
        pm.t_d = t;
        pm.step_d = k;
        pm.recovered = true;
      }
      if (sens.active) {
        auto closed = close_phase<double>(sens, pa.gamma_pa, t, k, pa.mode, pa.learner_enabled,
                                          pa.grad_clip);
        if (pa.learner_enabled && !closed.report.update_applied)
          res.log.push_back("learner update skipped at t = " + fmt_time(t) +
                            ": non-finite weights");
        if (closed.report.update_applied) net = std::move(closed.net);
        res.reports.push_back(std::move(closed.report));
      }
    }

    if (sens.active) accumulate_cost(sens, e, loop.S_e(z).row(out_i), dt);
    if (current) {
      auto& pm = res.phases[*current];
      if (!pm.recovered) pm.E_phase += std::abs(e) * dt;
      pm.peak_abs_e = std::max(pm.peak_abs_e, std::abs(e));
    }

    const Vecd th_hat = loop.theta_hat(z);
    const double u = control_input(loop.controller(), loop.x(z), th_hat, r);
    res.trace.push_back(TraceRecord{t, loop.x(z), loop.x_r(z), e, edot, theta, th_hat, u,
                                    ev.onset, ev.recovery});

    if (k == steps) break;

    const bool active = sens.active;
    try {
      z = rk4_step(
          [&](double, const Vecd& y) { return loop.derivative(y, theta, r, pa.mode, active); }, z,
          t, dt);
    } catch (const DivergenceError& err) {
      res.status = RunStatus::diverged;
      res.failed_step = k + 1;
      res.error = std::string(err.what()) + " at t = " + fmt_time(t);
      break;
    }
    if (out_of_bounds(z)) {
      Index idx = 0;
      z.cwiseAbs().maxCoeff(&idx);
      res.status = RunStatus::diverged;
      res.failed_step = k + 1;
      res.error = "state component " + std::to_string(idx) + " exceeded divergence bound at t = " +
                  fmt_time(t + dt);
      break;
    }
  }

  if (sens.active)
    res.log.push_back("phase opened at t = " + fmt_time(sens.snapshot.t_u) +
                      " still open at end of run; no learner update");
  res.final_net = std::move(net);
  return res;
}

std::vector<ComparisonRow> compare_traces(const RunResult& a, const RunResult& b,
                                          const ThetaSchedule<double>& schedule, double dt) {
  const auto jumps = jump_times(schedule);
  std::vector<ComparisonRow> rows;
  for (std::size_t j = 0; j < jumps.size(); ++j) {
    ComparisonRow row;
    row.t_jump = jumps[j];
    row.t_end = j + 1 < jumps.size() ? jumps[j + 1] : schedule.horizon;
    const bool last = j + 1 == jumps.size();
    auto in_window = [&](double t) { return t >= row.t_jump && (t < row.t_end || (last && t <= row.t_end)); };

    auto scan = [&](const RunResult& r, double& peak, double& E, std::optional<double>& t_u) {
      for (const auto& rec : r.trace) {
        if (!in_window(rec.t)) continue;
        peak = std::max(peak, std::abs(rec.e));
        E += std::abs(rec.e) * dt;
        if (rec.onset && !t_u) t_u = rec.t;
      }
    };
    scan(a, row.peak_a, row.E_a, row.t_u_a);
    scan(b, row.peak_b, row.E_b, row.t_u_b);
    row.reduction = row.peak_a > 0 ? 1.0 - row.peak_b / row.peak_a : 0.0;
    rows.push_back(row);
  }
  return rows;
}

namespace {

bool same_schedule(const ThetaSchedule<double>& a, const ThetaSchedule<double>& b) {
  if (a.horizon != b.horizon || a.pieces.size() != b.pieces.size()) return false;
  for (std::size_t k = 0; k < a.pieces.size(); ++k) {
    if (a.pieces[k].t_start != b.pieces[k].t_start) return false;
    if (a.pieces[k].theta != b.pieces[k].theta) return false;
  }
  return true;
}

}  // namespace

Comparison compare(const RunConfig& a, const RunConfig& b) {
  if (!same_schedule(a.schedule, b.schedule))
    throw ConfigError("schedule", "compared runs must share the same schedule and horizon");
  if (a.dt != b.dt) throw ConfigError("dt", "compared runs must share the same dt");
  Comparison cmp;
  cmp.name_a = a.name;
  cmp.name_b = b.name;
  const RunResult ra = run(a);
  const RunResult rb = run(b);
  cmp.status_a = ra.status;
  cmp.status_b = rb.status;
  cmp.rows = compare_traces(ra, rb, a.schedule, a.dt);
  return cmp;
}

double gradient_error(double reference, double value, double floor) {
  const double diff = std::abs(reference - value);
  return std::abs(reference) < floor ? diff : diff / std::abs(reference);
}

double GradCheckReport::max_rel_err(GradientMode m) const {
  const Vecd& v = m == GradientMode::exact ? rel_err_exact : rel_err_approximated;
  return v.size() ? v.maxCoeff() : 0.0;
}

namespace {

struct WindowResult {
  double E = 0.0;
  RowVec<double> dE;
};

// Replays steps [step_u, step_d) from the stored onset state with the given
// reinitialization, accumulating exactly as run() does.
WindowResult replay(const RunConfig& cfg, const ClosedLoop& loop, const ReinitState& start,
                    std::size_t step_d, const Vecd& theta_I, GradientMode mode) {
  const Index n = loop.n();
  Vecd z = Vecd::Zero(loop.size());
  z.segment(0, n) = start.x;
  z.segment(n, n) = start.x_r;
  z.segment(2 * n, n) = theta_I;
  loop.reset_sensitivity(z);

  SensitivityState<double> sens;
  sens.active = true;
  sens.dE_dthI = RowVec<double>::Zero(n);
  for (std::size_t k = start.step; k < step_d; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const Vecd& theta = theta_at(cfg.schedule, t);
    const double r = signal_at(cfg.r_signal, t);
    accumulate_cost(sens, loop.output_error(z), loop.S_e(z).row(cfg.plant.output_index), cfg.dt);
    if (k + 1 == step_d) break;
    z = rk4_step([&](double, const Vecd& y) { return loop.derivative(y, theta, r, mode, true); },
                 z, t, cfg.dt);
  }
  return {sens.E_acc, sens.dE_dthI};
}

}  // namespace

GradCheckReport grad_check(const RunConfig& cfg, std::size_t phase_index, double delta) {
  if (!(delta > 0) || !std::isfinite(delta))
    throw ContractError("grad_check: delta must be positive and finite");
  const RunResult res = run(cfg);
  if (phase_index >= res.reports.size())
    throw std::out_of_range("grad_check: run has " + std::to_string(res.reports.size()) +
                            " closed phases, requested index " + std::to_string(phase_index));
  const auto& rep = res.reports[phase_index];
  const auto it = std::find_if(res.reinits.begin(), res.reinits.end(),
                               [&](const ReinitState& s) { return s.step == rep.step_u; });
  if (it == res.reinits.end()) throw std::logic_error("grad_check: missing onset state");

  const ClosedLoop loop(cfg.plant, res.controller, res.reference);
  const Index n = loop.n();

  GradCheckReport out;
  out.phase_index = phase_index;
  out.t_u = rep.t_u;
  out.t_d = rep.t_d;
  out.steps = rep.step_d - rep.step_u;
  out.delta = delta;
  out.theta_I = it->theta_I;

  const WindowResult ex = replay(cfg, loop, *it, rep.step_d, it->theta_I, GradientMode::exact);
  const WindowResult ap =
      replay(cfg, loop, *it, rep.step_d, it->theta_I, GradientMode::approximated);
  out.E = ex.E;
  out.exact = ex.dE.transpose();
  out.approximated = ap.dE.transpose();
  const RowVec<double>& same_mode = cfg.preadapt.mode == GradientMode::exact ? ex.dE : ap.dE;
  out.recorded_matches = (same_mode.array() == rep.dE_dthI.array()).all();

  out.finite_difference.resize(n);
  out.rel_err_exact.resize(n);
  out.rel_err_approximated.resize(n);
  for (Index i = 0; i < n; ++i) {
    Vecd plus = it->theta_I;
    Vecd minus = it->theta_I;
    plus[i] += delta;
    minus[i] -= delta;
    // The sensitivity blocks do not feed back into the state, so the mode is
    // irrelevant for E.
    const double Ep = replay(cfg, loop, *it, rep.step_d, plus, GradientMode::approximated).E;
    const double Em = replay(cfg, loop, *it, rep.step_d, minus, GradientMode::approximated).E;
    out.finite_difference[i] = (Ep - Em) / (2.0 * delta);
    out.rel_err_exact[i] = gradient_error(out.finite_difference[i], out.exact[i]);
    out.rel_err_approximated[i] = gradient_error(out.finite_difference[i], out.approximated[i]);
  }
  return out;
}

// --- scenario library -------------------------------------------------------

PlantConfig<double> b747_plant() {
  Matd A(3, 3);
  A << 0.0, 1.0, 0.0,
       0.0, -0.32, 0.86,
       0.0, -0.93, -0.43;
  Vecd B(3);
  B << 0.0, -0.02, -1.16;
  Vecd B1r(3);
  B1r << -1.0, 0.0, 0.0;
  // state [e_I, alpha, q], output alpha
  return make_plant<double>(A, B, B1r, 1);
}

ThetaSchedule<double> scenario_schedule(int id) {
  std::vector<std::pair<double, double>> levels;
  double horizon = 0.0;
  switch (id) {
    case 1:
      levels = {{0, 0.1}, {5, 1}, {20, 2}, {45, 4}};
      horizon = 60;
      break;
    case 2:
      levels = {{0, 0.1}, {5, 1}, {20, 2}, {45, 1}, {70, 0.1}, {95, 2}, {120, 4}};
      horizon = 140;
      break;
    case 3:
      levels = {{0, 0.1}, {5, 1},  {20, 5},  {35, 10},  {50, 5},
                {65, 1},  {80, 5}, {95, 10}, {110, 5}, {125, 1}};
      horizon = 140;
      break;
    default:
      throw ContractError("scenario_schedule: unknown scenario " + std::to_string(id));
  }
  std::vector<ThetaSchedule<double>::Piece> pieces;
  for (const auto& [t, level] : levels) pieces.push_back({t, Vecd::Constant(3, level)});
  return make_schedule<double>(std::move(pieces), horizon, Vecd::Constant(3, -20.0),
                               Vecd::Constant(3, 20.0));
}

RunConfig b747_config() {
  RunConfig cfg;
  cfg.name = "b747";
  cfg.plant_name = "b747";
  cfg.plant = b747_plant();
  cfg.Q = Matd::Identity(3, 3);
  cfg.R = 1.0;
  cfg.gamma = 10.0;
  cfg.k0 = 0.0;
  cfg.attention = AttentionConfig{0.005, 0.02, 0.05};
  cfg.preadapt = PreadaptSettings{};
  cfg.preadapt.gamma_pa = cfg.gamma;
  cfg.schedule = scenario_schedule(1);
  cfg.r_signal = {{0.0, 0.1}};
  cfg.dt = 1e-3;
  cfg.x0 = Vecd::Zero(3);
  cfg.theta_hat0 = Vecd::Zero(3);
  return cfg;
}

RunConfig scenario_config(int id, Variant variant, GradientMode mode, std::uint64_t seed) {
  RunConfig cfg = b747_config();
  cfg.schedule = scenario_schedule(id);
  cfg.preadapt.enabled = variant != Variant::rac;
  cfg.preadapt.learner_enabled = variant == Variant::learner;
  cfg.preadapt.mode = mode;
  cfg.preadapt.seed = seed;
  const char* tag = variant == Variant::rac ? "rac" : variant == Variant::preadapt ? "preadapt" : "learner";
  cfg.name = "scenario" + std::to_string(id) + "-" + tag;
  return cfg;
}

}  // namespace preadapt
