#include <doctest.h>

#include <cmath>

#include "preadapt/attention.hpp"

using namespace preadapt;

namespace {

// Feeds e(t_k) through estimator and detector, returning the final state.
template <typename F>
AttentionState drive(F e_of_t, int steps, double dt, double tau_f = 0.05) {
  AttentionConfig cfg;
  cfg.tau_f = tau_f;
  AttentionState s;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * dt;
    const double e = e_of_t(t);
    const double ed = velocity_estimate(s, e, dt, tau_f);
    detect_events(cfg, s, e, ed, t);
  }
  return s;
}

}  // namespace

TEST_CASE("velocity estimate of a constant decays to zero") {
  AttentionState s;
  s.e_prev = 0.3;
  s.edot_hat = 2.0;
  double ed = 0.0;
  for (int k = 0; k < 2000; ++k) {
    ed = velocity_estimate(s, 0.3, 1e-3, 0.05);
    s.edot_hat = ed;
  }
  CHECK(std::abs(ed) < 1e-12);
}

TEST_CASE("velocity estimate tracks a ramp slope") {
  const auto s = drive([](double t) { return t; }, 1000, 1e-3);
  CHECK(s.edot_hat == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("velocity estimate first call at rest is zero") {
  AttentionState s;
  CHECK(velocity_estimate(s, 0.0, 1e-3, 0.05) == 0.0);
}

TEST_CASE("velocity estimate matches the filter recursion") {
  AttentionState s;
  s.e_prev = 0.01;
  s.edot_hat = 0.5;
  const double dt = 1e-3, tau = 0.05;
  const double expected = 0.5 + (dt / tau) * ((0.012 - 0.01) / dt - 0.5);
  CHECK(velocity_estimate(s, 0.012, dt, tau) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(s.edot_hat == 0.5);
  CHECK_THROWS_AS(velocity_estimate(s, 0.0, 0.0, tau), ContractError);
}

TEST_CASE("upward crossing with fast rate is an onset") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.004;
  const auto ev = detect_events(cfg, s, 0.006, 0.05, 2.0);
  CHECK(ev.onset);
  CHECK_FALSE(ev.recovery);
  CHECK(ev.attention());
  CHECK(s.in_disturbance);
  CHECK(s.t_u == 2.0);
  CHECK(s.e_prev == 0.006);
  CHECK(s.edot_hat == 0.05);
}

TEST_CASE("downward crossing with slow rate is a recovery") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.006;
  s.in_disturbance = true;
  const auto ev = detect_events(cfg, s, 0.004, 0.001, 7.0);
  CHECK_FALSE(ev.onset);
  CHECK(ev.recovery);
  CHECK(ev.attention());
  CHECK_FALSE(s.in_disturbance);
  CHECK(s.t_d == 7.0);
}

TEST_CASE("no crossing below threshold") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.004;
  const auto ev = detect_events(cfg, s, 0.004, 0.5, 1.0);
  CHECK_FALSE(ev.attention());
}

TEST_CASE("negative errors cross on magnitude") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = -0.004;
  CHECK(detect_events(cfg, s, -0.006, -0.05, 0.0).onset);
}

TEST_CASE("rate gate blocks slow onsets and fast recoveries") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.004;
  CHECK_FALSE(detect_events(cfg, s, 0.006, 0.02, 0.0).onset);  // rate must exceed c_ed strictly

  AttentionState d;
  d.e_prev = 0.006;
  d.in_disturbance = true;
  CHECK_FALSE(detect_events(cfg, d, 0.004, 0.02, 0.0).recovery);
}

TEST_CASE("events strictly alternate") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.004;
  CHECK(detect_events(cfg, s, 0.006, 0.05, 0.0).onset);
  // another upward crossing while in a disturbance is not an onset
  s.e_prev = 0.004;
  CHECK_FALSE(detect_events(cfg, s, 0.006, 0.05, 0.1).onset);

  // a recovery outside a disturbance is ignored
  AttentionState q;
  q.e_prev = 0.006;
  CHECK_FALSE(detect_events(cfg, q, 0.004, 0.001, 0.0).recovery);
}

TEST_CASE("threshold boundaries follow the predicate") {
  AttentionConfig cfg;
  AttentionState s;
  s.e_prev = 0.004;
  CHECK(detect_events(cfg, s, 0.005, 0.05, 0.0).onset);  // |e| - c_e >= 0 at equality

  AttentionState d;
  d.e_prev = 0.006;
  d.in_disturbance = true;
  CHECK(detect_events(cfg, d, 0.005, 0.0, 0.0).recovery);  // |e| - c_e <= 0 at equality

  AttentionState at;
  at.e_prev = 0.005;  // starting exactly on the threshold is not below it
  CHECK_FALSE(detect_events(cfg, at, 0.006, 0.05, 0.0).onset);
}

TEST_CASE("attention config validation") {
  AttentionConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.c_ed = 0.0;
  CHECK_THROWS_AS(validate(cfg), ContractError);
  cfg = AttentionConfig{};
  cfg.tau_f = -1.0;
  CHECK_THROWS_AS(validate(cfg), ContractError);
}
