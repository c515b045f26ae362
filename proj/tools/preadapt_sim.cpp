#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "preadapt/errors.hpp"
#include "preadapt/scenario_io.hpp"
#include "preadapt/simengine.hpp"

namespace fs = std::filesystem;
using preadapt::io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitTolerance = 4;

constexpr double kGradTolerance = 1e-3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<std::string> mode;
};

void report_error(const std::string& kind, const std::string& message, const std::string& key = {}) {
  json err{{"error", kind}, {"message", message}};
  if (!key.empty()) err["key"] = key;
  std::cerr << err.dump() << '\n';
}

preadapt::RunConfig load(const std::string& path, const Overrides& ov) {
  preadapt::RunConfig cfg = preadapt::io::load_scenario(path);
  if (ov.seed) cfg.preadapt.seed = *ov.seed;
  if (ov.dt) cfg.dt = *ov.dt;
  if (ov.mode) {
    cfg.preadapt.mode = *ov.mode == "exact" ? preadapt::GradientMode::exact
                                            : preadapt::GradientMode::approximated;
  }
  preadapt::validate(cfg);
  return cfg;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

int cmd_run(const std::string& scenario, const fs::path& out_dir, const Overrides& ov) {
  const auto cfg = load(scenario, ov);
  fs::create_directories(out_dir);
  const auto res = preadapt::run(cfg);
  preadapt::io::write_trace_csv(out_dir / "trace.csv", res.trace);
  write_json(out_dir / "summary.json", preadapt::io::summary_to_json(cfg, res));

  std::cout << cfg.name << ": " << res.trace.size() << " records, " << res.events.size()
            << " events, " << res.reports.size() << " closed phases\n";
  for (const auto& p : res.phases) {
    std::cout << "  phase t_u=" << p.t_u << " peak|e|=" << p.peak_abs_e;
    if (p.t_d) std::cout << " t_d=" << *p.t_d << " E=" << p.E_phase;
    std::cout << '\n';
  }
  if (res.status == preadapt::RunStatus::diverged) {
    json err{{"error", "divergence"}, {"message", res.error}};
    if (res.failed_step) err["step"] = *res.failed_step;
    std::cerr << err.dump() << '\n';
    return kExitDivergence;
  }
  return kExitOk;
}

int cmd_compare(const std::string& a, const std::string& b, const fs::path& out_dir,
                const Overrides& ov) {
  const auto cfg_a = load(a, ov);
  const auto cfg_b = load(b, ov);
  const auto cmp = preadapt::compare(cfg_a, cfg_b);
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "comparison.csv");
    if (!out) throw std::runtime_error("cannot write comparison.csv");
    preadapt::io::write_comparison_csv(out, cmp);
  }
  write_json(out_dir / "comparison.json", preadapt::io::comparison_to_json(cmp));

  std::printf("%-8s %-10s %-10s %-12s %-12s %-10s %-10s %-10s\n", "t_jump", "t_u_A", "t_u_B",
              "peakA", "peakB", "reduce%", "E_A", "E_B");
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
  for (const auto& r : cmp.rows) {
    std::printf("%-8.3f %-10s %-10s %-12.6g %-12.6g %-10.2f %-10.6g %-10.6g\n", r.t_jump,
                opt(r.t_u_a).c_str(), opt(r.t_u_b).c_str(), r.peak_a, r.peak_b, 100.0 * r.reduction,
                r.E_a, r.E_b);
  }
  if (cmp.status_a == preadapt::RunStatus::diverged || cmp.status_b == preadapt::RunStatus::diverged) {
    report_error("divergence", "one of the compared runs diverged");
    return kExitDivergence;
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& scenario, std::size_t phase, double delta,
                  const std::optional<fs::path>& out_dir, const Overrides& ov) {
  const auto cfg = load(scenario, ov);
  const auto rep = preadapt::grad_check(cfg, phase, delta);

  std::printf("phase %zu  t_u=%.3f  t_d=%.3f  steps=%zu  delta=%g  E=%.10g\n", rep.phase_index,
              rep.t_u, rep.t_d, rep.steps, rep.delta, rep.E);
  std::printf("%-4s %-16s %-16s %-12s %-16s %-12s\n", "i", "central_diff", "exact", "rel_err",
              "approximated", "rel_err");
  for (preadapt::Index i = 0; i < rep.finite_difference.size(); ++i) {
    std::printf("%-4ld %-16.9e %-16.9e %-12.3e %-16.9e %-12.3e\n", static_cast<long>(i),
                rep.finite_difference[i], rep.exact[i], rep.rel_err_exact[i], rep.approximated[i],
                rep.rel_err_approximated[i]);
  }
  const double err_exact = rep.max_rel_err(preadapt::GradientMode::exact);
  const double err_approx = rep.max_rel_err(preadapt::GradientMode::approximated);
  const bool exact_mode = cfg.preadapt.mode == preadapt::GradientMode::exact;
  std::printf("max rel err: exact %.3e, approximated %.3e (tolerance %.0e)\n", err_exact, err_approx,
              kGradTolerance);
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_json(*out_dir / "gradcheck.json", preadapt::io::gradcheck_to_json(rep, kGradTolerance));
  }
  if (!exact_mode) {
    std::printf("ADVISORY: approximated mode, tolerance not enforced\n");
    return kExitOk;
  }
  const bool pass = err_exact < kGradTolerance;
  std::printf("%s\n", pass ? "PASS" : "FAIL");
  return pass ? kExitOk : kExitTolerance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRAC simulator with preadaptation"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  double dt = 0.0;
  std::string mode;
  std::vector<CLI::Option*> seed_opts, dt_opts, mode_opts;
  auto add_common = [&](CLI::App* sub) {
    seed_opts.push_back(sub->add_option("--seed", seed, "Override the network seed"));
    dt_opts.push_back(sub->add_option("--dt", dt, "Override the integration step")->check(CLI::PositiveNumber));
    mode_opts.push_back(sub->add_option("--mode", mode, "Gradient mode")
                            ->check(CLI::IsMember({"exact", "approx", "approximated"})));
  };

  std::string scenario, scenario_b;
  std::string out_dir = "out";
  std::string gc_out;
  std::size_t phase = 0;
  double delta = 1e-5;

  auto* run_cmd = app.add_subcommand("run", "Simulate one scenario");
  run_cmd->add_option("scenario", scenario, "Scenario file")->required();
  run_cmd->add_option("--out", out_dir, "Output directory");
  add_common(run_cmd);

  auto* cmp_cmd = app.add_subcommand("compare", "Compare two scenarios per schedule jump");
  cmp_cmd->add_option("scenario_a", scenario, "Baseline scenario file")->required();
  cmp_cmd->add_option("scenario_b", scenario_b, "Candidate scenario file")->required();
  cmp_cmd->add_option("--out", out_dir, "Output directory");
  add_common(cmp_cmd);

  auto* gc_cmd = app.add_subcommand("grad-check", "Check sensitivity gradients against finite differences");
  gc_cmd->add_option("scenario", scenario, "Scenario file")->required();
  gc_cmd->add_option("--phase", phase, "Zero-based index of a closed phase");
  gc_cmd->add_option("--delta", delta, "Central-difference step");
  gc_cmd->add_option("--out", gc_out, "Optional output directory for gradcheck.json");
  add_common(gc_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Overrides ov;
  auto given = [](const std::vector<CLI::Option*>& opts) {
    for (const auto* o : opts)
      if (o->count() > 0) return true;
    return false;
  };
  if (given(seed_opts)) ov.seed = seed;
  if (given(dt_opts)) ov.dt = dt;
  if (given(mode_opts)) ov.mode = mode;

  try {
    if (*run_cmd) return cmd_run(scenario, out_dir, ov);
    if (*cmp_cmd) return cmd_compare(scenario, scenario_b, out_dir, ov);
    if (!(delta > 0.0)) {
      report_error("usage", "--delta must be positive");
      return kExitConfig;
    }
    return cmd_gradcheck(scenario, phase, delta,
                         gc_out.empty() ? std::nullopt : std::optional<fs::path>(gc_out), ov);
  } catch (const preadapt::ConfigError& e) {
    report_error("config", e.what(), e.key());
    return kExitConfig;
  } catch (const preadapt::ContractError& e) {
    report_error("config", e.what());
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    report_error("config", e.what());
    return kExitConfig;
  } catch (const preadapt::DivergenceError& e) {
    report_error("divergence", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
}
