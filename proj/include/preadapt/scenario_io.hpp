#pragma once

// Scenario files (JSON), trace CSV and run-summary serialization.
//
// A scenario file is a JSON object; every key is optional except where noted
// and unknown keys are rejected:
//
//   name            string
//   plant           "b747" | {A: [[..]], B: [..], B1r: [..], output_index: 1-based}
//   controller      {Q: "identity" | [[..]], R, gamma, k0}
//   attention       {c_e, c_ed, tau_f}
//   preadapt        {enabled, learner, gradient_mode: "exact"|"approximated",
//                    gamma_pa, hidden_width, seed, init_scale, grad_clip,
//                    initial_weights: {W: {rows, cols, data}, V: {...}},
//                    weights_from: path to a summary.json}
//   schedule        {pieces: [{t_start, theta: number | [..]}], horizon,
//                    omega: {lower: number | [..], upper: number | [..]}}   (required)
//   reference       {r: number | [{t_start, value}]}
//   dt, x0, theta_hat0

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "preadapt/simengine.hpp"

namespace preadapt::io {

using nlohmann::json;

/// Parses and validates a scenario document. Relative `weights_from` paths
/// resolve against `base_dir`.
RunConfig config_from_json(const json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_scenario(const std::filesystem::path& path);

/// Fully materialized config; config_from_json(config_to_json(c)) reproduces c.
json config_to_json(const RunConfig& cfg);

json weights_to_json(const PreadaptNet<double>& net);
PreadaptNet<double> weights_from_json(const json& j);
/// Reads the final weights stored in a run summary.
PreadaptNet<double> load_weights(const std::filesystem::path& summary_path);

/// %.17g formatting; reparses to the identical double.
std::string format_double(double v);

std::string trace_header(Index n);
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRecord>& trace);

/// Parses a trace CSV back into rows of doubles (header skipped).
std::vector<std::vector<double>> read_csv_rows(std::istream& is);

json summary_to_json(const RunConfig& cfg, const RunResult& res);

void write_comparison_csv(std::ostream& os, const Comparison& cmp);
json comparison_to_json(const Comparison& cmp);

json gradcheck_to_json(const GradCheckReport& rep, double tolerance);

}  // namespace preadapt::io
