#include "preadapt/scenario_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

namespace preadapt::io {

namespace {

using Path = std::filesystem::path;

void require_object(const json& j, const std::string& key) {
  if (!j.is_object()) throw ConfigError(key, "expected an object");
}

void reject_unknown(const json& j, const std::string& prefix,
                    std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError(prefix.empty() ? k : prefix + "." + k, "unknown key");
  }
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

double number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key, "expected a number");
  return j.get<double>();
}

bool boolean(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key, "expected true or false");
  return j.get<bool>();
}

Vecd vector_of(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError(key, "expected an array of numbers");
  Vecd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = number(j[i], key);
  return v;
}

// Scalar broadcast to n entries or an explicit n-vector.
Vecd vector_or_scalar(const json& j, Index n, const std::string& key) {
  if (j.is_number()) return Vecd::Constant(n, j.get<double>());
  Vecd v = vector_of(j, key);
  if (v.size() != n) throw ConfigError(key, "expected " + std::to_string(n) + " entries");
  return v;
}

Matd matrix_of(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError(key, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(key, "expected an array of rows");
  Matd m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(key, "ragged matrix");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Index>(r), static_cast<Index>(c)) = number(j[r][c], key);
  }
  return m;
}

json matrix_json(const Matd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Vecd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json flat_matrix(const Matd& m) {
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matd flat_matrix_from(const json& j, const std::string& key) {
  require_object(j, key);
  reject_unknown(j, key, {"rows", "cols", "data"});
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ConfigError(key, "expected rows, cols and data");
  const auto rows = static_cast<Index>(number(j["rows"], key + ".rows"));
  const auto cols = static_cast<Index>(number(j["cols"], key + ".cols"));
  const Vecd data = vector_of(j["data"], key + ".data");
  if (rows <= 0 || cols <= 0 || data.size() != rows * cols)
    throw ConfigError(key, "data length does not match rows x cols");
  Matd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

PlantConfig<double> parse_plant(const json& j, std::string& plant_name) {
  if (j.is_string()) {
    if (j.get<std::string>() != "b747") throw ConfigError("plant", "unknown plant name");
    plant_name = "b747";
    return b747_plant();
  }
  require_object(j, "plant");
  reject_unknown(j, "plant", {"A", "B", "B1r", "output_index"});
  for (const char* k : {"A", "B", "B1r", "output_index"})
    if (!j.contains(k)) throw ConfigError(join("plant", k), "required");
  plant_name = "custom";
  const double idx = number(j["output_index"], "plant.output_index");
  try {
    return make_plant<double>(matrix_of(j["A"], "plant.A"), vector_of(j["B"], "plant.B"),
                              vector_of(j["B1r"], "plant.B1r"), static_cast<Index>(idx) - 1);
  } catch (const ContractError& e) {
    throw ConfigError("plant", e.what());
  }
}

GradientMode parse_mode(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key, "expected \"exact\" or \"approximated\"");
  const auto s = j.get<std::string>();
  if (s == "exact") return GradientMode::exact;
  if (s == "approximated" || s == "approx") return GradientMode::approximated;
  throw ConfigError(key, "expected \"exact\" or \"approximated\"");
}

}  // namespace

json weights_to_json(const PreadaptNet<double>& net) {
  return json{{"hidden_width", net.hidden_width()},
              {"n", net.output_dim()},
              {"W", flat_matrix(net.W)},
              {"V", flat_matrix(net.V)}};
}

PreadaptNet<double> weights_from_json(const json& j) {
  const std::string key = "preadapt.initial_weights";
  require_object(j, key);
  reject_unknown(j, key, {"hidden_width", "n", "W", "V"});
  if (!j.contains("W") || !j.contains("V")) throw ConfigError(key, "expected W and V");
  try {
    auto net = make_net<double>(flat_matrix_from(j["W"], key + ".W"),
                                flat_matrix_from(j["V"], key + ".V"));
    if (j.contains("hidden_width") && number(j["hidden_width"], key) != net.hidden_width())
      throw ConfigError(key + ".hidden_width", "does not match W");
    if (j.contains("n") && number(j["n"], key) != net.output_dim())
      throw ConfigError(key + ".n", "does not match W");
    return net;
  } catch (const ContractError& e) {
    throw ConfigError(key, e.what());
  }
}

PreadaptNet<double> load_weights(const Path& summary_path) {
  std::ifstream in(summary_path);
  if (!in) throw ConfigError("preadapt.weights_from", "cannot open " + summary_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("preadapt.weights_from", e.what());
  }
  if (!doc.contains("final_weights"))
    throw ConfigError("preadapt.weights_from", "summary has no final_weights");
  return weights_from_json(doc["final_weights"]);
}

RunConfig config_from_json(const json& doc, const Path& base_dir) {
  require_object(doc, "");
  reject_unknown(doc, "", {"name", "plant", "controller", "attention", "preadapt", "schedule",
                           "reference", "dt", "x0", "theta_hat0"});
  RunConfig cfg = b747_config();
  cfg.name = "custom";

  if (doc.contains("name")) {
    if (!doc["name"].is_string()) throw ConfigError("name", "expected a string");
    cfg.name = doc["name"].get<std::string>();
  }
  if (doc.contains("plant")) cfg.plant = parse_plant(doc["plant"], cfg.plant_name);
  const Index n = cfg.plant.n();
  if (n != 3) {
    cfg.Q = Matd::Identity(n, n);
    cfg.x0 = Vecd::Zero(n);
    cfg.theta_hat0 = Vecd::Zero(n);
  }

  if (doc.contains("controller")) {
    const auto& c = doc["controller"];
    require_object(c, "controller");
    reject_unknown(c, "controller", {"Q", "R", "gamma", "k0"});
    if (c.contains("Q")) {
      if (c["Q"].is_string()) {
        if (c["Q"].get<std::string>() != "identity")
          throw ConfigError("controller.Q", "expected \"identity\" or a matrix");
        cfg.Q = Matd::Identity(n, n);
      } else {
        cfg.Q = matrix_of(c["Q"], "controller.Q");
      }
    }
    if (c.contains("R")) cfg.R = number(c["R"], "controller.R");
    if (c.contains("gamma")) cfg.gamma = number(c["gamma"], "controller.gamma");
    if (c.contains("k0")) cfg.k0 = number(c["k0"], "controller.k0");
  }

  if (doc.contains("attention")) {
    const auto& a = doc["attention"];
    require_object(a, "attention");
    reject_unknown(a, "attention", {"c_e", "c_ed", "tau_f"});
    if (a.contains("c_e")) cfg.attention.c_e = number(a["c_e"], "attention.c_e");
    if (a.contains("c_ed")) cfg.attention.c_ed = number(a["c_ed"], "attention.c_ed");
    if (a.contains("tau_f")) cfg.attention.tau_f = number(a["tau_f"], "attention.tau_f");
  }

  if (doc.contains("preadapt")) {
    const auto& p = doc["preadapt"];
    auto& pa = cfg.preadapt;
    require_object(p, "preadapt");
    reject_unknown(p, "preadapt", {"enabled", "learner", "gradient_mode", "gamma_pa",
                                   "hidden_width", "seed", "init_scale", "grad_clip",
                                   "initial_weights", "weights_from"});
    if (p.contains("enabled")) pa.enabled = boolean(p["enabled"], "preadapt.enabled");
    if (p.contains("learner")) pa.learner_enabled = boolean(p["learner"], "preadapt.learner");
    if (p.contains("gradient_mode")) pa.mode = parse_mode(p["gradient_mode"], "preadapt.gradient_mode");
    if (p.contains("gamma_pa")) pa.gamma_pa = number(p["gamma_pa"], "preadapt.gamma_pa");
    if (p.contains("hidden_width")) {
      if (!p["hidden_width"].is_number_integer())
        throw ConfigError("preadapt.hidden_width", "expected an integer");
      pa.hidden_width = p["hidden_width"].get<Index>();
    }
    if (p.contains("seed")) {
      if (!p["seed"].is_number_unsigned()) throw ConfigError("preadapt.seed", "expected an unsigned integer");
      pa.seed = p["seed"].get<std::uint64_t>();
    }
    if (p.contains("init_scale")) pa.init_scale = number(p["init_scale"], "preadapt.init_scale");
    if (p.contains("grad_clip") && !p["grad_clip"].is_null())
      pa.grad_clip = number(p["grad_clip"], "preadapt.grad_clip");
    if (p.contains("initial_weights") && p.contains("weights_from"))
      throw ConfigError("preadapt.weights_from", "conflicts with initial_weights");
    if (p.contains("initial_weights") && !p["initial_weights"].is_null())
      pa.initial_weights = weights_from_json(p["initial_weights"]);
    if (p.contains("weights_from")) {
      if (!p["weights_from"].is_string()) throw ConfigError("preadapt.weights_from", "expected a path");
      Path w = p["weights_from"].get<std::string>();
      if (w.is_relative()) w = base_dir / w;
      pa.initial_weights = load_weights(w);
    }
  }

  if (!doc.contains("schedule")) throw ConfigError("schedule", "required");
  {
    const auto& s = doc["schedule"];
    require_object(s, "schedule");
    reject_unknown(s, "schedule", {"pieces", "horizon", "omega"});
    if (!s.contains("pieces")) throw ConfigError("schedule.pieces", "required");
    if (!s.contains("horizon")) throw ConfigError("schedule.horizon", "required");
    if (!s["pieces"].is_array()) throw ConfigError("schedule.pieces", "expected an array");
    std::vector<ThetaSchedule<double>::Piece> pieces;
    for (const auto& piece : s["pieces"]) {
      require_object(piece, "schedule.pieces");
      reject_unknown(piece, "schedule.pieces", {"t_start", "theta"});
      if (!piece.contains("t_start") || !piece.contains("theta"))
        throw ConfigError("schedule.pieces", "each piece needs t_start and theta");
      pieces.push_back({number(piece["t_start"], "schedule.pieces.t_start"),
                        vector_or_scalar(piece["theta"], n, "schedule.pieces.theta")});
    }
    Vecd lo = Vecd::Constant(n, -20.0);
    Vecd hi = Vecd::Constant(n, 20.0);
    if (s.contains("omega")) {
      const auto& o = s["omega"];
      require_object(o, "schedule.omega");
      reject_unknown(o, "schedule.omega", {"lower", "upper"});
      if (o.contains("lower")) lo = vector_or_scalar(o["lower"], n, "schedule.omega.lower");
      if (o.contains("upper")) hi = vector_or_scalar(o["upper"], n, "schedule.omega.upper");
    }
    try {
      cfg.schedule = make_schedule<double>(std::move(pieces), number(s["horizon"], "schedule.horizon"),
                                           lo, hi);
    } catch (const ContractError& e) {
      throw ConfigError("schedule", e.what());
    }
  }

  if (doc.contains("reference")) {
    const auto& r = doc["reference"];
    require_object(r, "reference");
    reject_unknown(r, "reference", {"r"});
    if (r.contains("r")) {
      const auto& sig = r["r"];
      if (sig.is_number()) {
        cfg.r_signal = {{0.0, sig.get<double>()}};
      } else if (sig.is_array()) {
        cfg.r_signal.clear();
        for (const auto& piece : sig) {
          require_object(piece, "reference.r");
          reject_unknown(piece, "reference.r", {"t_start", "value"});
          if (!piece.contains("t_start") || !piece.contains("value"))
            throw ConfigError("reference.r", "each piece needs t_start and value");
          cfg.r_signal.push_back({number(piece["t_start"], "reference.r.t_start"),
                                  number(piece["value"], "reference.r.value")});
        }
      } else {
        throw ConfigError("reference.r", "expected a number or an array of pieces");
      }
    }
  }

  if (doc.contains("dt")) cfg.dt = number(doc["dt"], "dt");
  if (doc.contains("x0")) cfg.x0 = vector_or_scalar(doc["x0"], n, "x0");
  if (doc.contains("theta_hat0")) cfg.theta_hat0 = vector_or_scalar(doc["theta_hat0"], n, "theta_hat0");

  validate(cfg);
  return cfg;
}

RunConfig load_scenario(const Path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed scenario file: ") + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

json config_to_json(const RunConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  if (cfg.plant_name == "b747") {
    doc["plant"] = "b747";
  } else {
    doc["plant"] = json{{"A", matrix_json(cfg.plant.A)},
                        {"B", vector_json(cfg.plant.B)},
                        {"B1r", vector_json(cfg.plant.B1r)},
                        {"output_index", cfg.plant.output_index + 1}};
  }
  doc["controller"] = json{{"Q", matrix_json(cfg.Q)}, {"R", cfg.R}, {"gamma", cfg.gamma}, {"k0", cfg.k0}};
  doc["attention"] = json{{"c_e", cfg.attention.c_e},
                          {"c_ed", cfg.attention.c_ed},
                          {"tau_f", cfg.attention.tau_f}};
  const auto& pa = cfg.preadapt;
  json p{{"enabled", pa.enabled},
         {"learner", pa.learner_enabled},
         {"gradient_mode", std::string(to_string(pa.mode))},
         {"gamma_pa", pa.gamma_pa},
         {"hidden_width", pa.hidden_width},
         {"seed", pa.seed},
         {"init_scale", pa.init_scale},
         {"grad_clip", pa.grad_clip ? json(*pa.grad_clip) : json(nullptr)}};
  if (pa.initial_weights) p["initial_weights"] = weights_to_json(*pa.initial_weights);
  doc["preadapt"] = p;

  json pieces = json::array();
  for (const auto& piece : cfg.schedule.pieces)
    pieces.push_back(json{{"t_start", piece.t_start}, {"theta", vector_json(piece.theta)}});
  doc["schedule"] = json{{"pieces", pieces},
                         {"horizon", cfg.schedule.horizon},
                         {"omega", json{{"lower", vector_json(cfg.schedule.omega_lower)},
                                        {"upper", vector_json(cfg.schedule.omega_upper)}}}};
  json r = json::array();
  for (const auto& piece : cfg.r_signal) r.push_back(json{{"t_start", piece.t_start}, {"value", piece.value}});
  doc["reference"] = json{{"r", r}};
  doc["dt"] = cfg.dt;
  doc["x0"] = vector_json(cfg.x0);
  doc["theta_hat0"] = vector_json(cfg.theta_hat0);
  return doc;
}

std::string format_double(double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

std::string trace_header(Index n) {
  std::string h = "t";
  auto block = [&](const char* prefix) {
    for (Index i = 1; i <= n; ++i) h += "," + std::string(prefix) + std::to_string(i);
  };
  block("x");
  block("xr");
  h += ",e,edot_hat";
  block("theta");
  block("theta_hat");
  h += ",u,Eu,Ed";
  return h;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
  const Index n = trace.empty() ? 0 : trace.front().x.size();
  os << trace_header(n) << '\n';
  std::string line;
  for (const auto& rec : trace) {
    line = format_double(rec.t);
    auto put = [&](double v) {
      line += ',';
      line += format_double(v);
    };
    for (Index i = 0; i < n; ++i) put(rec.x[i]);
    for (Index i = 0; i < n; ++i) put(rec.x_r[i]);
    put(rec.e);
    put(rec.edot_hat);
    for (Index i = 0; i < n; ++i) put(rec.theta[i]);
    for (Index i = 0; i < n; ++i) put(rec.theta_hat[i]);
    put(rec.u);
    line += rec.onset ? ",1" : ",0";
    line += rec.recovery ? ",1" : ",0";
    os << line << '\n';
  }
}

void write_trace_csv(const Path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_trace_csv(out, trace);
}

std::vector<std::vector<double>> read_csv_rows(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

json summary_to_json(const RunConfig& cfg, const RunResult& res) {
  json doc;
  doc["status"] = res.status == RunStatus::ok ? "ok" : "diverged";
  if (res.failed_step) doc["failed_step"] = *res.failed_step;
  if (!res.error.empty()) doc["error"] = res.error;
  doc["seed"] = cfg.preadapt.seed;
  doc["config"] = config_to_json(cfg);
  doc["controller"] = json{{"K", matrix_json(res.controller.K)}, {"P", matrix_json(res.controller.P)}};

  json events = json::array();
  for (const auto& e : res.events)
    events.push_back(json{{"t", e.t}, {"step", e.step}, {"kind", e.kind == EventKind::onset ? "E_u" : "E_d"}});
  doc["events"] = events;

  json phases = json::array();
  for (const auto& p : res.phases) {
    phases.push_back(json{{"t_u", p.t_u},
                          {"t_d", p.t_d ? json(*p.t_d) : json(nullptr)},
                          {"peak_abs_e", p.peak_abs_e},
                          {"E_phase", p.E_phase},
                          {"recovered", p.recovered}});
  }
  doc["phases"] = phases;

  json reports = json::array();
  for (const auto& r : res.reports) {
    json grad = json::array();
    for (Index i = 0; i < r.dE_dthI.size(); ++i) grad.push_back(r.dE_dthI[i]);
    reports.push_back(json{{"t_u", r.t_u},
                           {"t_d", r.t_d},
                           {"E_acc", r.E_acc},
                           {"dE_dtheta_I", grad},
                           {"grad_W_norm", r.grad_W_norm},
                           {"grad_V_norm", r.grad_V_norm},
                           {"mode", std::string(to_string(r.mode))},
                           {"update_applied", r.update_applied}});
  }
  doc["phase_reports"] = reports;
  doc["initial_weights"] = weights_to_json(res.initial_net);
  doc["final_weights"] = weights_to_json(res.final_net);
  doc["log"] = res.log;
  return doc;
}

void write_comparison_csv(std::ostream& os, const Comparison& cmp) {
  os << "t_jump,t_u_A,t_u_B,peakA,peakB,reduction_pct,E_A,E_B\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : cmp.rows) {
    os << format_double(r.t_jump) << ',' << opt(r.t_u_a) << ',' << opt(r.t_u_b) << ','
       << format_double(r.peak_a) << ',' << format_double(r.peak_b) << ','
       << format_double(100.0 * r.reduction) << ',' << format_double(r.E_a) << ','
       << format_double(r.E_b) << '\n';
  }
}

json comparison_to_json(const Comparison& cmp) {
  json rows = json::array();
  for (const auto& r : cmp.rows) {
    rows.push_back(json{{"t_jump", r.t_jump},
                        {"t_end", r.t_end},
                        {"t_u_A", r.t_u_a ? json(*r.t_u_a) : json(nullptr)},
                        {"t_u_B", r.t_u_b ? json(*r.t_u_b) : json(nullptr)},
                        {"peak_A", r.peak_a},
                        {"peak_B", r.peak_b},
                        {"reduction_pct", 100.0 * r.reduction},
                        {"E_A", r.E_a},
                        {"E_B", r.E_b}});
  }
  auto status = [](RunStatus s) { return s == RunStatus::ok ? "ok" : "diverged"; };
  return json{{"A", cmp.name_a},
              {"B", cmp.name_b},
              {"status_A", status(cmp.status_a)},
              {"status_B", status(cmp.status_b)},
              {"rows", rows}};
}

json gradcheck_to_json(const GradCheckReport& rep, double tolerance) {
  return json{{"phase_index", rep.phase_index},
              {"t_u", rep.t_u},
              {"t_d", rep.t_d},
              {"steps", rep.steps},
              {"delta", rep.delta},
              {"E", rep.E},
              {"theta_I", vector_json(rep.theta_I)},
              {"finite_difference", vector_json(rep.finite_difference)},
              {"exact", vector_json(rep.exact)},
              {"approximated", vector_json(rep.approximated)},
              {"rel_err_exact", vector_json(rep.rel_err_exact)},
              {"rel_err_approximated", vector_json(rep.rel_err_approximated)},
              {"tolerance", tolerance},
              {"exact_pass", rep.max_rel_err(GradientMode::exact) < tolerance},
              {"recorded_matches", rep.recorded_matches}};
}

}  // namespace preadapt::io
