#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "preadapt/scenario_io.hpp"

using namespace preadapt;
using preadapt::io::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("preadapt_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json minimal() {
  return json::parse(R"({
    "schedule": {"pieces": [{"t_start": 0, "theta": 0.1}, {"t_start": 1, "theta": 1}], "horizon": 2}
  })");
}

std::string key_of(const json& doc) {
  try {
    io::config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

int cli(const std::string& args) {
  const std::string cmd = std::string(CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

const std::string scenario_dir = SCENARIO_DIR;

}  // namespace

TEST_CASE("minimal document takes the B-747 defaults") {
  const auto cfg = io::config_from_json(minimal());
  CHECK(cfg.plant_name == "b747");
  CHECK(cfg.dt == 1e-3);
  CHECK(cfg.gamma == 10.0);
  CHECK(cfg.attention.c_e == 0.005);
  CHECK(cfg.schedule.pieces[1].theta == Vecd::Constant(3, 1.0));
  CHECK(cfg.schedule.omega_lower == Vecd::Constant(3, -20.0));
  CHECK_FALSE(cfg.preadapt.enabled);
}

TEST_CASE("schema errors name the offending key") {
  auto doc = minimal();
  doc["bogus"] = 1;
  CHECK(key_of(doc) == "bogus");

  doc = minimal();
  doc["attention"] = {{"c_e", 0.01}, {"c_edd", 0.1}};
  CHECK(key_of(doc) == "attention.c_edd");

  doc = minimal();
  doc["dt"] = "fast";
  CHECK(key_of(doc) == "dt");

  doc = minimal();
  doc.erase("schedule");
  CHECK(key_of(doc) == "schedule");

  doc = minimal();
  doc["schedule"].erase("horizon");
  CHECK(key_of(doc) == "schedule.horizon");

  doc = minimal();
  doc["preadapt"] = {{"gradient_mode", "newton"}};
  CHECK(key_of(doc) == "preadapt.gradient_mode");

  doc = minimal();
  doc["preadapt"] = {{"learner", true}};
  CHECK(key_of(doc) == "preadapt.learner");

  doc = minimal();
  doc["plant"] = "f16";
  CHECK(key_of(doc) == "plant");

  doc = minimal();
  doc["x0"] = json::array({1, 2});
  CHECK(key_of(doc) == "x0");

  doc = minimal();
  doc["schedule"]["pieces"][1]["theta"] = 50;
  CHECK(key_of(doc) == "schedule");

  doc = minimal();
  doc["dt"] = 0.3;
  CHECK(key_of(doc) == "dt");
}

TEST_CASE("explicit plant matrices") {
  auto doc = minimal();
  doc["plant"] = json::parse(R"({"A": [[0, 1], [-1, -1]], "B": [0, 1], "B1r": [0, 0], "output_index": 1})");
  doc["schedule"]["pieces"][0]["theta"] = json::array({0.1, 0.1});
  doc["schedule"]["pieces"][1]["theta"] = 1.0;
  const auto cfg = io::config_from_json(doc);
  CHECK(cfg.plant.n() == 2);
  CHECK(cfg.plant.output_index == 0);
  CHECK(cfg.Q == Matd::Identity(2, 2));
  CHECK(cfg.x0.size() == 2);

  doc["plant"]["A"] = json::parse("[[0, 1], [-1]]");
  CHECK(key_of(doc) == "plant.A");
  doc["plant"]["A"] = json::parse("[[0, 0], [0, 0]]");
  doc["plant"]["B"] = json::parse("[0, 0]");
  CHECK(key_of(doc) == "plant");
}

TEST_CASE("effective config round-trips through JSON") {
  for (const char* name : {"scenario1_learner.json", "scenario3_exact.json"}) {
    const auto cfg = io::load_scenario(scenario_dir + "/" + name);
    const json echo = io::config_to_json(cfg);
    const auto back = io::config_from_json(echo);
    CHECK(io::config_to_json(back) == echo);
    CHECK(back.preadapt.mode == cfg.preadapt.mode);
    CHECK(back.schedule.horizon == cfg.schedule.horizon);
  }
}

TEST_CASE("bundled scenarios load") {
  for (const auto& entry : fs::directory_iterator(scenario_dir)) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(io::load_scenario(entry.path()));
  }
  const auto s3 = io::load_scenario(scenario_dir + "/scenario3_exact.json");
  CHECK(s3.preadapt.mode == GradientMode::exact);
  CHECK(s3.preadapt.learner_enabled);
}

TEST_CASE("malformed files are config errors") {
  const auto dir = scratch("malformed");
  write_text(dir / "bad.json", "{ \"schedule\": ");
  CHECK_THROWS_AS(io::load_scenario(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(io::load_scenario(dir / "missing.json"), ConfigError);
}

TEST_CASE("format_double reparses bit-identically") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> ex(-300, 300);
  for (int i = 0; i < 20000; ++i) {
    const double v = std::ldexp(mant(rng), ex(rng));
    const double back = std::strtod(io::format_double(v).c_str(), nullptr);
    REQUIRE(back == v);
  }
  for (double v : {0.0, -0.0, 1e-320, 0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308})
    CHECK(std::strtod(io::format_double(v).c_str(), nullptr) == v);
}

TEST_CASE("trace CSV round trip") {
  auto cfg = io::load_scenario(scenario_dir + "/scenario1_preadapt.json");
  const auto res = run(cfg);
  std::stringstream ss;
  io::write_trace_csv(ss, res.trace);

  std::string header;
  std::getline(ss, header);
  CHECK(header == "t,x1,x2,x3,xr1,xr2,xr3,e,edot_hat,theta1,theta2,theta3,theta_hat1,theta_hat2,theta_hat3,u,Eu,Ed");
  CHECK(header == io::trace_header(3));
  ss.seekg(0);
  const auto rows = io::read_csv_rows(ss);
  REQUIRE(rows.size() == res.trace.size());
  REQUIRE(rows.size() == 60001);
  for (std::size_t k = 0; k < rows.size(); k += 97) {
    const auto& r = rows[k];
    const auto& rec = res.trace[k];
    REQUIRE(r.size() == 18);
    CHECK(r[0] == rec.t);
    CHECK(r[1] == rec.x[0]);
    CHECK(r[5] == rec.x_r[1]);
    CHECK(r[7] == rec.e);
    CHECK(r[8] == rec.edot_hat);
    CHECK(r[14] == rec.theta_hat[2]);
    CHECK(r[15] == rec.u);
  }
  int onsets = 0;
  for (const auto& r : rows) onsets += r[16] == 1.0;
  CHECK(onsets == static_cast<int>(res.reinits.size()));
}

TEST_CASE("summary carries config, events and weights") {
  auto cfg = io::load_scenario(scenario_dir + "/scenario1_learner.json");
  const auto res = run(cfg);
  const json s = io::summary_to_json(cfg, res);
  CHECK(s["status"] == "ok");
  CHECK(s["seed"] == cfg.preadapt.seed);
  CHECK(s["events"].size() == res.events.size());
  CHECK(s["phase_reports"].size() == res.reports.size());
  CHECK(s["final_weights"]["W"]["data"].size() == 9);
  const auto net = io::weights_from_json(s["final_weights"]);
  CHECK(net.W == res.final_net.W);
  CHECK(net.V == res.final_net.V);
  // the echoed config reproduces the run exactly
  const auto again = run(io::config_from_json(s["config"]));
  CHECK(again.final_net.W == res.final_net.W);
  CHECK(again.trace.back().x == res.trace.back().x);
}

TEST_CASE("weights can be carried between runs") {
  const auto dir = scratch("weights");
  auto cfg = io::load_scenario(scenario_dir + "/scenario1_learner.json");
  const auto res = run(cfg);
  std::ofstream(dir / "summary.json") << io::summary_to_json(cfg, res).dump();

  json doc = io::config_to_json(cfg);
  doc["preadapt"].erase("initial_weights");
  doc["preadapt"]["weights_from"] = "summary.json";
  const auto loaded = io::config_from_json(doc, dir);
  REQUIRE(loaded.preadapt.initial_weights);
  CHECK(loaded.preadapt.initial_weights->W == res.final_net.W);

  doc["preadapt"]["initial_weights"] = io::weights_to_json(res.final_net);
  CHECK(key_of(doc) == "preadapt.weights_from");

  doc["preadapt"].erase("weights_from");
  doc["preadapt"]["initial_weights"]["W"]["data"] = json::array({1, 2});
  CHECK(key_of(doc) == "preadapt.initial_weights.W");
}

TEST_CASE("comparison outputs") {
  const auto a = io::load_scenario(scenario_dir + "/scenario1_rac.json");
  const auto cmp = compare(a, a);
  std::stringstream ss;
  io::write_comparison_csv(ss, cmp);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "t_jump,t_u_A,t_u_B,peakA,peakB,reduction_pct,E_A,E_B");
  int rows = 0;
  while (std::getline(ss, line)) ++rows;
  CHECK(rows == 3);
  const json j = io::comparison_to_json(cmp);
  for (const auto& r : j["rows"]) CHECK(r["reduction_pct"] == 0.0);
}

TEST_CASE("cli run writes outputs and is byte-reproducible") {
  const auto dir = scratch("cli_run");
  const std::string scen = scenario_dir + "/scenario1_learner.json";
  REQUIRE(cli("run " + scen + " --out " + (dir / "a").string()) == 0);
  REQUIRE(cli("run " + scen + " --out " + (dir / "b").string()) == 0);
  const auto ta = slurp(dir / "a" / "trace.csv");
  CHECK(ta == slurp(dir / "b" / "trace.csv"));
  CHECK(std::count(ta.begin(), ta.end(), '\n') == 60002);
  const json s = json::parse(slurp(dir / "a" / "summary.json"));
  CHECK(s["status"] == "ok");

  REQUIRE(cli("run " + scen + " --seed 9 --out " + (dir / "c").string()) == 0);
  CHECK(json::parse(slurp(dir / "c" / "summary.json"))["seed"] == 9);
  CHECK(slurp(dir / "c" / "trace.csv") != ta);

  REQUIRE(cli("run " + scen + " --dt 0.002 --out " + (dir / "d").string()) == 0);
  const auto td = slurp(dir / "d" / "trace.csv");
  CHECK(std::count(td.begin(), td.end(), '\n') == 30002);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli_codes");
  const std::string s1 = scenario_dir + "/scenario1_learner.json";
  write_text(dir / "bad.json", R"({"schedule": {"pieces": [{"t_start": 0, "theta": 0}], "horizon": 1}, "colour": 1})");
  CHECK(cli("run " + (dir / "bad.json").string() + " --out " + dir.string()) == 2);
  CHECK(cli("run /nonexistent.json --out " + dir.string()) == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("grad-check " + s1 + " --delta 0") == 2);
  CHECK(cli("grad-check " + s1 + " --phase 4") == 2);
  CHECK(cli("grad-check " + s1 + " --mode exact") == 0);
  CHECK(cli("grad-check " + s1 + " --mode approx") == 0);
  CHECK(cli("compare " + scenario_dir + "/scenario1_rac.json " + scenario_dir +
            "/scenario2_rac.json --out " + dir.string()) == 2);

  write_text(dir / "diverge.json", R"({
    "controller": {"gamma": 1e-12},
    "schedule": {"pieces": [{"t_start": 0, "theta": -20}], "horizon": 60}
  })");
  CHECK(cli("run " + (dir / "diverge.json").string() + " --out " + (dir / "div").string()) == 3);
  CHECK(fs::exists(dir / "div" / "trace.csv"));
  const json s = json::parse(slurp(dir / "div" / "summary.json"));
  CHECK(s["status"] == "diverged");
  CHECK(s.contains("failed_step"));
}

TEST_CASE("cli compare writes the table") {
  const auto dir = scratch("cli_compare");
  REQUIRE(cli("compare " + scenario_dir + "/scenario1_rac.json " + scenario_dir +
              "/scenario1_learner.json --out " + dir.string()) == 0);
  const auto csv = slurp(dir / "comparison.csv");
  CHECK(csv.find("\n45,") != std::string::npos);
  const json j = json::parse(slurp(dir / "comparison.json"));
  CHECK(j["rows"].size() == 3);
}
