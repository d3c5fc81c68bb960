#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "gridveil/csv.hpp"
#include "gridveil/error.hpp"
#include "gridveil/report.hpp"
#include "gridveil/runner.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gridveil;

namespace {

const fs::path& root() {
  static const fs::path r = [] {
    const auto p = fs::temp_directory_path() / "gridveil_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return r;
}

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args) {
  const auto log = root() / "last.log";
  const std::string cmd = "GRIDVEIL_OUTPUT_ROOT='" + root().string() + "' '" GRIDVEIL_CLI "' " +
                          args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string scenario(const char* name) {
  return std::string(GRIDVEIL_SCENARIO_DIR) + "/" + name + ".yaml";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_scenario(const std::string& name, const std::string& yaml) {
  const auto p = root() / (name + ".yaml");
  std::ofstream(p) << yaml;
  return p.string();
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(sim::exit_code(ErrorKind::Schema) == 2);
  CHECK(sim::exit_code(ErrorKind::InvalidConfig) == 2);
  CHECK(sim::exit_code(ErrorKind::Divergence) == 3);
  CHECK(sim::exit_code(ErrorKind::InfeasibleObjective) == 4);
  CHECK(sim::exit_code(ErrorKind::StealthViolation) == 5);
  CHECK(sim::exit_code(ErrorKind::Io) == 1);

  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("run").code == 2);
  const auto bad = cli("run " + write_scenario("bad", "schema_version: 1\ndt: -1\n"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("dt") != std::string::npos);
  CHECK(cli("run " + (root() / "missing.yaml").string()).code == 1);
  CHECK(cli("report " + (root() / "nowhere").string()).code == 1);
}

TEST_CASE("stealth violations and infeasible objectives exit with their own codes") {
  // A masked voltage ramp far beyond the stealth bound.
  const std::string stealth =
      "schema_version: 1\nname: loud\nduration: 6\nmicrogrid:\n  islanding_time: 1.0\n"
      "rootkit:\n  infection:\n    sensors: [dg1.q]\n  attack:\n"
      "    objective: {kind: voltage, target: dg1, ramp: 50, q_bias: 0}\n"
      "    targets: [dg1]\n    schedule: {policy: fixed, start: 4, end: 6}\n"
      "    mask: {enabled: true, scope: targets}\n"
      "vddm:\n  epochs: 2\n  recon_duration: 20\n";
  CHECK(cli("run --quiet " + write_scenario("loud", stealth)).code == 5);
  // Target search with no controller to act through.
  const std::string blind =
      "schema_version: 1\nname: blind\nduration: 6\nmicrogrid:\n  islanding_time: 1.0\n"
      "rootkit:\n  infection:\n    sensors: all\n  attack:\n"
      "    objective: {kind: frequency, offset: 0.05}\n"
      "    targets: auto\n    schedule: {policy: fixed, start: 4, end: 6}\n"
      "vddm:\n  epochs: 2\n  recon_duration: 20\n";
  const auto r = cli("run --quiet " + write_scenario("blind", blind));
  CHECK(r.code == 4);
}

TEST_CASE("run, report and train round trip") {
  const auto run = cli("run --quiet " + scenario("nominal"));
  REQUIRE(run.code == 0);
  const fs::path dir = root() / "nominal";
  for (const char* f : {"telemetry.csv", "alarm_log.csv", "events.csv", "attack_log.csv",
                        "scenario.resolved.yaml", "report.json"})
    CHECK(fs::exists(dir / f));
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j["status"] == "completed");
  for (const char* k : {"plant", "secondary_control", "load_sharing", "objective", "stealth"})
    CHECK(j["verdicts"][k] == "nominal");

  const auto rep = cli("report " + dir.string());
  CHECK(rep.code == 0);
  for (const auto& id : sim::figure_ids()) CHECK(fs::exists(dir / "figures" / (id + ".csv")));
  CHECK(fs::exists(dir / "summary.txt"));

  // Training from the recorded trace twice gives the same bundle.
  const std::string train = "train " + scenario("nominal") + " --trace " + (dir / "telemetry.csv").string();
  REQUIRE(cli(train).code == 0);
  const auto first = slurp(dir / "model" / "vddm.bundle");
  CHECK(fs::exists(dir / "model" / "fidelity.json"));
  CHECK(fs::exists(dir / "model" / "training_history.csv"));
  REQUIRE(cli(train).code == 0);
  CHECK(slurp(dir / "model" / "vddm.bundle") == first);
  CHECK_FALSE(first.empty());

  // A corrupt trace is rejected with the byte offset of the bad cell.
  std::string text = slurp(dir / "telemetry.csv");
  const auto table = csv::parse(text);
  const std::size_t col = table.column("rep.dg1.f");
  REQUIRE(col < table.header.size());
  const std::size_t cell = table.cell_offsets[table.rows.size() / 2][col];
  text.insert(cell, "x");
  std::ofstream(root() / "corrupt.csv", std::ios::binary) << text;
  const auto bad = cli("train " + scenario("nominal") + " --trace " + (root() / "corrupt.csv").string());
  CHECK(bad.code == 1);
  CHECK(bad.out.find("byte offset " + std::to_string(cell)) != std::string::npos);
}

TEST_CASE("a figure with a missing series names the figure") {
  const auto tel = csv::parse("t,dg1.omega\n0,50\n");
  try {
    sim::figure_csv("voltage", tel, 1, 1.0);
    FAIL("missing series accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'voltage'") != std::string::npos);
    CHECK(std::string(e.what()).find("dg1.v") != std::string::npos);
  }
  CHECK_NOTHROW(sim::figure_csv("frequency", tel, 1, 1.0));
}

TEST_CASE("calibrate prints the threshold and per-sensor bounds") {
  const auto r = cli("calibrate " + scenario("nominal"));
  CHECK(r.code == 0);
  CHECK(r.out.find("tau 19.08879") != std::string::npos);
  CHECK(r.out.find("dg4.v") != std::string::npos);
}
