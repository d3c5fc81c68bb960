#include <string>

#include "doctest.h"
#include "gridveil/error.hpp"
#include "gridveil/scenario.hpp"

using namespace gridveil;
using namespace gridveil::sim;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_scenario_text(yaml);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

bool mentions(const std::string& msg, const std::string& what) {
  return msg.find(what) != std::string::npos;
}

}  // namespace

TEST_CASE("a minimal file resolves to the four-DG reference plant") {
  const auto s = parse_scenario_text("schema_version: 1\n");
  CHECK(s.dg_count == 4);
  CHECK(s.p_rated.size() == 4);
  CHECK(s.network.line_impedance.size() == 4);
  CHECK(s.dt == 1e-3);
  CHECK(s.decimation == 10);
  CHECK_FALSE(s.rootkit);
  CHECK(emit_scenario(s) == emit_scenario(reference_scenario()));
}

TEST_CASE("field errors name the offending field") {
  const std::string neg = error_of("schema_version: 1\ndt: -0.001\n");
  CHECK(mentions(neg, "'dt'"));
  CHECK(mentions(neg, "line 2"));
  CHECK(mentions(error_of("schema_version: 1\ncolour: blue\n"), "colour"));
  CHECK(mentions(error_of("schema_version: 1\nmicrogrid:\n  dg_count: 0\n"), "microgrid.dg_count"));
  CHECK(mentions(error_of("schema_version: 2\n"), "schema_version"));
  CHECK(mentions(error_of("schema_version: 1\nrootkit:\n  infection:\n    sensors: [dg1.f, dg7.x]\n"),
                 "dg7.x"));
  CHECK(mentions(error_of("schema_version: 1\nduration: 5\nmicrogrid:\n  islanding_time: 6\n"),
                 "islanding_time"));
  CHECK(mentions(error_of("schema_version: 1\nvddm:\n  horizons: [0.015]\n"), "horizons"));
  CHECK(mentions(error_of("schema_version: 1\n: : :\n"), ""));
}

TEST_CASE("error kinds drive the exit codes") {
  try {
    parse_scenario_text("schema_version: 1\ndt: -1\n");
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK((e.kind() == ErrorKind::Schema || e.kind() == ErrorKind::InvalidConfig));
  }
  try {
    parse_scenario_text("schema_version: 1\nname: [x\n");
    FAIL("accepted");
  } catch (const Error& e) {
    // Malformed YAML is a scenario error too, reported with its line.
    CHECK(e.kind() == ErrorKind::Schema);
    CHECK(mentions(e.what(), "line"));
  }
}

TEST_CASE("emit then parse is a fixed point") {
  for (const char* name : {"nominal", "freq_attack", "volt_attack", "loadshare_attack"}) {
    const auto s = parse_scenario(std::string(GRIDVEIL_SCENARIO_DIR) + "/" + name + ".yaml");
    const std::string once = emit_scenario(s);
    const auto back = parse_scenario_text(once);
    CHECK(emit_scenario(back) == once);
    CHECK(back.name == name);
    CHECK(back.seed == s.seed);
    CHECK(back.rootkit.has_value() == s.rootkit.has_value());
  }
}

TEST_CASE("derived quantities") {
  auto s = reference_scenario();
  CHECK(s.sample_period() == doctest::Approx(0.01));
  CHECK(s.rated_current() > 0.0);
  s.protection.rated_current = 42.0;
  CHECK(s.rated_current() == 42.0);
  s.start_islanded = true;
  CHECK(s.expected_islanding() == 0.0);
}
