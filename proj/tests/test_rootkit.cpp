#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "gridveil/error.hpp"
#include "gridveil/rootkit.hpp"
#include "gridveil/runner.hpp"

using namespace gridveil;
using namespace gridveil::rootkit;

namespace {

constexpr std::size_t kDgs = 4;

mg::DroopParams droop() { return sim::reference_scenario().droop(); }

InfectionSet everything() {
  InfectionSet z;
  z.sensors = mg::sensor_ids(kDgs);
  z.controllers = {0, 1, 2, 3};
  z.pcc_access = true;
  return z;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;  // sentinel: nothing thrown
}

// Linear stand-in for a trained model. Every frequency output is
// sum_j coupling[j] * f_j; the other outputs copy their own sensor.
vddm::VddmModel linear_model(const Vector& coupling) {
  const auto ids = mg::dg_sensor_ids(kDgs);
  const auto d = droop();
  auto w = neural::NetworkWeights::zeros({{ids.size() + 1, 4 * kDgs}, neural::Activation::Identity});
  for (std::size_t i = 0; i < kDgs; ++i) {
    for (std::size_t j = 0; j < kDgs; ++j) w.w[0](4 * i, 4 * j) = coupling[j];  // f_j
    w.w[0](4 * i + 1, 4 * i + 3) = 1.0;                                          // v
    w.w[0](4 * i + 2, 4 * i + 1) = d.d_p[i];                                     // p
    w.w[0](4 * i + 3, 4 * i + 2) = d.d_q[i];                                     // q
  }
  vddm::VddmModel m;
  m.net = {w, neural::Normalization::identity(ids.size() + 1, 4 * kDgs)};
  m.sensor_ids = ids;
  m.horizons = {0.01, 0.05};
  m.d_p = d.d_p;
  m.d_q = d.d_q;
  m.model_version = "linear-test";
  return m;
}

vddm::MeasurementVector operating_point(double t = 0.0) {
  vddm::MeasurementVector m{mg::sensor_ids(kDgs), {}, t};
  for (const auto& id : m.sensor_ids) {
    switch (id.back()) {
      case 'f': m.values.push_back(50.0); break;
      case 'p': m.values.push_back(5000.0); break;
      case 'q': m.values.push_back(2000.0); break;
      case 'i': m.values.push_back(1.0); break;
      default: m.values.push_back(311.0); break;
    }
  }
  return m;
}

vddm::AlphaBound uniform_bound(double b) {
  vddm::AlphaBound out;
  for (const auto& id : mg::dg_sensor_ids(kDgs)) out[id] = b;
  return out;
}

double value_of(const vddm::MeasurementVector& m, const std::string& id) {
  const auto it = std::find(m.sensor_ids.begin(), m.sensor_ids.end(), id);
  REQUIRE(it != m.sensor_ids.end());
  return m.values[static_cast<std::size_t>(it - m.sensor_ids.begin())];
}

sim::Scenario load(const char* name) {
  return sim::parse_scenario(std::string(GRIDVEIL_SCENARIO_DIR) + "/" + name + ".yaml");
}

}  // namespace

TEST_CASE("infection sets are normalized and checked") {
  InfectionSet z;
  CHECK(kind_of([&] { z.validate(kDgs); }) == ErrorKind::InvalidConfig);
  z.sensors = {"dg2.f", "pcc.i", "dg1.q", "dg2.f"};
  z.normalize(kDgs);
  CHECK(z.sensors == std::vector<std::string>{"dg1.q", "dg2.f", "pcc.i"});
  CHECK(z.dg_sensors() == std::vector<std::string>{"dg1.q", "dg2.f"});
  z.sensors.push_back("dg9.f");
  try {
    z.validate(kDgs);
    FAIL("unknown id accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("dg9.f") != std::string::npos);
  }
}

TEST_CASE("plan guards") {
  const auto d = droop();
  const auto z = everything();
  const auto bound = uniform_bound(100.0);
  const AttackWindow w{5.0, 10.0};
  const FrequencyManipulation f{0.05};
  CHECK_NOTHROW(make_plan(f, {0, 0, 2}, w, false, MaskScope::Targets, z, d, bound));
  CHECK(make_plan(f, {2, 0, 0}, w, false, MaskScope::Targets, z, d, bound).targets ==
        std::vector<std::size_t>{0, 2});
  CHECK(kind_of([&] { make_plan(f, {0}, {5.0, 5.0}, false, MaskScope::Targets, z, d, bound); }) ==
        ErrorKind::InvalidPlan);
  CHECK(kind_of([&] { make_plan(f, {}, w, false, MaskScope::Targets, z, d, bound); }) ==
        ErrorKind::InvalidPlan);
  CHECK(kind_of([&] { make_plan(f, {7}, w, false, MaskScope::Targets, z, d, bound); }) ==
        ErrorKind::InvalidPlan);
  InfectionSet sensors_only = z;
  sensors_only.controllers.clear();
  CHECK(kind_of([&] { make_plan(f, {1}, w, false, MaskScope::Targets, sensors_only, d, bound); }) ==
        ErrorKind::InvalidPlan);

  const VoltageManipulation v{1, 0.0, 30.0};
  CHECK(kind_of([&] { make_plan(v, {2}, w, false, MaskScope::Targets, z, d, bound); }) ==
        ErrorKind::InvalidPlan);
  // The stealth bound is inclusive and only binds with masking on.
  auto exact = bound;
  exact["dg2.q"] = 30.0;
  CHECK_NOTHROW(make_plan(v, {1}, w, true, MaskScope::Targets, z, d, exact));
  exact["dg2.q"] = std::nextafter(30.0, 0.0);
  CHECK(kind_of([&] { make_plan(v, {1}, w, true, MaskScope::Targets, z, d, exact); }) ==
        ErrorKind::StealthViolation);
  CHECK_NOTHROW(make_plan(v, {1}, w, false, MaskScope::Targets, z, d, exact));

  const LoadSharingDisruption bad{{1.0, 1.0}, 1.0};
  CHECK(kind_of([&] { make_plan(bad, {0}, w, false, MaskScope::Targets, z, d, bound); }) ==
        ErrorKind::InvalidConfig);
}

TEST_CASE("peak sensor injection covers the whole voltage ramp") {
  const auto d = droop();
  AttackPlan p{VoltageManipulation{2, 4.0, 10.0}, {2}, {5.0, 7.5}, true, MaskScope::Targets};
  const auto a = peak_sensor_injection(p, d);
  REQUIRE(a.target_ids == std::vector<std::string>{"dg3.q"});
  CHECK(a.deltas[0] == doctest::Approx(10.0 + 4.0 * 2.5 / d.d_q[2]));
  p.objective = FrequencyManipulation{0.1};
  CHECK(peak_sensor_injection(p, d).target_ids.empty());
}

TEST_CASE("target identification ranks by effect per unit bias with index tie-break") {
  const auto model = linear_model({0.1, 0.3, 0.3, 0.3});
  const auto sel = identify_targets(FrequencyManipulation{0.05}, model, everything(),
                                    operating_point(), uniform_bound(0.02));
  REQUIRE(sel.ranking.size() == 4);
  CHECK(sel.ranking[0].dg == 1);
  CHECK(sel.ranking[1].dg == 2);
  CHECK(sel.ranking[2].dg == 3);
  CHECK(sel.ranking[3].dg == 0);
  CHECK(sel.ranking[0].score == doctest::Approx(0.3).epsilon(1e-6));
  // 0.3 + 0.3 of a total 1.0 is the smallest prefix reaching half.
  CHECK(sel.targets == std::vector<std::size_t>{1, 2});

  InfectionSet partial = everything();
  partial.controllers = {0, 3};
  const auto sel2 = identify_targets(FrequencyManipulation{0.05}, model, partial,
                                     operating_point(), uniform_bound(0.02));
  CHECK(sel2.targets == std::vector<std::size_t>{3});
}

TEST_CASE("target identification fails without a lever") {
  const auto model = linear_model({0.1, 0.3, 0.3, 0.3});
  InfectionSet blind = everything();
  blind.sensors = {"pcc.i"};
  CHECK(kind_of([&] {
          identify_targets(FrequencyManipulation{0.05}, model, blind, operating_point(),
                           uniform_bound(0.02));
        }) == ErrorKind::InfeasibleObjective);
  CHECK(kind_of([&] {
          identify_targets(FrequencyManipulation{0.05}, model, everything(), operating_point(),
                           uniform_bound(0.0));
        }) == ErrorKind::InfeasibleObjective);
  CHECK(kind_of([&] {
          identify_targets(FrequencyManipulation{0.05}, linear_model({0, 0, 0, 0}), everything(),
                           operating_point(), uniform_bound(0.02));
        }) == ErrorKind::InfeasibleObjective);
}

TEST_CASE("eavesdropper projects the infection set and drops reproducibly") {
  InfectionSet z;
  z.sensors = {"dg2.v", "pcc.i"};
  const auto ids = mg::sensor_ids(kDgs);
  const auto op = operating_point();
  Eavesdropper e(z, ids, 0.0, 1);
  const auto m = e.tap(op.values, 0.5);
  REQUIRE(m);
  CHECK(m->sensor_ids == z.sensors);
  CHECK(m->values == Vector{311.0, 1.0});
  CHECK(m->timestamp == 0.5);

  std::vector<Vector> tel(20000, op.values);
  const auto a = eavesdrop(tel, ids, z, 0.01, 0.0, 0.3, 9);
  const auto b = eavesdrop(tel, ids, z, 0.01, 0.0, 0.3, 9);
  std::size_t same = 0;
  for (std::size_t k = 0; k < a.size(); ++k) same += a.samples[k].has_value() == b.samples[k].has_value();
  CHECK(same == a.size());
  const double rate = 1.0 - static_cast<double>(a.observed()) / static_cast<double>(a.size());
  CHECK(rate == doctest::Approx(0.3).epsilon(0.05));
  CHECK(kind_of([&] { Eavesdropper(z, ids, 1.0, 1); }) == ErrorKind::InvalidConfig);
  const auto sub = select(a, std::vector<std::string>{"pcc.i"});
  CHECK(sub.sensor_ids.size() == 1);
  CHECK(sub.observed() == a.observed());
}

TEST_CASE("schedulers") {
  CHECK(kind_of([] { schedule({5.0, 4.0}, std::nullopt); }) == ErrorKind::InvalidPlan);
  CHECK(kind_of([] { schedule({0.5, 4.0}, 1.0); }) == ErrorKind::InvalidPlan);
  CHECK(schedule({1.0, 4.0}, 1.0).t_start == 1.0);

  Scheduler fixed(FixedSchedule{2.0, 6.0}, true);
  CHECK_FALSE(fixed.observe(1.99, 0.0, true));
  CHECK(kind_of([&] { Scheduler(FixedSchedule{2.0, 6.0}, true).observe(2.0, 0.0, false); }) ==
        ErrorKind::InvalidPlan);
  const auto w = fixed.observe(2.0, 0.0, true);
  REQUIRE(w);
  CHECK(w->t_end == 6.0);

  Scheduler settled(SettledSchedule{1e-3, 3.0, 4.0}, true);
  CHECK_FALSE(settled.observe(3.0, 0.0, true));    // too early
  CHECK_FALSE(settled.observe(4.5, 0.01, true));   // not settled
  CHECK_FALSE(settled.observe(4.6, 0.0, false));   // not islanded
  const auto s = settled.observe(4.7, 1e-3, true);  // tolerance is inclusive
  REQUIRE(s);
  CHECK(s->t_start == 4.7);
  CHECK(s->t_end == doctest::Approx(7.7));
  CHECK(settled.observe(9.0, 1.0, false)->t_start == 4.7);  // stamped once
  CHECK(kind_of([] { Scheduler(SettledSchedule{0.0, 1.0, 0.0}, true); }) == ErrorKind::InvalidPlan);
}

TEST_CASE("fault forgery needs PCC access") {
  InfectionSet z;
  z.sensors = {"dg1.f"};
  CHECK(kind_of([&] { FaultForger(z, {1.0, 100.0, 0.1}); }) == ErrorKind::Capability);
  z.pcc_access = true;
  const FaultForger f(z, {1.0, 100.0, 0.1});
  CHECK_FALSE(f.forged_current(0.999));
  CHECK(f.forged_current(1.0) == 100.0);
  CHECK(f.forged_current(1.099) == 100.0);
  CHECK_FALSE(f.forged_current(1.1));
}

TEST_CASE("injection follows the plan inside its window only") {
  const auto d = droop();
  const auto bound = uniform_bound(1e9);
  AttackPlan p{FrequencyManipulation{0.05}, {0, 2}, {5.0, 8.0}, false, MaskScope::Targets};
  CHECK_FALSE(inject(p, 4.99, d, bound).active);
  CHECK_FALSE(inject(p, 8.0, d, bound).active);
  const auto a = inject(p, 5.0, d, bound);
  CHECK(a.active);
  CHECK(a.bias.omega_ref_bias == Vector{0.05, 0.0, 0.05, 0.0});
  CHECK(a.sensor_alpha.target_ids.empty());

  p.objective = VoltageManipulation{1, 4.0, 10.0};
  p.targets = {1};
  const auto v = inject(p, 6.0, d, bound);
  const double want = -(10.0 + 4.0 * 1.0 / d.d_q[1]);
  CHECK(v.bias.q_sensor_bias[1] == doctest::Approx(want));
  CHECK(v.sensor_alpha.deltas[0] == v.bias.q_sensor_bias[1]);
  p.mask_enabled = true;
  CHECK(kind_of([&] { inject(p, 6.0, d, uniform_bound(5.0)); }) == ErrorKind::StealthViolation);

  p.objective = LoadSharingDisruption{{2.0, 1.0, 1.0, 1.0}, 1.0};
  p.targets = {0};
  p.mask_enabled = false;
  CHECK(inject(p, 5.5, d, bound).bias.dp_report_scale[0] == doctest::Approx(1.5));
  CHECK(inject(p, 7.0, d, bound).bias.dp_report_scale[0] == doctest::Approx(2.0));
  CHECK(inject(p, 7.0, d, bound).bias.dp_report_scale[1] == 1.0);
}

TEST_CASE("masker replaces only its influence set inside the window") {
  const auto model = linear_model({1.0, 0.0, 0.0, 0.0});
  const AttackPlan p{FrequencyManipulation{0.05}, {1}, {5.0, 8.0}, true, MaskScope::Targets};
  const auto z = everything();
  Masker targets_only(model, p, z);
  CHECK(targets_only.influence() == std::vector<std::string>{"dg2.f", "dg2.p", "dg2.q", "dg2.v"});
  AttackPlan wide = p;
  wide.mask_scope = MaskScope::InfectionSet;
  Masker all(model, wide, z);
  CHECK(all.influence() == mg::dg_sensor_ids(kDgs));  // PCC sensors are never masked

  auto reported = operating_point(6.0);
  for (auto& v : reported.values) v += 3.0;
  CHECK(kind_of([&] { targets_only.mask(reported); }) == ErrorKind::InvalidQuery);
  targets_only.anchor(operating_point(4.99));
  const auto out = targets_only.mask(reported);
  CHECK(value_of(out, "dg2.f") == doctest::Approx(50.0));  // coupling copies dg1.f
  CHECK(value_of(out, "dg2.v") == doctest::Approx(311.0));
  CHECK(value_of(out, "dg2.p") == doctest::Approx(5000.0));
  CHECK(value_of(out, "dg2.q") == doctest::Approx(2000.0));
  CHECK(value_of(out, "dg1.f") == 53.0);
  CHECK(value_of(out, "pcc.i") == 4.0);

  auto outside = reported;
  outside.timestamp = 8.0;
  CHECK(targets_only.mask(outside).values == outside.values);
  AttackPlan off = p;
  off.mask_enabled = false;
  CHECK(Masker(model, off, z).mask(reported).values == reported.values);
}

TEST_CASE("a dormant rootkit leaves the plant untouched") {
  auto clean = sim::reference_scenario();
  clean.duration = 3.0;
  clean.islanding_time = 1.0;
  auto infected = clean;
  infected.rootkit = sim::RootkitSettings{everything(), std::nullopt, std::nullopt};
  const auto setup = sim::prepare(clean);
  const auto side = sim::prepare_attacker(sim::prepare(infected));
  const auto a = sim::simulate(setup, clean, nullptr);
  const auto b = sim::simulate(setup, infected, &side);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].truth == b.rows[k].truth);
    CHECK(a.rows[k].reported == b.rows[k].reported);
    CHECK(a.rows[k].alarm == b.rows[k].alarm);
  }
  CHECK(b.attack_log.rows().empty());
}

TEST_CASE("masked frequency reports stay at nominal while the plant is driven off it") {
  const auto s = load("freq_attack");
  const auto run = sim::execute(s);
  const auto& rec = run.recording;
  REQUIRE(rec.plan);
  const auto& ids = rec.sensor_ids;
  const auto f1 = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), "dg1.f") - ids.begin());
  double rep = 0.0, truth = 0.0;
  std::size_t n = 0;
  for (const auto& row : rec.rows) {
    if (row.t < rec.plan->window.t_start + 3.0 || !row.attack) continue;
    rep += row.reported[f1];
    truth += row.truth[f1];
    ++n;
  }
  REQUIRE(n > 100);
  rep /= static_cast<double>(n);
  truth /= static_cast<double>(n);
  MESSAGE("late-window means: reported " << rep << " Hz, true " << truth << " Hz");
  CHECK(std::abs(rep - s.omega_n) < 0.005);
  CHECK(truth - s.omega_n > 0.04);

  const auto again = sim::execute(s);
  CHECK(again.recording.attack_log.csv() == rec.attack_log.csv());
  CHECK_FALSE(rec.attack_log.rows().empty());
}
