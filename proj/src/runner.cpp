#include "gridveil/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "gridveil/csv.hpp"
#include "gridveil/error.hpp"
#include "gridveil/random.hpp"
#include "gridveil/report.hpp"

namespace gridveil::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

std::string dg_name(std::size_t i) { return "dg" + std::to_string(i + 1); }

std::string join_dgs(const std::vector<std::size_t>& dgs) {
  std::string out;
  for (auto i : dgs) out += (out.empty() ? "" : ";") + dg_name(i);
  return out;
}

mg::SimState at_rest(mg::SimState s) {
  s.t = 0.0;
  s.events.clear();
  return s;
}

}  // namespace

estimator::LinearModel operator_model(const mg::Linearization& lin, const NoiseSettings& noise,
                                      std::size_t n_dg) {
  estimator::LinearModel m{lin.f, lin.b, lin.h, {}, {}};
  m.c0 = lin.b * Matrix::diagonal(Vector{noise.load_p * noise.load_p, noise.load_q * noise.load_q}) *
         lin.b.transpose();
  for (std::size_t i = 0; i < m.c0.rows(); ++i) m.c0(i, i) += 1e-10;
  m.c0 = m.c0.symmetrized();
  Vector var = noise.dg_sigma(n_dg);
  for (double& v : var) v *= v;
  m.c1 = Matrix::diagonal(var);
  m.validate();
  return m;
}

Setup prepare(const Scenario& s) {
  const mg::Microgrid grid = s.microgrid();
  const std::size_t n = grid.size();

  mg::SimState connected = grid.initial_state();
  if (connected.network.pcc_closed) connected = mg::settle(grid, connected, s.dt, 30.0, 1e-9);

  mg::SimState open = grid.initial_state();
  open.network.pcc_closed = false;
  grid.refresh_outputs(open, mg::ControllerBias::none(n));
  mg::SimState islanded = mg::settle(grid, open, s.dt, 60.0, 1e-10);

  auto lin = mg::linearize(grid, islanded, s.dt, s.decimation);
  auto model = operator_model(lin, s.noise, n);
  auto ss = estimator::steady_state(model, model.c0, 1e-8);
  if (!ss.converged) throw Error(ErrorKind::Numerical, "operator filter has no steady state");

  bdd::DetectorConfig det{
      s.detector.tau ? *s.detector.tau
                     : bdd::default_tau(model.outputs(), s.detector.window, s.detector.false_alarm),
      s.detector.window, s.detector.false_alarm};
  det.validate();
  auto alpha = bdd::calibrate_alpha_max(model, det);
  vddm::AlphaBound bound;
  const auto ids = mg::dg_sensor_ids(n);
  for (std::size_t j = 0; j < ids.size(); ++j)
    bound[ids[j]] = alpha.unbounded ? std::numeric_limits<double>::infinity() : alpha.per_sensor[j];

  return Setup{s,
               grid,
               at_rest(connected),
               at_rest(islanded),
               std::move(lin),
               std::move(model),
               std::move(ss),
               det,
               std::move(alpha),
               std::move(bound)};
}

bool needs_vddm(const Scenario& s) {
  return s.rootkit && s.rootkit->attack && (s.rootkit->attack->mask || !s.rootkit->attack->targets);
}

vddm::AttackerModel attacker_model(const Setup& setup, const rootkit::InfectionSet& zeta) {
  const auto sensors = zeta.dg_sensors();
  if (sensors.empty()) throw Error(ErrorKind::Capability, "the infection set reads no DG sensor");
  const auto& s = setup.scenario;
  return vddm::make_attacker_model(setup.lin, setup.grid.droop(), sensors,
                                   s.noise.dg_sigma(s.dg_count),
                                   Vector{s.noise.load_p, s.noise.load_q});
}

ReconData reconnaissance(const Setup& setup, const vddm::AttackerModel& attacker) {
  const auto& base = setup.scenario;
  Scenario r = base;
  r.rootkit.reset();
  r.start_islanded = true;
  r.islanding_time.reset();
  r.duration = base.vddm.recon_duration;
  r.seed = stream_seed(base.seed, Stream::Recon);
  const Recording rec = simulate(setup, r, nullptr);

  std::vector<Vector> telemetry;
  telemetry.reserve(rec.rows.size());
  for (const auto& row : rec.rows) telemetry.push_back(row.reported);
  rootkit::InfectionSet tap{attacker.sensor_ids, {}, false};
  const auto stream =
      rootkit::select(rootkit::eavesdrop(telemetry, rec.sensor_ids, tap, base.sample_period(),
                                         rec.rows.front().t, base.vddm.drop_probability,
                                         stream_seed(r.seed, Stream::Eavesdrop)),
                      attacker.sensor_ids);

  const std::size_t total = stream.size();
  const auto hold = static_cast<std::size_t>(std::llround(base.vddm.holdout_fraction * total));
  ReconData out;
  out.train_length = total - hold;
  out.stream = stream;
  out.stream.samples.resize(out.train_length);

  const std::size_t ndg_sensors = 4 * base.dg_count;
  const auto& droop = setup.grid.droop();
  vddm::MeasurementStream& rep = out.holdout.reported;
  rep.sensor_ids = attacker.sensor_ids;
  rep.sample_period = base.sample_period();
  rep.t0 = stream.t0 + static_cast<double>(out.train_length) * base.sample_period();
  for (std::size_t k = out.train_length; k < total; ++k) {
    vddm::MeasurementVector mv{rec.sensor_ids, rec.rows[k].reported, rec.rows[k].t};
    rep.samples.push_back(mv.project(attacker.sensor_ids));
    const std::span<const double> truth(rec.rows[k].truth.data(), ndg_sensors);
    out.holdout.truth.push_back(vddm::labels_from_readings(truth, droop.d_p, droop.d_q));
  }
  return out;
}

AttackerSide train_attacker(const Setup& setup, vddm::AttackerModel attacker,
                            const vddm::MeasurementStream& train, const vddm::TruthTrace& holdout) {
  const auto& v = setup.scenario.vddm;
  const auto corpus =
      vddm::build_corpus(train, attacker, {v.horizons, v.min_length, v.max_gap});
  auto trained = vddm::train_vddm(corpus, v.hidden, v.activation, v.train, attacker.d_p, attacker.d_q);
  AttackerSide side{std::move(attacker), std::move(trained.model), std::nullopt,
                    trained.result.history};
  side.fidelity = vddm::fidelity_report(
      *side.vddm, trained.result, holdout,
      label_scale(setup.scenario.noise, side.attacker.d_p, side.attacker.d_q));
  return side;
}

AttackerSide prepare_attacker(const Setup& setup) {
  const auto& s = setup.scenario;
  if (!s.rootkit) throw Error(ErrorKind::InvalidConfig, "scenario has no rootkit");
  auto attacker = attacker_model(setup, s.rootkit->infection);
  if (!needs_vddm(s)) return AttackerSide{std::move(attacker), std::nullopt, std::nullopt, {}};
  if (s.vddm.bundle) {
    auto model = vddm::load_bundle(*s.vddm.bundle);
    for (const auto& id : model.sensor_ids)
      if (std::find(attacker.sensor_ids.begin(), attacker.sensor_ids.end(), id) ==
          attacker.sensor_ids.end())
        throw Error(ErrorKind::InvalidConfig,
                    "bundle " + s.vddm.bundle->string() + " needs sensor " + id +
                        ", which the infection set does not read");
    return AttackerSide{std::move(attacker), std::move(model), std::nullopt, {}};
  }
  const auto recon = reconnaissance(setup, attacker);
  return train_attacker(setup, std::move(attacker), recon.stream, recon.holdout);
}

// ---------------------------------------------------------------------------

Recording simulate(const Setup& setup, const Scenario& s, const AttackerSide* side) {
  const auto& grid = setup.grid;
  const auto& droop = grid.droop();
  const std::size_t n = grid.size();
  const std::size_t ndg = 4 * n;
  const double dt = s.dt;
  const double ts = s.sample_period();
  const auto samples = static_cast<std::size_t>(std::llround(s.duration / ts));

  Recording rec;
  rec.sensor_ids = mg::sensor_ids(n);
  const std::vector<std::string> dg_ids(rec.sensor_ids.begin(), rec.sensor_ids.begin() + ndg);
  const Vector sigma = s.noise.all_sigma(n);
  const std::size_t pcc_i = ndg;

  Rng sensor_rng(stream_seed(s.seed, Stream::SensorNoise));
  Rng load_rng(stream_seed(s.seed, Stream::LoadNoise));

  mg::SimState state = s.start_islanded ? setup.islanded : setup.connected;
  const double base_load_p = state.network.load_p;
  const double base_load_q = state.network.load_q;
  if (s.start_islanded) rec.islanded_at = 0.0;

  mg::ProtectionRelay relay(s.protection.pickup_factor * s.rated_current(), s.protection.dwell);

  // Rootkit pieces.
  const RootkitSettings* rk = s.rootkit ? &*s.rootkit : nullptr;
  const AttackSettings* atk = rk && rk->attack ? &*rk->attack : nullptr;
  if (rk && !side) throw Error(ErrorKind::InvalidConfig, "rootkit scenario needs an attacker");
  if (atk && needs_vddm(s) && !side->vddm)
    throw Error(ErrorKind::InvalidConfig, "attack needs a trained VDDM");
  std::optional<rootkit::Eavesdropper> eaves;
  std::optional<rootkit::AttackerTracker> tracker;
  std::optional<rootkit::FaultForger> forger;
  std::optional<rootkit::Scheduler> scheduler;
  std::optional<rootkit::Masker> masker;
  std::optional<vddm::MeasurementVector> estimate;
  if (rk) {
    eaves.emplace(rk->infection, rec.sensor_ids, s.vddm.drop_probability,
                  stream_seed(s.seed, Stream::Eavesdrop));
    if (rk->fault) {
      forger.emplace(rk->infection,
                     rootkit::FaultForgery{rk->fault->time,
                                           rk->fault->magnitude_factor * s.rated_current(),
                                           rk->fault->duration});
      rec.attack_log.add(rk->fault->time, "fault_scheduled", "pcc", "pcc.i",
                         forger->fault().magnitude, "duration=" + csv::format(rk->fault->duration));
    }
    if (atk) scheduler.emplace(atk->schedule, true);
  }

  std::optional<bdd::OperatorMonitor> monitor;
  auto islanded = [&] { return !state.network.pcc_closed; };

  auto build_plan = [&](const rootkit::AttackWindow& w, double t) {
    const auto& zeta = rk->infection;
    const vddm::MeasurementVector op =
        estimate ? *estimate
                 : vddm::MeasurementVector{side->attacker.sensor_ids,
                                           side->attacker.measurement_offset, t};
    std::vector<std::size_t> targets;
    if (atk->targets) {
      targets = *atk->targets;
    } else {
      const auto sel = rootkit::identify_targets(atk->objective, *side->vddm, zeta, op, setup.bound);
      for (const auto& r : sel.ranking)
        rec.attack_log.add(t, "target_score", dg_name(r.dg), "", r.score,
                           "deviation=" + csv::format(r.deviation));
      targets = sel.targets;
    }
    rec.plan = rootkit::make_plan(atk->objective, targets, w, atk->mask, atk->scope, zeta, droop,
                                  setup.bound);
    rec.attack_log.add(t, "plan", join_dgs(targets), rootkit::objective_name(atk->objective),
                       w.t_end, "start=" + csv::format(w.t_start) + " mask=" +
                                    (atk->mask ? "on" : "off"));
    if (atk->mask) {
      masker.emplace(*side->vddm, *rec.plan, zeta);
      masker->anchor(op);
      std::string infl;
      for (const auto& id : masker->influence()) infl += (infl.empty() ? "" : ";") + id;
      rec.attack_log.add(t, "mask_anchor", join_dgs(targets), "", op.timestamp, infl);
    }
  };

  auto measure = [&](const rootkit::AppliedInjection& applied, std::optional<double> forged,
                     SampleRow& row) {
    row.truth = mg::read_sensors(grid, state);
    row.reported = row.truth;
    for (std::size_t k = 0; k < row.reported.size(); ++k)
      row.reported[k] += sigma[k] * sensor_rng.normal();
    for (std::size_t k = 0; k < applied.sensor_alpha.target_ids.size(); ++k) {
      const auto it = std::lower_bound(rec.sensor_ids.begin(), rec.sensor_ids.end(),
                                       applied.sensor_alpha.target_ids[k]);
      row.reported[static_cast<std::size_t>(it - rec.sensor_ids.begin())] +=
          applied.sensor_alpha.deltas[k];
    }
    if (forged) row.reported[pcc_i] = *forged;
  };

  auto fill_state = [&](SampleRow& row) {
    row.t = state.t;
    row.islanded = islanded();
    row.dgs = state.dgs;
    row.p = state.flow.p;
    row.q = state.flow.q;
    row.metrics = mg::convergence_metrics(state.dgs, droop);
    row.r = kNaN;
    row.r_mean = kNaN;
  };

  rootkit::AppliedInjection applied{mg::ControllerBias::none(n), {}, false};
  bool was_active = false;
  bool fault_active = false;
  std::size_t events_seen = 0;
  auto sync_breaker_events = [&] {
    for (; events_seen < state.events.size(); ++events_seen) {
      const auto& e = state.events[events_seen];
      rec.events.push_back({e.t, e.open ? "breaker_open" : "breaker_close", e.cause});
    }
  };

  SampleRow row;
  fill_state(row);
  measure(applied, std::nullopt, row);
  rec.rows.push_back(row);
  Vector tapped = row.reported;

  try {
    for (std::size_t k = 0; k < samples; ++k) {
      const double t_sample = static_cast<double>(k) * ts;

      // eavesdrop
      if (eaves) {
        auto tap = eaves->tap(tapped, t_sample);
        if (rec.islanded_at && side) {
          if (!tracker) tracker.emplace(side->attacker);
          estimate = tracker->observe(tap, t_sample);
        }
      }

      std::optional<double> forged;
      for (std::size_t j = 0; j < s.decimation; ++j) {
        const double t = state.t;
        // inject
        if (scheduler && !rec.plan) {
          const auto m = mg::convergence_metrics(state.dgs, droop);
          if (auto w = scheduler->observe(t, m.freq_residual, islanded())) build_plan(*w, t);
        }
        if (rec.plan) applied = rootkit::inject(*rec.plan, t, droop, setup.bound);
        if (applied.active != was_active) {
          rec.attack_log.add(t, applied.active ? "inject_start" : "inject_end",
                             join_dgs(rec.plan->targets), rootkit::objective_name(rec.plan->objective));
          was_active = applied.active;
        }
        forged = forger ? forger->forged_current(t) : std::nullopt;
        if (forged.has_value() != fault_active) {
          fault_active = forged.has_value();
          rec.attack_log.add(t, fault_active ? "fault_start" : "fault_end", "pcc", "pcc.i",
                             forged.value_or(0.0));
        }

        // protection and operator switching
        if (!islanded()) {
          const double reading = forged ? *forged : std::abs(state.flow.pcc_current);
          if (relay.observe(reading, dt)) mg::set_breaker(state, true, "overcurrent trip");
          else if (s.islanding_time && t + 1e-12 >= *s.islanding_time)
            mg::set_breaker(state, true, "operator islanding");
          if (islanded()) rec.islanded_at = t;
        }

        if (j == 0) {
          state.network.load_p = base_load_p + s.noise.load_p * load_rng.normal();
          state.network.load_q = base_load_q + s.noise.load_q * load_rng.normal();
        }
        // step
        grid.step(state, dt, applied.bias);
        state.t = static_cast<double>(k * s.decimation + j + 1) * dt;
      }
      sync_breaker_events();

      SampleRow r;
      fill_state(r);
      r.t = static_cast<double>(k + 1) * ts;
      r.attack = applied.active;
      measure(applied, forged, r);
      tapped = r.reported;

      // mask
      if (masker) {
        vddm::MeasurementVector dg{dg_ids, Vector(r.reported.begin(), r.reported.begin() + ndg),
                                   r.t};
        const auto masked = masker->mask(dg);
        if (masked.values != dg.values) {
          r.masked = true;
          std::copy(masked.values.begin(), masked.values.end(), r.reported.begin());
        }
      }

      // detect
      if (!monitor && rec.islanded_at && r.t + 1e-9 >= *rec.islanded_at + s.detector.arm_delay) {
        monitor.emplace(setup.operator_model, setup.detector,
                        estimator::KalmanState{Vector(setup.operator_model.states(), 0.0),
                                               setup.operator_ss.p_pred});
        rec.events.push_back({r.t, "detector_armed", "tau=" + csv::format(setup.detector.tau)});
      }
      if (monitor) {
        r.armed = true;
        Vector dev(ndg);
        for (std::size_t i = 0; i < ndg; ++i) dev[i] = r.reported[i] - setup.lin.m0[i];
        const auto obs = monitor->observe(dev);
        r.r = obs.r;
        r.r_mean = obs.mean;
        r.alarm = obs.alarm;
      }

      const bool finite = std::isfinite(r.metrics.freq_residual) &&
                          std::isfinite(r.metrics.p_share_residual);
      rec.rows.push_back(std::move(r));
      if (!finite || rec.rows.back().metrics.p_share_residual > 10.0 * droop.delta_omega_th)
        throw Error(ErrorKind::Divergence, "sharing residual left the admissible range at t=" +
                                               csv::format(rec.rows.back().t));
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Divergence) throw;
    sync_breaker_events();
    rec.divergence = e.what();
    rec.events.push_back({state.t, "divergence", e.what()});
  }
  return rec;
}

// ---------------------------------------------------------------------------

std::string telemetry_csv(const Recording& rec, std::size_t n) {
  std::vector<std::string> header{"t", "islanded", "armed", "attack"};
  for (std::size_t i = 0; i < n; ++i)
    for (const char* q : {"omega", "v", "p", "q", "delta_omega", "delta_v"})
      header.push_back(dg_name(i) + "." + q);
  for (const char* c : {"freq_residual", "p_share_residual", "q_share_residual"}) header.push_back(c);
  for (const auto& id : rec.sensor_ids) header.push_back("true." + id);
  for (const auto& id : rec.sensor_ids) header.push_back("rep." + id);
  for (const char* c : {"r", "r_mean", "alarm", "masked"}) header.push_back(c);

  csv::Writer w(header);
  for (const auto& r : rec.rows) {
    w.cell(r.t).cell(static_cast<long long>(r.islanded)).cell(static_cast<long long>(r.armed));
    w.cell(static_cast<long long>(r.attack));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = r.dgs[i];
      w.cell(d.omega).cell(d.v).cell(r.p[i]).cell(r.q[i]).cell(d.delta_omega).cell(d.delta_v);
    }
    w.cell(r.metrics.freq_residual).cell(r.metrics.p_share_residual).cell(r.metrics.q_share_residual);
    for (double v : r.truth) w.cell(v);
    for (double v : r.reported) w.cell(v);
    w.cell(r.r).cell(r.r_mean).cell(static_cast<long long>(r.alarm));
    w.cell(static_cast<long long>(r.masked));
    w.end_row();
  }
  return w.text();
}

RunArtifacts render(const Setup& setup, const Recording& rec, const AttackerSide* side) {
  const auto& s = setup.scenario;
  RunArtifacts art;
  art.telemetry_csv = telemetry_csv(rec, s.dg_count);
  art.divergence = rec.divergence;

  csv::Writer alarms({"t", "r", "r_mean", "tau", "alarm"});
  for (const auto& r : rec.rows) {
    if (!r.armed) continue;
    alarms.cell(r.t).cell(r.r).cell(r.r_mean).cell(setup.detector.tau);
    alarms.cell(static_cast<long long>(r.alarm)).end_row();
  }
  art.alarm_csv = alarms.text();

  csv::Writer events({"t", "event", "detail"});
  for (const auto& e : rec.events) events.cell(e.t).cell(e.event).cell(e.detail).end_row();
  art.events_csv = events.text();
  art.attack_csv = rec.attack_log.csv();
  art.resolved_yaml = emit_scenario(s);

  const auto verdicts =
      analyze(csv::parse(art.telemetry_csv), csv::parse(art.events_csv), s);

  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["status"] = rec.divergence ? "diverged" : "completed";
  if (rec.divergence) j["divergence"] = *rec.divergence;
  j["samples"] = rec.rows.size();
  j["islanded_at"] = rec.islanded_at ? nlohmann::json(*rec.islanded_at) : nlohmann::json(nullptr);
  j["verdicts"] = to_json(verdicts);
  if (!rec.rows.empty()) {
    const auto& m = rec.rows.back().metrics;
    j["final"] = {{"freq_residual", m.freq_residual},
                  {"p_share_residual", m.p_share_residual},
                  {"q_share_residual", m.q_share_residual}};
  }
  j["detector"] = {{"tau", setup.detector.tau},
                   {"window", setup.detector.window},
                   {"false_alarm_target", setup.detector.false_alarm_target}};
  nlohmann::ordered_json am;
  for (const auto& [id, v] : setup.bound) am[id] = v;
  j["alpha_max"] = am;
  if (!setup.alpha.warning.empty()) j["alpha_max_warning"] = setup.alpha.warning;
  if (rec.plan) {
    j["plan"] = {{"objective", rootkit::objective_name(rec.plan->objective)},
                 {"targets", join_dgs(rec.plan->targets)},
                 {"t_start", rec.plan->window.t_start},
                 {"t_end", rec.plan->window.t_end},
                 {"mask", rec.plan->mask_enabled}};
  }
  if (side && side->vddm) {
    nlohmann::ordered_json v;
    v["model_version"] = side->vddm->model_version;
    if (side->fidelity) {
      const auto& f = *side->fidelity;
      v["train_mse"] = f.train_mse;
      v["val_mse"] = f.val_mse;
      v["test_mse"] = f.test_mse;
      v["trace_mse"] = f.trace_mse;
      v["horizons"] = f.horizons;
      v["per_horizon_mse"] = f.per_horizon_mse;
    }
    j["vddm"] = v;
  }
  j["scenario"] = art.resolved_yaml;
  art.report_json = j.dump(2) + "\n";
  return art;
}

void write_run(const std::filesystem::path& dir, const RunArtifacts& art) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / name).string());
  };
  put("telemetry.csv", art.telemetry_csv);
  put("alarm_log.csv", art.alarm_csv);
  put("events.csv", art.events_csv);
  put("attack_log.csv", art.attack_csv);
  put("scenario.resolved.yaml", art.resolved_yaml);
  put("report.json", art.report_json);
}

std::filesystem::path output_root() {
  const char* env = std::getenv("GRIDVEIL_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace gridveil::sim

namespace gridveil::sim {

Execution execute(const Scenario& s) {
  Setup setup = prepare(s);
  std::optional<AttackerSide> side;
  if (s.rootkit) side = prepare_attacker(setup);
  Recording rec = simulate(setup, s, side ? &*side : nullptr);
  RunArtifacts art = render(setup, rec, side ? &*side : nullptr);
  return {std::move(setup), std::move(side), std::move(rec), std::move(art)};
}

Vector label_scale(const NoiseSettings& noise, std::span<const double> d_p,
                   std::span<const double> d_q) {
  Vector out;
  for (std::size_t i = 0; i < d_p.size(); ++i) {
    out.push_back(noise.f);
    out.push_back(noise.v);
    out.push_back(d_p[i] * noise.p);
    out.push_back(d_q[i] * noise.q);
  }
  return out;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema:
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidPlan:
    case ErrorKind::Capability:
      return 2;
    case ErrorKind::Divergence: return 3;
    case ErrorKind::InfeasibleObjective: return 4;
    case ErrorKind::StealthViolation: return 5;
    default: return 1;
  }
}

TraceTraining train_from_trace(const Setup& setup, const csv::Table& trace) {
  const auto& s = setup.scenario;
  const auto zeta = s.rootkit ? s.rootkit->infection
                              : rootkit::InfectionSet{mg::dg_sensor_ids(s.dg_count), {}, false};
  auto attacker = attacker_model(setup, zeta);
  const auto& ids = attacker.sensor_ids;

  if (!trace.has("t")) throw Error(ErrorKind::Parse, "trace has no t column");
  std::vector<std::size_t> cols, truth_cols;
  for (const auto& id : ids) {
    const std::size_t c = trace.has("rep." + id) ? trace.column("rep." + id) : trace.column(id);
    if (c >= trace.header.size()) throw Error(ErrorKind::Parse, "trace has no column for " + id);
    cols.push_back(c);
  }
  const auto all_dg = mg::dg_sensor_ids(s.dg_count);
  bool have_truth = true;
  for (const auto& id : all_dg) {
    have_truth = have_truth && trace.has("true." + id);
    truth_cols.push_back(trace.column("true." + id));
  }

  // Longest contiguous block of usable rows.
  auto usable = [&](std::size_t r) {
    for (const char* flag : {"armed", "islanded"})
      if (trace.has(flag)) return trace.number(r, trace.column(flag)) != 0.0 &&
                                  (!trace.has("attack") || trace.number(r, trace.column("attack")) == 0.0);
    return !trace.has("attack") || trace.number(r, trace.column("attack")) == 0.0;
  };
  std::size_t best_lo = 0, best_len = 0;
  for (std::size_t r = 0; r < trace.rows.size();) {
    if (!usable(r)) { ++r; continue; }
    std::size_t e = r;
    while (e < trace.rows.size() && usable(e)) ++e;
    if (e - r > best_len) best_lo = r, best_len = e - r;
    r = e;
  }

  const std::size_t hold = static_cast<std::size_t>(std::llround(s.vddm.holdout_fraction * best_len));
  const std::size_t train_len = best_len - hold;
  const std::size_t tc = trace.column("t");
  const double t0 = best_len ? trace.number(best_lo, tc) : 0.0;

  auto sample = [&](std::size_t r) -> std::optional<Vector> {
    Vector v;
    for (auto c : cols) {
      const double x = trace.number(r, c);
      if (!std::isfinite(x)) return std::nullopt;
      v.push_back(x);
    }
    return v;
  };

  vddm::MeasurementStream train{ids, s.sample_period(), t0, {}};
  for (std::size_t k = 0; k < train_len; ++k) train.samples.push_back(sample(best_lo + k));

  vddm::TruthTrace holdout;
  holdout.reported = {ids, s.sample_period(), t0 + static_cast<double>(train_len) * s.sample_period(), {}};
  const auto& droop = setup.grid.droop();
  for (std::size_t k = train_len; k < best_len; ++k) {
    const std::size_t r = best_lo + k;
    holdout.reported.samples.push_back(sample(r));
    Vector readings;
    for (std::size_t j = 0; j < all_dg.size(); ++j) {
      std::size_t c = have_truth ? truth_cols[j]
                                 : (trace.has("rep." + all_dg[j]) ? trace.column("rep." + all_dg[j])
                                                                   : trace.column(all_dg[j]));
      if (c >= trace.header.size())
        throw Error(ErrorKind::InsufficientData,
                    "holdout scoring needs true.<id> columns or every DG sensor in the trace");
      readings.push_back(trace.number(r, c));
    }
    holdout.truth.push_back(vddm::labels_from_readings(readings, droop.d_p, droop.d_q));
  }

  const auto& v = s.vddm;
  const auto corpus = vddm::build_corpus(train, attacker, {v.horizons, v.min_length, v.max_gap});
  auto trained = vddm::train_vddm(corpus, v.hidden, v.activation, v.train, attacker.d_p, attacker.d_q);
  auto fidelity = vddm::fidelity_report(trained.model, trained.result, holdout,
                                       label_scale(s.noise, attacker.d_p, attacker.d_q));
  return {std::move(trained.model), std::move(trained.result), std::move(fidelity),
          corpus.samples.size(), best_len};
}

std::string history_csv(const std::vector<neural::EpochRecord>& history) {
  csv::Writer w({"epoch", "train_mse", "val_mse", "best_val_mse"});
  for (const auto& e : history)
    w.cell(static_cast<long long>(e.epoch)).cell(e.train_mse).cell(e.val_mse).cell(e.best_val_mse).end_row();
  return w.text();
}

std::string fidelity_json(const vddm::FidelityReport& f) {
  nlohmann::ordered_json j;
  j["model_version"] = f.model_version;
  j["train_mse"] = f.train_mse;
  j["val_mse"] = f.val_mse;
  j["test_mse"] = f.test_mse;
  j["horizons"] = f.horizons;
  j["per_horizon_mse"] = f.per_horizon_mse;
  j["trace_mse"] = f.trace_mse;
  return j.dump(2) + "\n";
}

}  // namespace gridveil::sim
