#include "gridveil/rootkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gridveil/csv.hpp"
#include "gridveil/error.hpp"

namespace gridveil::rootkit {

namespace {

std::string dg_name(std::size_t i) { return "dg" + std::to_string(i + 1); }
std::string sensor(std::size_t i, char q) { return dg_name(i) + "." + q; }

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

bool contains(std::span<const std::string> ids, std::string_view id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

void InfectionSet::normalize(std::size_t n_dg) {
  std::sort(sensors.begin(), sensors.end());
  sensors.erase(std::unique(sensors.begin(), sensors.end()), sensors.end());
  std::sort(controllers.begin(), controllers.end());
  controllers.erase(std::unique(controllers.begin(), controllers.end()), controllers.end());
  validate(n_dg);
}

void InfectionSet::validate(std::size_t n_dg) const {
  if (sensors.empty() && controllers.empty() && !pcc_access)
    throw Error(ErrorKind::InvalidConfig, "infection set is empty");
  const auto known = mg::sensor_ids(n_dg);
  for (const auto& id : sensors)
    if (!contains(known, id)) throw Error(ErrorKind::InvalidConfig, "unknown sensor id " + id);
  for (auto c : controllers)
    if (c >= n_dg)
      throw Error(ErrorKind::InvalidConfig, "unknown controller " + dg_name(c));
}

bool InfectionSet::reads(std::string_view id) const { return contains(sensors, id); }

bool InfectionSet::controls(std::size_t dg) const {
  return std::find(controllers.begin(), controllers.end(), dg) != controllers.end();
}

std::vector<std::string> InfectionSet::dg_sensors() const {
  std::vector<std::string> out;
  for (const auto& id : sensors)
    if (mg::dg_index_of(id) != std::string_view::npos) out.push_back(id);
  return out;
}

void validate(const AttackObjective& objective, std::size_t n_dg) {
  std::visit(overloaded{
                 [](const FrequencyManipulation& f) {
                   if (!std::isfinite(f.offset_hz))
                     throw Error(ErrorKind::InvalidConfig, "frequency offset must be finite");
                 },
                 [&](const VoltageManipulation& v) {
                   if (v.target_dg >= n_dg)
                     throw Error(ErrorKind::InvalidConfig, "voltage target out of range");
                   if (!std::isfinite(v.ramp_v_per_s) || !std::isfinite(v.q_bias_var))
                     throw Error(ErrorKind::InvalidConfig, "voltage ramp must be finite");
                 },
                 [&](const LoadSharingDisruption& l) {
                   if (l.share_ratio.size() != n_dg)
                     throw Error(ErrorKind::InvalidConfig, "share_ratio needs one entry per DG");
                   for (double r : l.share_ratio)
                     if (!(r > 0.0) || !std::isfinite(r))
                       throw Error(ErrorKind::InvalidConfig, "share ratios must be positive");
                   if (!(l.ramp_time >= 0.0))
                     throw Error(ErrorKind::InvalidConfig, "ramp_time must be >= 0");
                 },
             },
             objective);
}

std::string objective_name(const AttackObjective& objective) {
  return std::visit(overloaded{
                        [](const FrequencyManipulation&) { return std::string("frequency"); },
                        [](const VoltageManipulation&) { return std::string("voltage"); },
                        [](const LoadSharingDisruption&) { return std::string("load_sharing"); },
                    },
                    objective);
}

vddm::AttackVector peak_sensor_injection(const AttackPlan& plan, const mg::DroopParams& droop) {
  vddm::AttackVector a;
  if (const auto* v = std::get_if<VoltageManipulation>(&plan.objective)) {
    const double span = plan.window.t_end - plan.window.t_start;
    a.target_ids.push_back(sensor(v->target_dg, 'q'));
    a.deltas.push_back(std::abs(v->q_bias_var) + std::abs(v->ramp_v_per_s) * span / droop.d_q[v->target_dg]);
  }
  return a;
}

AttackPlan make_plan(AttackObjective objective, std::vector<std::size_t> targets,
                     AttackWindow window, bool mask_enabled, MaskScope scope,
                     const InfectionSet& zeta, const mg::DroopParams& droop,
                     const vddm::AlphaBound& alpha_max) {
  const std::size_t n = droop.size();
  validate(objective, n);
  if (!(window.t_end > window.t_start))
    throw Error(ErrorKind::InvalidPlan, "attack window end must be after its start");
  if (targets.empty()) throw Error(ErrorKind::InvalidPlan, "plan has no targets");
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  const bool sensor_channel = std::holds_alternative<VoltageManipulation>(objective);
  for (auto t : targets) {
    if (t >= n) throw Error(ErrorKind::InvalidPlan, "target " + dg_name(t) + " does not exist");
    if (sensor_channel ? !zeta.reads(sensor(t, 'q')) : !zeta.controls(t))
      throw Error(ErrorKind::InvalidPlan,
                  "target " + dg_name(t) + " is outside the infection set's capabilities");
  }
  if (const auto* v = std::get_if<VoltageManipulation>(&objective))
    if (targets.size() != 1 || targets.front() != v->target_dg)
      throw Error(ErrorKind::InvalidPlan, "voltage plan must target its own bus");

  AttackPlan plan{std::move(objective), std::move(targets), window, mask_enabled, scope};
  if (mask_enabled) {
    const auto peak = peak_sensor_injection(plan, droop);
    for (std::size_t k = 0; k < peak.target_ids.size(); ++k) {
      const auto bound = alpha_max.find(peak.target_ids[k]);
      const double b = bound == alpha_max.end() ? 0.0 : bound->second;
      if (!(peak.deltas[k] <= b))
        throw Error(ErrorKind::StealthViolation,
                    "peak bias " + csv::format(peak.deltas[k]) + " on " + peak.target_ids[k] +
                        " exceeds alpha_max " + csv::format(b) + " with masking enabled");
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------

Eavesdropper::Eavesdropper(const InfectionSet& zeta, std::vector<std::string> telemetry_ids,
                           double drop_probability, std::uint64_t seed)
    : drop_probability_(drop_probability), rng_(seed) {
  if (!(drop_probability >= 0.0 && drop_probability < 1.0))
    throw Error(ErrorKind::InvalidConfig, "drop probability must be in [0, 1)");
  for (const auto& id : zeta.sensors) {
    const auto it = std::find(telemetry_ids.begin(), telemetry_ids.end(), id);
    if (it == telemetry_ids.end()) throw Error(ErrorKind::InvalidConfig, "unknown sensor id " + id);
    ids_.push_back(id);
    columns_.push_back(static_cast<std::size_t>(it - telemetry_ids.begin()));
  }
}

std::optional<vddm::MeasurementVector> Eavesdropper::tap(std::span<const double> telemetry, double t) {
  // One draw per sample whether or not it is dropped keeps gaps reproducible.
  const bool dropped = rng_.uniform() < drop_probability_;
  if (dropped) return std::nullopt;
  vddm::MeasurementVector m{ids_, {}, t};
  m.values.reserve(columns_.size());
  for (auto c : columns_) m.values.push_back(telemetry[c]);
  return m;
}

vddm::MeasurementStream eavesdrop(std::span<const Vector> telemetry,
                                  std::span<const std::string> telemetry_ids,
                                  const InfectionSet& zeta, double sample_period, double t0,
                                  double drop_probability, std::uint64_t seed) {
  Eavesdropper tap(zeta, {telemetry_ids.begin(), telemetry_ids.end()}, drop_probability, seed);
  vddm::MeasurementStream s{tap.sensor_ids(), sample_period, t0, {}};
  s.samples.reserve(telemetry.size());
  for (std::size_t k = 0; k < telemetry.size(); ++k) {
    auto m = tap.tap(telemetry[k], t0 + static_cast<double>(k) * sample_period);
    s.samples.push_back(m ? std::optional<Vector>(std::move(m->values)) : std::nullopt);
  }
  return s;
}

vddm::MeasurementStream select(const vddm::MeasurementStream& stream,
                               std::span<const std::string> ids) {
  std::vector<std::size_t> cols;
  for (const auto& id : ids) {
    const auto it = std::find(stream.sensor_ids.begin(), stream.sensor_ids.end(), id);
    if (it == stream.sensor_ids.end())
      throw Error(ErrorKind::InvalidInput, "stream lacks sensor " + id);
    cols.push_back(static_cast<std::size_t>(it - stream.sensor_ids.begin()));
  }
  vddm::MeasurementStream out{{ids.begin(), ids.end()}, stream.sample_period, stream.t0, {}};
  out.samples.reserve(stream.size());
  for (const auto& s : stream.samples) {
    if (!s) {
      out.samples.emplace_back();
      continue;
    }
    Vector v;
    v.reserve(cols.size());
    for (auto c : cols) v.push_back((*s)[c]);
    out.samples.emplace_back(std::move(v));
  }
  return out;
}

AttackerTracker::AttackerTracker(const vddm::AttackerModel& attacker)
    : attacker_(&attacker), state_(attacker.initial) {}

vddm::MeasurementVector AttackerTracker::observe(
    const std::optional<vddm::MeasurementVector>& sample, double t) {
  const auto& a = *attacker_;
  estimator::KalmanState prior = state_;
  if (started_) prior = estimator::predict(a.model, state_).state;
  if (sample) {
    const Vector dev = sub(sample->project(a.sensor_ids), a.measurement_offset);
    state_ = estimator::update(a.model, prior, dev).state;
  } else {
    state_ = std::move(prior);
  }
  started_ = true;
  return {a.sensor_ids, add(a.model.h * state_.x_hat, a.measurement_offset), t};
}

// ---------------------------------------------------------------------------

namespace {

struct Probe {
  char channel;
  bool needs_controller;
};

Probe probe_for(const AttackObjective& objective) {
  return std::visit(overloaded{
                        [](const FrequencyManipulation&) { return Probe{'f', true}; },
                        [](const VoltageManipulation&) { return Probe{'q', false}; },
                        [](const LoadSharingDisruption&) { return Probe{'p', true}; },
                    },
                    objective);
}

double spread(const vddm::PredictedState& p) {
  double lo = p.dp_p(0), hi = p.dp_p(0);
  for (std::size_t i = 1; i < p.dgs(); ++i) {
    lo = std::min(lo, p.dp_p(i));
    hi = std::max(hi, p.dp_p(i));
  }
  return hi - lo;
}

double deviation(const AttackObjective& objective, const vddm::PredictedState& base,
                 const vddm::PredictedState& probed) {
  return std::visit(overloaded{
                        [&](const FrequencyManipulation&) {
                          double sum = 0.0;
                          for (std::size_t i = 0; i < base.dgs(); ++i)
                            sum += std::abs(probed.omega(i) - base.omega(i));
                          return sum / static_cast<double>(base.dgs());
                        },
                        [&](const VoltageManipulation& v) {
                          return std::abs(probed.v(v.target_dg) - base.v(v.target_dg));
                        },
                        [&](const LoadSharingDisruption&) {
                          return std::abs(spread(probed) - spread(base));
                        },
                    },
                    objective);
}

}  // namespace

TargetSelection identify_targets(const AttackObjective& objective, const vddm::VddmModel& model,
                                 const InfectionSet& zeta,
                                 const vddm::MeasurementVector& operating_point,
                                 const vddm::AlphaBound& alpha_max) {
  validate(objective, model.dgs());
  const Probe probe = probe_for(objective);
  const double horizon = *std::min_element(model.horizons.begin(), model.horizons.end());
  const auto base = vddm::predict_state(model, {operating_point, horizon, std::nullopt});

  TargetSelection sel;
  for (std::size_t i = 0; i < model.dgs(); ++i) {
    const std::string id = sensor(i, probe.channel);
    if (probe.needs_controller && !zeta.controls(i)) continue;
    if (!zeta.reads(id) || !contains(model.sensor_ids, id)) continue;
    const auto bound = alpha_max.find(id);
    if (bound == alpha_max.end() || !(bound->second > 0.0) || !std::isfinite(bound->second))
      continue;
    vddm::PredictionQuery q{operating_point, horizon, vddm::AttackVector{{id}, {bound->second}}};
    const auto probed = vddm::evaluate_attack(model, q, alpha_max);
    const double dev = deviation(objective, base, probed);
    sel.ranking.push_back({i, dev, dev / bound->second});
  }
  std::stable_sort(sel.ranking.begin(), sel.ranking.end(),
                   [](const TargetScore& a, const TargetScore& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.dg < b.dg;
                   });
  double total = 0.0;
  for (const auto& s : sel.ranking) total += s.deviation;
  if (sel.ranking.empty() || !(total > 1e-12))
    throw Error(ErrorKind::InfeasibleObjective,
                objective_name(objective) + " objective: no reachable DG moves the prediction");
  double acc = 0.0;
  for (const auto& s : sel.ranking) {
    sel.targets.push_back(s.dg);
    acc += s.deviation;
    if (acc >= 0.5 * total) break;
  }
  std::sort(sel.targets.begin(), sel.targets.end());
  return sel;
}

AttackWindow schedule(const FixedSchedule& policy, std::optional<double> islanded_at) {
  if (!(policy.t_end > policy.t_start))
    throw Error(ErrorKind::InvalidPlan, "attack window end " + csv::format(policy.t_end) +
                                            " s must be after its start " +
                                            csv::format(policy.t_start) + " s");
  if (islanded_at && policy.t_start < *islanded_at)
    throw Error(ErrorKind::InvalidPlan, "attack window starts at " + csv::format(policy.t_start) +
                                            " s, before islanding at " +
                                            csv::format(*islanded_at) + " s");
  return {policy.t_start, policy.t_end};
}

Scheduler::Scheduler(SchedulePolicy policy, bool requires_islanded)
    : policy_(std::move(policy)), requires_islanded_(requires_islanded) {
  if (const auto* s = std::get_if<SettledSchedule>(&policy_)) {
    if (!(s->tolerance_hz > 0.0) || !(s->duration > 0.0))
      throw Error(ErrorKind::InvalidPlan, "settled schedule needs tolerance and duration > 0");
  }
}

std::optional<AttackWindow> Scheduler::observe(double t, double freq_residual, bool islanded) {
  if (window_) return window_;
  if (const auto* f = std::get_if<FixedSchedule>(&policy_)) {
    if (t + 1e-12 < f->t_start) return std::nullopt;
    if (requires_islanded_ && !islanded)
      throw Error(ErrorKind::InvalidPlan, "attack window opens at " + csv::format(f->t_start) +
                                              " s but the microgrid is not islanded");
    window_ = AttackWindow{f->t_start, f->t_end};
    if (!(f->t_end > f->t_start)) throw Error(ErrorKind::InvalidPlan, "empty attack window");
    return window_;
  }
  const auto& s = std::get<SettledSchedule>(policy_);
  if (t < s.not_before || (requires_islanded_ && !islanded) || !(freq_residual <= s.tolerance_hz))
    return std::nullopt;
  window_ = AttackWindow{t, t + s.duration};
  return window_;
}

FaultForger::FaultForger(const InfectionSet& zeta, FaultForgery fault) : fault_(fault) {
  if (!zeta.pcc_access)
    throw Error(ErrorKind::Capability, "forging a PCC fault needs PCC access");
  if (!(fault.magnitude > 0.0) || !(fault.duration > 0.0))
    throw Error(ErrorKind::InvalidConfig, "fault magnitude and duration must be > 0");
}

std::optional<double> FaultForger::forged_current(double t) const {
  if (t + 1e-12 >= fault_.t_start && t + 1e-12 < fault_.t_start + fault_.duration)
    return fault_.magnitude;
  return std::nullopt;
}

AppliedInjection inject(const AttackPlan& plan, double t, const mg::DroopParams& droop,
                        const vddm::AlphaBound& alpha_max) {
  const std::size_t n = droop.size();
  AppliedInjection out{mg::ControllerBias::none(n), {}, false};
  if (t + 1e-12 < plan.window.t_start || t >= plan.window.t_end) return out;
  out.active = true;
  const double elapsed = std::max(0.0, t - plan.window.t_start);
  std::visit(overloaded{
                 [&](const FrequencyManipulation& f) {
                   for (auto k : plan.targets) out.bias.omega_ref_bias[k] = f.offset_hz;
                 },
                 [&](const VoltageManipulation& v) {
                   const std::size_t k = v.target_dg;
                   // A lower reactive reading raises the droop voltage setpoint.
                   const double bias = -(v.q_bias_var + v.ramp_v_per_s * elapsed / droop.d_q[k]);
                   out.bias.q_sensor_bias[k] = bias;
                   out.sensor_alpha.target_ids.push_back(sensor(k, 'q'));
                   out.sensor_alpha.deltas.push_back(bias);
                 },
                 [&](const LoadSharingDisruption& l) {
                   const double ramp =
                       l.ramp_time > 0.0 ? std::min(1.0, elapsed / l.ramp_time) : 1.0;
                   for (auto k : plan.targets)
                     out.bias.dp_report_scale[k] = 1.0 + (l.share_ratio[k] - 1.0) * ramp;
                 },
             },
             plan.objective);
  if (plan.mask_enabled) {
    for (std::size_t k = 0; k < out.sensor_alpha.target_ids.size(); ++k) {
      const auto& id = out.sensor_alpha.target_ids[k];
      const auto bound = alpha_max.find(id);
      const double b = bound == alpha_max.end() ? 0.0 : bound->second;
      if (!(std::abs(out.sensor_alpha.deltas[k]) <= b))
        throw Error(ErrorKind::StealthViolation, "bias on " + id + " at t=" + csv::format(t) +
                                                     " exceeds alpha_max");
    }
  }
  return out;
}

std::vector<std::string> influence_set(const AttackPlan& plan, const InfectionSet& zeta,
                                       const vddm::VddmModel& model) {
  std::vector<std::string> out;
  for (const auto& id : zeta.dg_sensors()) {
    if (!contains(model.sensor_ids, id)) continue;
    const std::size_t dg = mg::dg_index_of(id);
    const bool in_scope =
        plan.mask_scope == MaskScope::InfectionSet ||
        std::find(plan.targets.begin(), plan.targets.end(), dg) != plan.targets.end();
    if (in_scope) out.push_back(id);
  }
  return out;
}

Masker::Masker(const vddm::VddmModel& model, const AttackPlan& plan, const InfectionSet& zeta)
    : model_(&model), plan_(plan), influence_(influence_set(plan, zeta, model)) {}

void Masker::anchor(vddm::MeasurementVector clean_estimate) {
  for (const auto& id : model_->sensor_ids)
    if (!contains(clean_estimate.sensor_ids, id))
      throw Error(ErrorKind::InvalidQuery, "mask anchor lacks sensor " + id);
  anchor_ = std::move(clean_estimate);
}

vddm::MeasurementVector Masker::mask(const vddm::MeasurementVector& reported) const {
  const double t = reported.timestamp;
  if (!plan_.mask_enabled || influence_.empty() || t + 1e-12 < plan_.window.t_start ||
      t >= plan_.window.t_end)
    return reported;
  if (!anchor_) throw Error(ErrorKind::InvalidQuery, "mask used before it was anchored");

  const auto [h_lo, h_hi] = std::minmax_element(model_->horizons.begin(), model_->horizons.end());
  const double horizon = std::clamp(t - anchor_->timestamp, *h_lo, *h_hi);
  const auto pred = vddm::predict_state(*model_, {*anchor_, horizon, std::nullopt});

  vddm::MeasurementVector out = reported;
  for (std::size_t k = 0; k < out.sensor_ids.size(); ++k) {
    const auto& id = out.sensor_ids[k];
    if (!contains(influence_, id)) continue;
    const std::size_t i = mg::dg_index_of(id);
    switch (mg::quantity_of(id)) {
      case 'f': out.values[k] = pred.omega(i); break;
      case 'v': out.values[k] = pred.v(i); break;
      case 'p': out.values[k] = pred.dp_p(i) / model_->d_p[i]; break;
      case 'q': out.values[k] = pred.dq_q(i) / model_->d_q[i]; break;
      default: break;
    }
  }
  return out;
}

void AttackLog::add(double t, std::string event, std::string target, std::string channel,
                    double value, std::string detail) {
  rows_.push_back({t, std::move(event), std::move(target), std::move(channel), value,
                   std::move(detail)});
}

std::string AttackLog::csv() const {
  csv::Writer w({"t", "event", "target", "channel", "value", "detail"});
  for (const auto& r : rows_) {
    w.cell(r.t).cell(r.event).cell(r.target).cell(r.channel).cell(r.value).cell(r.detail);
    w.end_row();
  }
  return w.text();
}

}  // namespace gridveil::rootkit
