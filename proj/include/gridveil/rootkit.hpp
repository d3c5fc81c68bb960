#pragma once

// The adversary: eavesdropping through an infection set, target selection with
// the VDDM, attack scheduling, forged PCC faults, objective-specific injection
// and masking of reports with predicted normal values.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gridveil/kalman.hpp"
#include "gridveil/random.hpp"
#include "gridveil/microgrid.hpp"
#include "gridveil/vddm.hpp"

namespace gridveil::rootkit {

struct InfectionSet {
  std::vector<std::string> sensors;      // readable and writable sensor ids
  std::vector<std::size_t> controllers;  // DG indices whose controllers can be biased
  bool pcc_access = false;

  /// Sorts and checks every id against an n-DG plant.
  void normalize(std::size_t n_dg);
  void validate(std::size_t n_dg) const;
  bool reads(std::string_view id) const;
  bool controls(std::size_t dg) const;
  /// Infected sensors that belong to a DG (PCC sensors dropped).
  std::vector<std::string> dg_sensors() const;
};

struct FrequencyManipulation {
  double offset_hz = 0.0;  // added to the reference of every target controller
};

struct VoltageManipulation {
  std::size_t target_dg = 0;
  double ramp_v_per_s = 0.0;  // equivalent voltage-setpoint ramp
  double q_bias_var = 0.0;    // constant part of the reactive-reading bias
};

struct LoadSharingDisruption {
  Vector share_ratio;      // per DG scale on the reported d_p P product
  double ramp_time = 1.0;  // s to reach the full ratio
};

using AttackObjective =
    std::variant<FrequencyManipulation, VoltageManipulation, LoadSharingDisruption>;

void validate(const AttackObjective& objective, std::size_t n_dg);
std::string objective_name(const AttackObjective& objective);

struct AttackWindow {
  double t_start = 0.0;
  double t_end = 0.0;
};

enum class MaskScope { Targets, InfectionSet };

struct AttackPlan {
  AttackObjective objective;
  std::vector<std::size_t> targets;
  AttackWindow window;
  bool mask_enabled = false;
  MaskScope mask_scope = MaskScope::Targets;
};

/// Largest sensor-channel bias the plan applies over its window, per sensor.
/// Controller-level manipulations (reference bias, report scaling) are not
/// sensor readings and contribute nothing.
vddm::AttackVector peak_sensor_injection(const AttackPlan& plan, const mg::DroopParams& droop);

/// Checks targets against the infection set, the window, and with masking on
/// the stealth bound on every sensor injection. Throws InvalidPlan,
/// Capability or StealthViolation.
AttackPlan make_plan(AttackObjective objective, std::vector<std::size_t> targets,
                     AttackWindow window, bool mask_enabled, MaskScope scope,
                     const InfectionSet& zeta, const mg::DroopParams& droop,
                     const vddm::AlphaBound& alpha_max);

// ---------------------------------------------------------------------------
// Eavesdropping

/// Read-only projection of telemetry onto the infection set. Missed samples
/// are drawn from a private generator so the plant never sees them.
class Eavesdropper {
 public:
  Eavesdropper(const InfectionSet& zeta, std::vector<std::string> telemetry_ids,
               double drop_probability, std::uint64_t seed);

  std::optional<vddm::MeasurementVector> tap(std::span<const double> telemetry, double t);
  const std::vector<std::string>& sensor_ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::vector<std::size_t> columns_;
  double drop_probability_;
  Rng rng_;
};

/// Whole-trace form: telemetry rows on a fixed grid into a stream.
vddm::MeasurementStream eavesdrop(std::span<const Vector> telemetry,
                                  std::span<const std::string> telemetry_ids,
                                  const InfectionSet& zeta, double sample_period, double t0,
                                  double drop_probability, std::uint64_t seed);

/// Sub-stream on `ids` (all must be present).
vddm::MeasurementStream select(const vddm::MeasurementStream& stream,
                               std::span<const std::string> ids);

/// Online version of the attacker's filter over its eavesdropped stream.
class AttackerTracker {
 public:
  explicit AttackerTracker(const vddm::AttackerModel& attacker);

  /// Filtered estimate of the attacker's sensors after this sample.
  vddm::MeasurementVector observe(const std::optional<vddm::MeasurementVector>& sample, double t);

 private:
  const vddm::AttackerModel* attacker_;
  estimator::KalmanState state_;
  bool started_ = false;
};

// ---------------------------------------------------------------------------
// Target identification and scheduling

struct TargetScore {
  std::size_t dg;
  double deviation;  // predicted objective-relevant change under the probe
  double score;      // deviation per unit of admissible bias
};

struct TargetSelection {
  std::vector<std::size_t> targets;
  std::vector<TargetScore> ranking;
};

/// Probes each reachable DG with its full admissible bias on the objective's
/// channel and keeps the smallest prefix of the ranking that carries at least
/// half of the summed predicted deviation.
TargetSelection identify_targets(const AttackObjective& objective, const vddm::VddmModel& model,
                                 const InfectionSet& zeta,
                                 const vddm::MeasurementVector& operating_point,
                                 const vddm::AlphaBound& alpha_max);

struct FixedSchedule {
  double t_start = 5.0;
  double t_end = 0.0;
};

struct SettledSchedule {
  double tolerance_hz = 1e-3;
  double duration = 0.0;
  double not_before = 0.0;
};

using SchedulePolicy = std::variant<FixedSchedule, SettledSchedule>;

/// Fixed windows only. `islanded_at` is when the plan expects islanding.
AttackWindow schedule(const FixedSchedule& policy, std::optional<double> islanded_at);

/// Stamps the window at the first step that satisfies the policy.
class Scheduler {
 public:
  Scheduler(SchedulePolicy policy, bool requires_islanded);

  std::optional<AttackWindow> observe(double t, double freq_residual, bool islanded);
  const std::optional<AttackWindow>& window() const noexcept { return window_; }

 private:
  SchedulePolicy policy_;
  bool requires_islanded_;
  std::optional<AttackWindow> window_;
};

// ---------------------------------------------------------------------------
// Fault forging, injection, masking

struct FaultForgery {
  double t_start = 1.0;
  double magnitude = 0.0;  // A peak
  double duration = 0.1;
};

class FaultForger {
 public:
  /// Throws Capability without PCC access.
  FaultForger(const InfectionSet& zeta, FaultForgery fault);

  std::optional<double> forged_current(double t) const;
  const FaultForgery& fault() const noexcept { return fault_; }

 private:
  FaultForgery fault_;
};

struct AppliedInjection {
  mg::ControllerBias bias;
  vddm::AttackVector sensor_alpha;  // added to the physical readings
  bool active = false;
};

/// Manipulations in force at time t. With masking on, sensor biases above
/// alpha_max throw StealthViolation.
AppliedInjection inject(const AttackPlan& plan, double t, const mg::DroopParams& droop,
                        const vddm::AlphaBound& alpha_max);

/// Sensors whose reports the mask replaces.
std::vector<std::string> influence_set(const AttackPlan& plan, const InfectionSet& zeta,
                                       const vddm::VddmModel& model);

class Masker {
 public:
  Masker(const vddm::VddmModel& model, const AttackPlan& plan, const InfectionSet& zeta);

  /// The attacker's clean estimate just before the window opens.
  void anchor(vddm::MeasurementVector clean_estimate);
  bool anchored() const noexcept { return anchor_.has_value(); }

  /// Replaces influence-set readings inside the window; others pass through.
  vddm::MeasurementVector mask(const vddm::MeasurementVector& reported) const;
  const std::vector<std::string>& influence() const noexcept { return influence_; }

 private:
  const vddm::VddmModel* model_;
  AttackPlan plan_;
  std::vector<std::string> influence_;
  std::optional<vddm::MeasurementVector> anchor_;
};

// ---------------------------------------------------------------------------

struct AttackLogRow {
  double t;
  std::string event;
  std::string target;
  std::string channel;
  double value;
  std::string detail;
};

class AttackLog {
 public:
  void add(double t, std::string event, std::string target = {}, std::string channel = {},
           double value = 0.0, std::string detail = {});
  const std::vector<AttackLogRow>& rows() const noexcept { return rows_; }
  std::string csv() const;

 private:
  std::vector<AttackLogRow> rows_;
};

}  // namespace gridveil::rootkit
