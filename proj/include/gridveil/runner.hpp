#pragma once

// Scenario execution: plant preparation, the per-sample hook cycle
// (eavesdrop, inject, step, mask, detect) and the run artifacts.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridveil/bdd.hpp"
#include "gridveil/csv.hpp"
#include "gridveil/error.hpp"
#include "gridveil/kalman.hpp"
#include "gridveil/microgrid.hpp"
#include "gridveil/rootkit.hpp"
#include "gridveil/scenario.hpp"
#include "gridveil/vddm.hpp"

namespace gridveil::sim {

/// Seed sub-streams of one run.
enum class Stream : std::uint64_t { SensorNoise = 1, LoadNoise = 2, Eavesdrop = 3, Recon = 4 };

/// Plant-dependent pieces shared by every run of one scenario plant.
struct Setup {
  Scenario scenario;
  mg::Microgrid grid;
  mg::SimState connected;  // settled grid-connected start
  mg::SimState islanded;   // settled islanded equilibrium, the linearization point
  mg::Linearization lin;
  estimator::LinearModel operator_model;
  estimator::RiccatiResult operator_ss;
  bdd::DetectorConfig detector;
  bdd::AlphaMax alpha;
  vddm::AlphaBound bound;
};

estimator::LinearModel operator_model(const mg::Linearization& lin, const NoiseSettings& noise,
                                      std::size_t n_dg);
Setup prepare(const Scenario& s);

struct AttackerSide {
  vddm::AttackerModel attacker;
  std::optional<vddm::VddmModel> vddm;
  std::optional<vddm::FidelityReport> fidelity;
  std::vector<neural::EpochRecord> history;
};

/// True when the attack needs the trained model (masking or target search).
bool needs_vddm(const Scenario& s);
vddm::AttackerModel attacker_model(const Setup& setup, const rootkit::InfectionSet& zeta);

/// Clean islanded capture through the infection set, then corpus and training.
struct ReconData {
  vddm::MeasurementStream stream;  // eavesdropped, attacker sensors
  vddm::TruthTrace holdout;
  std::size_t train_length = 0;
};
ReconData reconnaissance(const Setup& setup, const vddm::AttackerModel& attacker);
AttackerSide prepare_attacker(const Setup& setup);
AttackerSide train_attacker(const Setup& setup, vddm::AttackerModel attacker,
                            const vddm::MeasurementStream& train, const vddm::TruthTrace& holdout);

struct SampleRow {
  double t = 0.0;
  bool islanded = false;
  bool armed = false;
  bool attack = false;
  bool masked = false;
  std::vector<mg::DGState> dgs;
  Vector p, q;  // instantaneous flows
  mg::ConvergenceMetrics metrics{};
  Vector truth;     // noise-free readings, mg::sensor_ids() order
  Vector reported;  // what the operator receives
  double r = 0.0;   // NaN while disarmed
  double r_mean = 0.0;
  bool alarm = false;
};

struct RunEvent {
  double t;
  std::string event;
  std::string detail;
};

struct Recording {
  std::vector<std::string> sensor_ids;
  std::vector<SampleRow> rows;
  std::vector<RunEvent> events;
  rootkit::AttackLog attack_log;
  std::optional<rootkit::AttackPlan> plan;
  std::optional<double> islanded_at;
  std::optional<std::string> divergence;  // set when the series was truncated
};

/// Runs `s` on the plant of `setup` (same microgrid, noise models may differ
/// only in seed, duration, rootkit and detector arming).
Recording simulate(const Setup& setup, const Scenario& s, const AttackerSide* attacker);

struct RunArtifacts {
  std::string telemetry_csv;
  std::string alarm_csv;
  std::string events_csv;
  std::string attack_csv;
  std::string resolved_yaml;
  std::string report_json;
  std::optional<std::string> divergence;
};

std::string telemetry_csv(const Recording& rec, std::size_t n_dg);
RunArtifacts render(const Setup& setup, const Recording& rec, const AttackerSide* attacker);
void write_run(const std::filesystem::path& dir, const RunArtifacts& art);

struct Execution {
  Setup setup;
  std::optional<AttackerSide> attacker;
  Recording recording;
  RunArtifacts artifacts;
};

/// prepare, attacker preparation, simulate and render in one call.
Execution execute(const Scenario& s);

/// Per-output scale of the VDDM labels in sensor-noise units
/// (sigma_f, sigma_v, d_p sigma_p, d_q sigma_q per DG).
Vector label_scale(const NoiseSettings& noise, std::span<const double> d_p,
                   std::span<const double> d_q);

struct TraceTraining {
  vddm::VddmModel model;
  neural::TrainResult result;
  vddm::FidelityReport fidelity;
  std::size_t corpus_samples = 0;
  std::size_t trace_samples = 0;
};

/// Trains on a telemetry (or capture) CSV: columns rep.<id> or <id>, "nan"
/// marking a missed sample. Only islanded, attack-free rows are used; the
/// last holdout fraction is scored against true.<id> when present.
TraceTraining train_from_trace(const Setup& setup, const csv::Table& trace);
std::string history_csv(const std::vector<neural::EpochRecord>& history);
std::string fidelity_json(const vddm::FidelityReport& f);

/// 0 ok, 2 configuration, 3 divergence, 4 infeasible objective, 5 stealth
/// violation, 1 anything else.
int exit_code(ErrorKind kind);

/// $GRIDVEIL_OUTPUT_ROOT, or ./runs.
std::filesystem::path output_root();

}  // namespace gridveil::sim
