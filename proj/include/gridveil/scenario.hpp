#pragma once

// Scenario files: YAML with a schema version, every default materialized on
// load so the resolved form can be echoed into run reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gridveil/microgrid.hpp"
#include "gridveil/neural.hpp"
#include "gridveil/rootkit.hpp"

namespace gridveil::sim {

inline constexpr int kSchemaVersion = 1;

struct NoiseSettings {
  double f = 0.01;  // Hz
  double v = 0.5;   // V
  double p = 20.0;  // W
  double q = 20.0;  // var
  double pcc_i = 0.5;
  double pcc_v = 0.5;
  double load_p = 20.0;  // W, white, held over one sample period
  double load_q = 10.0;  // var

  /// Per-sensor standard deviations in mg::sensor_ids() / dg_sensor_ids() order.
  Vector all_sigma(std::size_t n_dg) const;
  Vector dg_sigma(std::size_t n_dg) const;
};

struct ProtectionSettings {
  double rated_current = 0.0;  // A peak; 0 derives it from the DG ratings
  double pickup_factor = 2.0;
  double dwell = 0.05;
};

struct DetectorSettings {
  std::size_t window = 20;
  double false_alarm = 0.01;
  std::optional<double> tau;  // default from the chi-square quantile
  double arm_delay = 1.5;     // s after islanding
};

struct VddmSettings {
  std::optional<std::filesystem::path> bundle;
  Vector horizons{0.01, 0.05, 0.1};
  std::vector<std::size_t> hidden{32, 32};
  neural::Activation activation = neural::Activation::Tanh;
  neural::TrainConfig train;
  double recon_duration = 30.0;  // s of clean islanded eavesdropping for inline training
  double drop_probability = 0.0;
  std::size_t min_length = 1000;
  std::size_t max_gap = 100;
  double holdout_fraction = 0.2;
};

struct FaultSettings {
  double time = 1.0;
  double magnitude_factor = 3.0;  // x rated current
  double duration = 0.1;
};

struct AttackSettings {
  rootkit::AttackObjective objective;
  std::optional<std::vector<std::size_t>> targets;  // empty: chosen with the VDDM
  rootkit::SchedulePolicy schedule;
  bool mask = false;
  rootkit::MaskScope scope = rootkit::MaskScope::Targets;
};

struct RootkitSettings {
  rootkit::InfectionSet infection;
  std::optional<FaultSettings> fault;
  std::optional<AttackSettings> attack;
};

struct Scenario {
  int schema_version = kSchemaVersion;
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration = 15.0;
  double dt = 1e-3;
  std::size_t decimation = 10;  // plant steps per sample period

  std::size_t dg_count = 4;
  Vector p_rated;
  Vector q_rated;
  double delta_omega_th = 0.5;
  double delta_v_th = 0.04 * 311.0;
  double omega_n = 50.0;
  double v_n = 311.0;
  Matrix adjacency;
  Vector pinning;
  double k1 = 40.0;
  double k2 = 20.0;
  mg::NetworkModel network;
  bool start_islanded = false;          // begin at the settled islanded equilibrium
  std::optional<double> islanding_time;  // operator-initiated opening of the PCC

  NoiseSettings noise;
  ProtectionSettings protection;
  DetectorSettings detector;
  VddmSettings vddm;
  std::optional<RootkitSettings> rootkit;

  double sample_period() const { return dt * static_cast<double>(decimation); }
  mg::DroopParams droop() const;
  mg::CommGraph graph() const;
  mg::Microgrid microgrid() const;
  double rated_current() const;
  /// When the plan may assume islanded operation; nullopt if it never islands.
  std::optional<double> expected_islanding() const;
};

/// Default 4-DG reference plant with nothing attached.
Scenario reference_scenario();

/// Throws Error(Schema) naming the field and its line.
Scenario parse_scenario(const std::filesystem::path& path);
Scenario parse_scenario_text(std::string_view text, const std::filesystem::path& base_dir = {});

/// Fully resolved scenario as YAML; parse_scenario_text(emit_scenario(s)) == s.
std::string emit_scenario(const Scenario& s);

}  // namespace gridveil::sim
