#pragma once

// Verdicts and figure extracts computed from a run's CSV files only, so any
// independent script can recompute them.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gridveil/csv.hpp"
#include "gridveil/scenario.hpp"

namespace gridveil::sim {

struct Verdicts {
  std::string plant;              // nominal | diverged
  std::string secondary_control;  // nominal | off_target | not_evaluated
  std::string load_sharing;       // nominal | unequal | not_evaluated
  std::string objective;          // nominal (no attack) | met | not_met
  std::string stealth;            // nominal | false_alarms (no attack); maintained | violated
  double alarm_rate = 0.0;
  std::size_t windows = 0;
  std::vector<std::pair<std::string, double>> metrics;  // the numbers behind the verdicts
};

/// `telemetry` and `events` as written by the runner; `s` is the resolved scenario.
Verdicts analyze(const csv::Table& telemetry, const csv::Table& events, const Scenario& s);
nlohmann::ordered_json to_json(const Verdicts& v);
std::string verdict_table(const Verdicts& v);

/// Figure ids: frequency, voltage, power_share, alarms.
std::vector<std::string> figure_ids();
/// Plot-ready extract; throws InvalidInput naming the figure when a series is missing.
std::string figure_csv(const std::string& figure, const csv::Table& telemetry, std::size_t n_dg,
                       double tau);

struct ReportSummary {
  Verdicts verdicts;
  std::vector<std::filesystem::path> figures;
  std::string text;
};

/// Reads telemetry.csv, events.csv and scenario.resolved.yaml from `run_dir`,
/// writes figures/<id>.csv and summary.txt.
ReportSummary report(const std::filesystem::path& run_dir);

}  // namespace gridveil::sim
