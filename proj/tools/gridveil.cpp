// gridveil: run scenarios, train attacker models from traces, summarize runs
// and print the detector calibration.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gridveil/csv.hpp"
#include "gridveil/error.hpp"
#include "gridveil/report.hpp"
#include "gridveil/runner.hpp"
#include "gridveil/scenario.hpp"

namespace fs = std::filesystem;
using namespace gridveil;

namespace {

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, bool quiet) {
  auto s = sim::parse_scenario(path);
  if (seed) s.seed = *seed;
  const auto ex = sim::execute(s);
  const auto& rec = ex.recording;
  const auto& art = ex.artifacts;
  const fs::path dir = sim::output_root() / s.name;
  sim::write_run(dir, art);
  if (!quiet) {
    const auto summary = sim::report(dir);
    std::cout << summary.text;
  }
  std::cout << dir.string() << "\n";
  if (rec.divergence) {
    std::cerr << "gridveil: " << *rec.divergence << "\n";
    return 3;
  }
  return 0;
}

int cmd_train(const std::string& path, const std::string& trace_path) {
  const auto s = sim::parse_scenario(path);
  const auto setup = sim::prepare(s);
  const auto trace = csv::load(trace_path);
  const auto out = sim::train_from_trace(setup, trace);
  const fs::path dir = sim::output_root() / s.name / "model";
  fs::create_directories(dir);
  vddm::save_bundle(dir / "vddm.bundle", out.model);
  put(dir / "fidelity.json", sim::fidelity_json(out.fidelity));
  put(dir / "training_history.csv", sim::history_csv(out.result.history));
  std::cout << "trace samples " << out.trace_samples << ", corpus pairs " << out.corpus_samples
            << ", best epoch " << out.result.best_epoch << "\n";
  std::cout << "val mse " << csv::format(out.fidelity.val_mse) << ", test mse "
            << csv::format(out.fidelity.test_mse) << ", model " << out.model.model_version << "\n";
  std::cout << (dir / "vddm.bundle").string() << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  std::cout << sim::report(dir).text;
  return 0;
}

int cmd_calibrate(const std::string& path) {
  const auto s = sim::parse_scenario(path);
  const auto setup = sim::prepare(s);
  std::printf("tau %.6f (window %zu, false-alarm target %g)\n", setup.detector.tau,
              setup.detector.window, setup.detector.false_alarm_target);
  if (!setup.alpha.warning.empty()) std::printf("warning: %s\n", setup.alpha.warning.c_str());
  std::printf("%-10s %14s %14s %10s\n", "sensor", "alpha_max", "sigma", "ratio");
  const auto ids = mg::dg_sensor_ids(s.dg_count);
  const auto sigma = s.noise.dg_sigma(s.dg_count);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const double a = setup.bound.at(ids[j]);
    std::printf("%-10s %14.6g %14.6g %10.4f\n", ids[j].c_str(), a, sigma[j], a / sigma[j]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microgrid rootkit and stealth-detection simulator"};
  app.require_subcommand(1);

  std::string scenario, trace, run_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "run a scenario into $GRIDVEIL_OUTPUT_ROOT/<name>");
  run->add_option("scenario", scenario, "scenario file")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_flag("--quiet", quiet, "only print the run directory");

  auto* train = app.add_subcommand("train", "train the attacker model on a trace");
  train->add_option("scenario", scenario, "scenario file")->required();
  train->add_option("--trace", trace, "telemetry or capture CSV")->required();

  auto* rep = app.add_subcommand("report", "verdicts and figure extracts of a run");
  rep->add_option("run_dir", run_dir, "run directory")->required();

  auto* cal = app.add_subcommand("calibrate", "print the per-sensor alpha_max");
  cal->add_option("scenario", scenario, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(scenario, seed, quiet);
    if (*train) return cmd_train(scenario, trace);
    if (*rep) return cmd_report(run_dir);
    if (*cal) return cmd_calibrate(scenario);
  } catch (const Error& e) {
    std::cerr << "gridveil: " << e.what() << "\n";
    return sim::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "gridveil: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
