#pragma once

// The attacker's virtual data-driven model: a Kalman-filter-densified corpus of
// eavesdropped measurements, an MLP trained on it, and the two prediction
// queries (normal trajectory, and trajectory under a trial attack vector).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridveil/kalman.hpp"
#include "gridveil/linalg.hpp"
#include "gridveil/microgrid.hpp"
#include "gridveil/neural.hpp"

namespace gridveil::vddm {

struct MeasurementVector {
  std::vector<std::string> sensor_ids;  // unique, canonical order
  Vector values;
  double timestamp = 0.0;

  void validate() const;
  /// Values for `ids` in that order; every id must be present.
  Vector project(std::span<const std::string> ids) const;
};

/// Sensor samples on a fixed grid; nullopt marks a missed sample.
struct MeasurementStream {
  std::vector<std::string> sensor_ids;
  double sample_period = 0.0;
  double t0 = 0.0;
  std::vector<std::optional<Vector>> samples;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t observed() const;
  void validate() const;
};

struct AttackVector {
  std::vector<std::string> target_ids;
  Vector deltas;

  double magnitude() const { return max_abs(deltas); }
};

struct PredictionQuery {
  MeasurementVector m;
  double horizon = 0.0;
  std::optional<AttackVector> alpha;
};

/// Per DG: omega (Hz), v (V), d_p*P (Hz), d_q*Q (V).
struct PredictedState {
  Vector values;
  double horizon_used = 0.0;
  std::string model_version;

  std::size_t dgs() const noexcept { return values.size() / 4; }
  double omega(std::size_t i) const { return values[4 * i]; }
  double v(std::size_t i) const { return values[4 * i + 1]; }
  double dp_p(std::size_t i) const { return values[4 * i + 2]; }
  double dq_q(std::size_t i) const { return values[4 * i + 3]; }
};

/// What the attacker knows of the plant: the linearization restricted to the
/// sensors it reads, in deviation coordinates, plus the map from state to the
/// predicted quantities.
struct AttackerModel {
  std::vector<std::string> sensor_ids;  // measurement rows of `model`
  estimator::LinearModel model;
  Vector measurement_offset;  // operating point of the stream sensors
  Matrix label_map;           // 4N x states
  Vector label_offset;        // 4N
  estimator::KalmanState initial;
  Vector d_p;
  Vector d_q;

  std::size_t dgs() const noexcept { return d_p.size(); }
};

/// `sensor_sigma` is indexed like mg::dg_sensor_ids(); `load_sigma` is (P, Q).
AttackerModel make_attacker_model(const mg::Linearization& lin, const mg::DroopParams& droop,
                                  std::span<const std::string> sensors,
                                  std::span<const double> sensor_sigma,
                                  std::span<const double> load_sigma);

struct CorpusConfig {
  Vector horizons;               // seconds, positive multiples of the sample period
  std::size_t min_length = 1000;  // samples
  std::size_t max_gap = 100;      // longer gaps are low quality and excluded
};

struct Corpus {
  std::vector<neural::Sample> samples;  // input = [m(t), T], target = labels at t + T
  std::vector<std::size_t> horizon_index;
  std::vector<std::size_t> time_index;
  std::vector<std::string> sensor_ids;
  Vector horizons;
  std::size_t excluded = 0;
};

/// Densified corpus: gaps filled by the attacker's filter, labels from the
/// filtered state at t + T.
Corpus build_corpus(const MeasurementStream& stream, const AttackerModel& attacker,
                    const CorpusConfig& cfg);

/// Baseline without the filter: only pairs observed at both ends, labels from
/// the raw readings. The stream must carry f, p, q, v of every DG.
Corpus build_raw_corpus(const MeasurementStream& stream, std::span<const double> d_p,
                        std::span<const double> d_q, const CorpusConfig& cfg);

struct VddmModel {
  neural::TrainedModel net;
  std::vector<std::string> sensor_ids;
  Vector horizons;
  Vector d_p;
  Vector d_q;
  std::string model_version;

  std::size_t dgs() const noexcept { return d_p.size(); }
};

struct TrainedVddm {
  VddmModel model;
  neural::TrainResult result;
};

/// Hidden widths sit between the corpus input and the 4N outputs.
TrainedVddm train_vddm(const Corpus& corpus, std::span<const std::size_t> hidden,
                       neural::Activation activation, const neural::TrainConfig& cfg,
                       std::span<const double> d_p, std::span<const double> d_q);

/// Fingerprint of everything the weights depend on.
std::string model_version(const Corpus& corpus, const neural::LayerSpec& spec,
                          const neural::TrainConfig& cfg);

/// Throws InvalidQuery on a non-positive horizon, a present alpha, or sensors
/// missing from the query.
PredictedState predict_state(const VddmModel& model, const PredictionQuery& q);

/// Per-sensor bound; sensors absent from the map are not attackable.
using AlphaBound = std::map<std::string, double, std::less<>>;

/// Prediction for m + alpha. Throws StealthViolation when any |delta| exceeds
/// its bound (the bound itself is admissible).
PredictedState evaluate_attack(const VddmModel& model, const PredictionQuery& q,
                               const AlphaBound& alpha_max);

/// Held-out trace: fully observed reports and the true predicted quantities
/// (4N per sample) on the same grid.
struct TruthTrace {
  MeasurementStream reported;
  std::vector<Vector> truth;
};

struct FidelityReport {
  double train_mse = 0.0;
  double val_mse = 0.0;
  double test_mse = 0.0;
  Vector horizons;
  Vector per_horizon_mse;  // against the truth trace
  double trace_mse = 0.0;  // all horizons pooled
  std::string model_version;
};

/// Trace errors are divided by `scale` per output (default: the model's own
/// output scale) so models trained on different corpora compare in one unit.
FidelityReport fidelity_report(const VddmModel& model, const neural::TrainResult& result,
                               const TruthTrace& trace, std::span<const double> scale = {});

void save_bundle(const std::filesystem::path& path, const VddmModel& model);
VddmModel load_bundle(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_bundle(const VddmModel& model);
VddmModel deserialize_bundle(std::span<const std::uint8_t> bytes);

/// Per-DG (omega, v, d_p P, d_q Q) from a full reading in dg_sensor_ids() order.
Vector labels_from_readings(std::span<const double> dg_readings, std::span<const double> d_p,
                            std::span<const double> d_q);

}  // namespace gridveil::vddm
