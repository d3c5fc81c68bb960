#pragma once

// Feed-forward network trained by plain minibatch SGD on mean squared error.
// Hidden layers apply one activation; the output layer is affine.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gridveil/linalg.hpp"
#include "gridveil/random.hpp"

namespace gridveil::neural {

enum class Activation : std::uint8_t { Tanh = 0, Relu = 1, Identity = 2 };

struct LayerSpec {
  std::vector<std::size_t> sizes;  // input, hidden..., output
  Activation activation = Activation::Tanh;

  std::size_t layers() const noexcept { return sizes.empty() ? 0 : sizes.size() - 1; }
  std::size_t inputs() const { return sizes.front(); }
  std::size_t outputs() const { return sizes.back(); }
  void validate() const;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkWeights {
  LayerSpec spec;
  std::vector<Matrix> w;  // layer k: sizes[k+1] x sizes[k]
  std::vector<Vector> b;

  static NetworkWeights zeros(const LayerSpec& spec);
  /// Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases.
  static NetworkWeights glorot(const LayerSpec& spec, Rng& rng);

  bool all_finite() const;
  void validate() const;
  friend bool operator==(const NetworkWeights&, const NetworkWeights&) = default;
};

struct TrainConfig {
  double eta = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t patience = 20;

  void validate() const;
};

struct Sample {
  Vector input;
  Vector target;
};

Vector forward(const NetworkWeights& w, std::span<const double> input);

struct Gradients {
  std::vector<Matrix> dw;
  std::vector<Vector> db;
};

/// MSE = mean over samples and outputs of (y - t)^2, and its exact gradient.
struct LossGradient {
  double loss;
  Gradients grad;
};

LossGradient loss_and_gradient(const NetworkWeights& w, std::span<const Sample> batch);
double mse(const NetworkWeights& w, std::span<const Sample> batch);

struct UpdateResult {
  NetworkWeights weights;
  double batch_loss;  // before the update
};

/// One SGD step: w' = w - eta * grad MSE(batch).
UpdateResult backprop_update(const TrainConfig& cfg, const NetworkWeights& w,
                             std::span<const Sample> batch);

/// Per-feature affine scaling to zero mean / unit variance, fitted on the
/// training split and stored with the weights.
struct Normalization {
  Vector in_mean, in_scale;
  Vector out_mean, out_scale;

  static Normalization identity(std::size_t in, std::size_t out);
  static Normalization fit(std::span<const Sample> data, std::span<const std::size_t> rows);

  Vector input(std::span<const double> raw) const;
  Vector output(std::span<const double> raw) const;
  Vector denormalize_output(std::span<const double> normalized) const;
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct TrainedModel {
  NetworkWeights weights;
  Normalization norm;

  /// Raw features in, raw targets out.
  Vector predict(std::span<const double> raw_input) const;
  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded shuffle, then 70 / 15 / 15.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch;
  double train_mse;  // normalized target units
  double val_mse;
  double best_val_mse;
};

struct TrainResult {
  TrainedModel model;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch;
  double train_mse;
  double val_mse;
  double test_mse;
  DatasetSplit split;
};

/// Throws Error(Divergence) naming the epoch if a loss turns non-finite.
TrainResult train(const LayerSpec& spec, const TrainConfig& cfg, std::span<const Sample> dataset);

/// MSE of a trained model on raw samples, measured in its normalized target units.
double normalized_mse(const TrainedModel& model, std::span<const Sample> data,
                      std::span<const std::size_t> rows);

/// "GVNN" little-endian blob: magic, u16 version, layer spec, row-major f64
/// weights and biases, then the normalization constants.
std::vector<std::uint8_t> serialize(const TrainedModel& model);
TrainedModel deserialize(std::span<const std::uint8_t> blob);

}  // namespace gridveil::neural
