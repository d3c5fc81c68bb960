#pragma once

// Operator-side bad-data detection: the normalized innovation squared of the
// operator's own Kalman filter, averaged over a sliding window and compared
// with a chi-square threshold.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gridveil/kalman.hpp"
#include "gridveil/linalg.hpp"

namespace gridveil::bdd {

struct DetectorConfig {
  double tau = 0.0;  // threshold on the windowed mean of r
  std::size_t window = 20;
  double false_alarm_target = 0.01;

  void validate() const;
};

/// chi2 quantile at (measurements * window) dof and 1 - false_alarm, divided by window.
double default_tau(std::size_t measurements, std::size_t window, double false_alarm);
DetectorConfig default_config(std::size_t measurements, std::size_t window = 20,
                              double false_alarm = 0.01);

/// (reported - expected)' S^-1 (reported - expected).
double residual(std::span<const double> reported, std::span<const double> expected,
                const Matrix& s_cov);
double residual(std::span<const double> deviation, const Cholesky& s_factor);

/// Alarm iff the windowed mean is strictly above tau.
inline bool detect(double windowed_mean, const DetectorConfig& cfg) { return windowed_mean > cfg.tau; }

class WindowedDetector {
 public:
  explicit WindowedDetector(DetectorConfig cfg);

  struct Decision {
    double mean;  // NaN until the window has filled
    bool alarm;
  };

  Decision push(double r);
  bool full() const noexcept { return count_ >= cfg_.window; }
  void reset();
  const DetectorConfig& config() const noexcept { return cfg_; }

 private:
  DetectorConfig cfg_;
  std::vector<double> ring_;
  std::size_t next_ = 0;
  std::size_t count_ = 0;
};

struct AlphaMax {
  Vector per_sensor;   // largest admissible constant bias per measurement row
  Vector worst_shift;  // worst-window mean of mu' S^-1 mu per unit bias
  double tau = 0.0;
  double clean_mean = 0.0;
  bool unbounded = false;
  std::string warning;
};

/// Per-sensor bound such that the expected windowed statistic under a constant
/// bias onset stays at or below tau in every window. Uses the steady-state
/// filter; the innovation mean under a bias follows a deterministic recursion.
AlphaMax calibrate_alpha_max(const estimator::LinearModel& model, const DetectorConfig& cfg);

/// Innovation-mean energy mu_k' S^-1 mu_k for k = 0..steps-1 after a unit bias
/// on `sensor` switches on, steady-state filter.
std::vector<double> bias_response(const estimator::LinearModel& model,
                                  const estimator::RiccatiResult& ss, std::size_t sensor,
                                  std::size_t steps);

/// Operator filter plus detector. Measurements are deviations from the
/// linearization point.
class OperatorMonitor {
 public:
  OperatorMonitor(estimator::LinearModel model, DetectorConfig cfg,
                  estimator::KalmanState initial);

  struct Observation {
    double r;
    double mean;
    bool alarm;
  };

  Observation observe(std::span<const double> reported_deviation);
  const estimator::KalmanState& state() const noexcept { return state_; }
  const DetectorConfig& config() const noexcept { return detector_.config(); }

 private:
  estimator::LinearModel model_;
  estimator::KalmanState state_;
  WindowedDetector detector_;
};

}  // namespace gridveil::bdd
