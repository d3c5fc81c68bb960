#include "gridveil/bdd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "gridveil/error.hpp"
#include "gridveil/kernels/kernels.hpp"

namespace gridveil::bdd {

void DetectorConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidConfig, "detector tau must be > 0");
  if (window < 1) throw Error(ErrorKind::InvalidConfig, "detector window must be >= 1");
  if (!(false_alarm_target > 0.0 && false_alarm_target < 1.0))
    throw Error(ErrorKind::InvalidConfig, "false_alarm_target must be in (0, 1)");
}

double default_tau(std::size_t measurements, std::size_t window, double false_alarm) {
  if (measurements == 0 || window == 0)
    throw Error(ErrorKind::InvalidConfig, "tau needs measurements and window >= 1");
  if (!(false_alarm > 0.0 && false_alarm < 1.0))
    throw Error(ErrorKind::InvalidConfig, "false_alarm must be in (0, 1)");
  const boost::math::chi_squared dist(static_cast<double>(measurements * window));
  return boost::math::quantile(dist, 1.0 - false_alarm) / static_cast<double>(window);
}

DetectorConfig default_config(std::size_t measurements, std::size_t window, double false_alarm) {
  return {default_tau(measurements, window, false_alarm), window, false_alarm};
}

double residual(std::span<const double> deviation, const Cholesky& s_factor) {
  const Vector w = s_factor.solve(deviation);
  return kernels::dot(deviation, w);
}

double residual(std::span<const double> reported, std::span<const double> expected,
                const Matrix& s_cov) {
  if (reported.size() != expected.size() || s_cov.rows() != reported.size() ||
      s_cov.cols() != reported.size())
    throw Error(ErrorKind::InvalidInput, "residual: dimension mismatch");
  return residual(sub(reported, expected), Cholesky(s_cov));
}

WindowedDetector::WindowedDetector(DetectorConfig cfg) : cfg_(cfg), ring_(cfg.window, 0.0) {
  cfg_.validate();
}

void WindowedDetector::reset() {
  std::fill(ring_.begin(), ring_.end(), 0.0);
  next_ = 0;
  count_ = 0;
}

WindowedDetector::Decision WindowedDetector::push(double r) {
  ring_[next_] = r;
  next_ = (next_ + 1) % cfg_.window;
  ++count_;
  if (!full()) return {std::numeric_limits<double>::quiet_NaN(), false};
  // Summed oldest to newest so the value does not depend on ring position.
  double sum = 0.0;
  for (std::size_t k = 0; k < cfg_.window; ++k) sum += ring_[(next_ + k) % cfg_.window];
  const double mean = sum / static_cast<double>(cfg_.window);
  return {mean, detect(mean, cfg_)};
}

std::vector<double> bias_response(const estimator::LinearModel& model,
                                  const estimator::RiccatiResult& ss, std::size_t sensor,
                                  std::size_t steps) {
  const std::size_t m = model.outputs();
  if (sensor >= m) throw Error(ErrorKind::InvalidInput, "bias_response: sensor out of range");
  const Cholesky s_factor(ss.s);
  const Matrix hf = model.h * model.f;
  Vector d(model.states(), 0.0);  // mean of the estimation error
  std::vector<double> energy;
  energy.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    Vector mu = hf * d;
    for (auto& x : mu) x = -x;
    mu[sensor] += 1.0;
    energy.push_back(residual(mu, s_factor));
    Vector next = model.f * d;
    const Vector corr = ss.gain * mu;
    kernels::axpy(1.0, corr, next);
    d = std::move(next);
  }
  return energy;
}

AlphaMax calibrate_alpha_max(const estimator::LinearModel& model, const DetectorConfig& cfg) {
  model.validate();
  if (!(cfg.tau > 0.0) || cfg.window < 1)
    throw Error(ErrorKind::InvalidConfig, "calibrate_alpha_max: bad detector config");
  const std::size_t m = model.outputs();
  AlphaMax out;
  out.tau = cfg.tau;
  out.clean_mean = static_cast<double>(m);
  if (std::isinf(cfg.tau)) {
    out.unbounded = true;
    out.per_sensor.assign(m, std::numeric_limits<double>::infinity());
    out.worst_shift.assign(m, 0.0);
    out.warning = "tau is infinite; the detector never alarms";
    return out;
  }
  if (cfg.tau <= out.clean_mean) {
    out.per_sensor.assign(m, 0.0);
    out.worst_shift.assign(m, 0.0);
    out.warning = "tau " + std::to_string(cfg.tau) + " is not above the clean-data mean " +
                  std::to_string(out.clean_mean) + "; no bias is admissible";
    return out;
  }

  const auto ss = estimator::steady_state(model, model.c0, 1e-8);
  if (!ss.converged)
    throw Error(ErrorKind::Numerical, "operator filter has no steady state");

  // Long enough for the bias response to settle on the plant's slowest mode.
  const std::size_t steps = std::max<std::size_t>(4000, 20 * cfg.window);
  const double w = static_cast<double>(cfg.window);
  for (std::size_t j = 0; j < m; ++j) {
    const auto e = bias_response(model, ss, j, steps);
    double sum = 0.0, worst = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      sum += e[k];
      if (k >= cfg.window) sum -= e[k - cfg.window];
      // Windows straddling the onset only hold the first k+1 biased terms.
      worst = std::max(worst, sum / w);
    }
    out.worst_shift.push_back(worst);
    if (!(worst > 0.0)) {
      // The filter never sees this sensor's bias.
      out.unbounded = true;
      out.per_sensor.push_back(std::numeric_limits<double>::infinity());
      out.warning = "bias on row " + std::to_string(j) + " is invisible to the detector";
      continue;
    }

    auto expected = [&](double alpha) { return out.clean_mean + alpha * alpha * worst; };
    double lo = 0.0, hi = 1.0;
    while (expected(hi) <= cfg.tau) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (expected(mid) <= cfg.tau ? lo : hi) = mid;
    }
    out.per_sensor.push_back(lo);
  }
  return out;
}

OperatorMonitor::OperatorMonitor(estimator::LinearModel model, DetectorConfig cfg,
                                 estimator::KalmanState initial)
    : model_(std::move(model)), state_(std::move(initial)), detector_(cfg) {
  model_.validate();
}

OperatorMonitor::Observation OperatorMonitor::observe(std::span<const double> reported_deviation) {
  const auto pred = estimator::predict(model_, state_);
  auto corr = estimator::update(model_, pred.state, reported_deviation);
  const double r = residual(corr.innovation, Cholesky(corr.s));
  state_ = std::move(corr.state);
  const auto d = detector_.push(r);
  return {r, d.mean, d.alarm};
}

}  // namespace gridveil::bdd
