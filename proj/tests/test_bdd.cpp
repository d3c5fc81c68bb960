#include <cmath>
#include <deque>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gridveil/bdd.hpp"
#include "gridveil/error.hpp"
#include "gridveil/random.hpp"
#include "gridveil/runner.hpp"

using namespace gridveil;
using namespace gridveil::bdd;

namespace {

estimator::LinearModel random_walk() {
  return {Matrix::identity(1), Matrix(1, 0), Matrix::identity(1), Matrix::identity(1) * 1e-4,
          Matrix::identity(1) * 1e-2};
}

// Chi-square quantile by the cube-root normal approximation.
double wilson_hilferty(double k, double z) {
  const double c = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - c + z * std::sqrt(c), 3.0);
}

const sim::Setup& plant() {
  static const sim::Setup s = sim::prepare(sim::reference_scenario());
  return s;
}

struct Trace {
  std::vector<bool> alarms;
  std::vector<double> means;
};

// Runs the steady-state filter on a simulated scalar random walk with a
// constant sensor bias from `onset`.
Trace scalar_trace(double bias, std::size_t onset, std::size_t len, Rng& rng) {
  const auto model = random_walk();
  const auto ss = estimator::steady_state(model, model.c0);
  OperatorMonitor mon(model, default_config(1, 20, 0.01), {Vector{0.0}, ss.p_pred});
  double x = 0.0;
  Trace tr;
  for (std::size_t k = 0; k < len; ++k) {
    x += 1e-2 * rng.normal();
    const double y = x + 0.1 * rng.normal() + (k >= onset ? bias : 0.0);
    const auto o = mon.observe(std::vector<double>{y});
    tr.alarms.push_back(o.alarm);
    tr.means.push_back(o.mean);
  }
  return tr;
}

std::vector<bool> scalar_run(double bias, std::size_t onset, std::size_t len, Rng& rng) {
  return scalar_trace(bias, onset, len, rng).alarms;
}

}  // namespace

TEST_CASE("default threshold is the scaled chi-square quantile") {
  CHECK(default_tau(1, 1, 0.05) == doctest::Approx(3.841458820694124).epsilon(1e-10));
  CHECK(default_tau(2, 1, 0.01) == doctest::Approx(-2.0 * std::log(0.01)).epsilon(1e-10));
  for (std::size_t m : {4u, 18u, 30u})
    for (std::size_t w : {10u, 20u, 50u}) {
      const double k = static_cast<double>(m * w);
      CHECK(default_tau(m, w, 0.01) ==
            doctest::Approx(wilson_hilferty(k, 2.3263478740408408) / w).epsilon(2e-3));
    }
  CHECK(default_tau(16, 20, 0.01) == doctest::Approx(19.0888).epsilon(1e-5));
  CHECK_THROWS_AS(default_tau(0, 20, 0.01), Error);
  CHECK_THROWS_AS(default_tau(4, 20, 1.5), Error);
}

TEST_CASE("windowed mean matches brute force and alarms strictly above tau") {
  Rng rng(41);
  DetectorConfig cfg{1.2, 7, 0.01};
  WindowedDetector det(cfg);
  std::deque<double> hist;
  for (int k = 0; k < 500; ++k) {
    const double r = rng.uniform() * 2.4;
    hist.push_back(r);
    if (hist.size() > 7) hist.pop_front();
    const auto d = det.push(r);
    if (hist.size() < 7) {
      CHECK(std::isnan(d.mean));
      CHECK_FALSE(d.alarm);
    } else {
      const double m = std::accumulate(hist.begin(), hist.end(), 0.0) / 7.0;
      CHECK(d.mean == doctest::Approx(m).epsilon(1e-12));
      CHECK(d.alarm == (d.mean > 1.2));
    }
  }
  CHECK_FALSE(detect(1.2, cfg));
  CHECK(detect(std::nextafter(1.2, 2.0), cfg));
  det.reset();
  CHECK_FALSE(det.full());
}

TEST_CASE("residual is a quadratic form symmetric about the expectation") {
  Rng rng(42);
  const Matrix s{{2.0, 0.3}, {0.3, 0.5}};
  const double det = 2.0 * 0.5 - 0.09;
  for (int k = 0; k < 100; ++k) {
    const Vector e{rng.normal(), rng.normal()};
    const Vector r{rng.normal(), rng.normal()};
    const double d0 = r[0] - e[0], d1 = r[1] - e[1];
    const double want = (0.5 * d0 * d0 - 0.6 * d0 * d1 + 2.0 * d1 * d1) / det;
    const double got = residual(r, e, s);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    const Vector mirror{2 * e[0] - r[0], 2 * e[1] - r[1]};
    CHECK(residual(mirror, e, s) == doctest::Approx(got).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
  CHECK(residual(Vector{1.0, 2.0}, Vector{1.0, 2.0}, s) == 0.0);
}

TEST_CASE("alpha_max edge cases and monotonicity in tau") {
  const auto& model = plant().operator_model;
  const std::size_t m = model.outputs();
  auto cfg = default_config(m);
  CHECK(calibrate_alpha_max(model, cfg).unbounded == false);

  auto at = cfg;
  at.tau = static_cast<double>(m);  // the clean expectation leaves no room
  for (double a : calibrate_alpha_max(model, at).per_sensor) CHECK(a == 0.0);

  Vector prev(m, 0.0);
  for (double tau : {19.0, 20.0, 25.0, 40.0}) {
    at.tau = tau;
    const auto r = calibrate_alpha_max(model, at);
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(r.per_sensor[j] >= prev[j]);
      prev[j] = r.per_sensor[j];
    }
  }
  at.tau = std::numeric_limits<double>::infinity();
  const auto inf = calibrate_alpha_max(model, at);
  CHECK(inf.unbounded);
  CHECK_FALSE(inf.warning.empty());
}

TEST_CASE("alpha_max against window length") {
  const auto& model = plant().operator_model;
  const auto rw = random_walk();
  std::vector<double> plant_a, rw_a;
  for (std::size_t w : {5u, 10u, 20u, 40u, 80u}) {
    plant_a.push_back(calibrate_alpha_max(model, default_config(model.outputs(), w)).per_sensor[0]);
    rw_a.push_back(calibrate_alpha_max(rw, default_config(1, w)).per_sensor[0]);
  }
  // A persistent bias keeps its full energy in every window, and the
  // threshold tightens towards the clean mean as w grows.
  for (std::size_t k = 1; k < plant_a.size(); ++k) CHECK(plant_a[k] <= plant_a[k - 1]);
  // A random-walk filter absorbs the bias, so a short window sees only its
  // transient peak; the bound is not monotone in w there.
  MESSAGE("random walk alpha_max by window: " << rw_a[0] << " " << rw_a[1] << " " << rw_a[2]
                                              << " " << rw_a[3] << " " << rw_a[4]);
}

TEST_CASE("bias response of the scalar random walk decays to zero") {
  const auto rw = random_walk();
  const auto ss = estimator::steady_state(rw, rw.c0);
  const auto resp = bias_response(rw, ss, 0, 400);
  CHECK(resp[0] == doctest::Approx(1.0 / ss.s(0, 0)).epsilon(1e-12));
  for (std::size_t k = 1; k < resp.size(); ++k) CHECK(resp[k] <= resp[k - 1]);
  CHECK(resp.back() < 1e-6 * resp.front());
}

TEST_CASE("false-alarm rate of the clean scalar filter is near target") {
  Rng rng(43);
  const auto alarms = scalar_run(0.0, ~std::size_t{0}, 200000, rng);
  const double rate = std::count(alarms.begin() + 19, alarms.end(), true) /
                      static_cast<double>(alarms.size() - 19);
  MESSAGE("clean false-alarm rate " << rate);
  CHECK(rate > 0.005);
  CHECK(rate < 0.02);
}

TEST_CASE("bias below alpha_max evades, five times alpha_max is caught") {
  const auto rw = random_walk();
  const double alpha = calibrate_alpha_max(rw, default_config(1, 20, 0.01)).per_sensor[0];
  const double tau = default_config(1, 20, 0.01).tau;
  Rng rng(44);
  std::size_t caught = 0;
  const int trials = 2000;
  std::vector<double> mean_stat(300, 0.0);
  for (int t = 0; t < trials; ++t) {
    const auto low = scalar_trace(0.9 * alpha, 100, 300, rng);
    for (std::size_t k = 19; k < 300; ++k) mean_stat[k] += low.means[k] / trials;
    if (t < 200) {
      const auto high = scalar_run(5.0 * alpha, 100, 300, rng);
      caught += std::find(high.begin() + 100, high.begin() + 120, true) != high.begin() + 120;
    }
  }
  // The bound is on the expected windowed statistic: the ensemble mean at
  // 0.9 alpha peaks near 0.81 of the admissible excess.
  const double peak = *std::max_element(mean_stat.begin() + 100, mean_stat.end());
  MESSAGE("ensemble peak at 0.9 alpha " << peak << " vs tau " << tau << ", 5 alpha caught "
                                        << caught << "/200");
  CHECK(peak <= tau);
  CHECK(peak > 1.0);
  CHECK(caught >= 190);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((DetectorConfig{1.0, 0, 0.01}.validate()), Error);
  CHECK_THROWS_AS((DetectorConfig{-1.0, 5, 0.01}.validate()), Error);
  CHECK_NOTHROW((DetectorConfig{1.0, 5, 0.01}.validate()));
}
