#include <cmath>
#include <optional>
#include <vector>

#include "doctest.h"
#include "gridveil/error.hpp"
#include "gridveil/kalman.hpp"
#include "gridveil/random.hpp"

using namespace gridveil;
using namespace gridveil::estimator;

namespace {

LinearModel scalar(double f, double h, double q, double r) {
  return {Matrix{{f}}, Matrix(1, 0), Matrix{{h}}, Matrix{{q}}, Matrix{{r}}};
}

// Closed-form fixed point of p = f^2 (p - p^2 h^2 / (h^2 p + r)) + q.
double scalar_riccati(double f, double h, double q, double r) {
  const double a = h * h;
  // a p^2 + (r - f^2 r - q a) p - q r = 0
  const double b = r - f * f * r - q * a;
  return (-b + std::sqrt(b * b + 4 * a * q * r)) / (2 * a);
}

LinearModel random_model(Rng& rng, std::size_t n, std::size_t m) {
  Matrix f(n, n), h(m, n), a(n, n), r(m, m);
  for (auto& x : f.data()) x = 0.4 * rng.normal();
  for (auto& x : h.data()) x = rng.normal();
  for (auto& x : a.data()) x = rng.normal();
  for (auto& x : r.data()) x = rng.normal();
  return {f, Matrix(n, 0), h, a * a.transpose() + Matrix::identity(n),
          r * r.transpose() + Matrix::identity(m)};
}

}  // namespace

TEST_CASE("scalar random walk converges to the golden ratio") {
  const auto m = scalar(1, 1, 1, 1);
  KalmanState ks{{0.0}, Matrix{{1.0}}};
  const double golden = (1 + std::sqrt(5.0)) / 2;
  std::size_t steps = 0;
  for (; steps < 200; ++steps) {
    const auto pr = predict(m, ks);
    if (std::abs(pr.state.p_cov(0, 0) - golden) < 1e-6) break;
    ks = update(m, pr.state, Vector{0.0}).state;
  }
  CHECK(steps < 200);
}

TEST_CASE("Riccati property: scalar systems reach the closed-form fixed point") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double f = rng.uniform(-1.2, 1.2), h = rng.uniform(0.2, 2.0);
    const double q = rng.uniform(0.05, 2.0), r = rng.uniform(0.05, 2.0);
    CAPTURE(f);
    CAPTURE(h);
    const auto m = scalar(f, h, q, r);
    const auto res = steady_state(m, Matrix{{1.0}}, 1e-14, 200);
    CHECK(std::abs(res.p_pred(0, 0) - scalar_riccati(f, h, q, r)) < 1e-6);
  }
}

TEST_CASE("Joseph form agrees with the short covariance update") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(rng, 2 + rng.below(5), 1 + rng.below(4));
    const auto pr = predict(m, {Vector(m.states(), 0.0), Matrix::identity(m.states())});
    const auto c = update(m, pr.state, Vector(m.outputs(), 0.3));
    const Matrix j = joseph_covariance(m, pr.state.p_cov, c.gain);
    CHECK(max_abs_diff(j, c.state.p_cov) <= 1e-9 * std::max(1.0, max_abs(j.data())));
  }
}

TEST_CASE("an update never increases the covariance trace") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(rng, 1 + rng.below(6), 1 + rng.below(4));
    const auto pr = predict(m, {Vector(m.states(), 0.0), Matrix::identity(m.states())});
    const auto c = update(m, pr.state, Vector(m.outputs(), 1.0));
    CHECK(c.state.p_cov.trace() <= pr.state.p_cov.trace() + 1e-12);
  }
}

TEST_CASE("hand-run scalar filter with alternating gaps") {
  // F = 1, H = 1, Q = 0.5, R = 1, x0 = 0, P0 = 2.
  const auto m = scalar(1, 1, 0.5, 1);
  const std::vector<std::optional<Vector>> series{Vector{1.0}, std::nullopt, Vector{2.0},
                                                  std::nullopt, Vector{0.5}};
  const auto out = impute_series(m, series, {}, {{0.0}, Matrix{{2.0}}});
  // t0: update against the initial state: K = 2/3, x = 2/3, P = 2/3.
  double x = 2.0 / 3.0, p = 2.0 / 3.0;
  CHECK(out.x_filtered[0][0] == doctest::Approx(x).epsilon(1e-14));
  // t1: predict only.
  p += 0.5;
  CHECK(out.x_filtered[1][0] == doctest::Approx(x).epsilon(1e-14));
  CHECK(out.cov_trace[1] == doctest::Approx(p).epsilon(1e-14));
  // t2: predict and update with 2.
  p += 0.5;
  double k = p / (p + 1);
  x += k * (2.0 - x);
  p *= 1 - k;
  CHECK(out.x_filtered[2][0] == doctest::Approx(x).epsilon(1e-14));
  p += 0.5;  // t3
  CHECK(out.x_filtered[3][0] == doctest::Approx(x).epsilon(1e-14));
  p += 0.5;  // t4
  k = p / (p + 1);
  x += k * (0.5 - x);
  p *= 1 - k;
  CHECK(out.x_filtered[4][0] == doctest::Approx(x).epsilon(1e-14));
  CHECK(out.cov_trace[4] == doctest::Approx(p).epsilon(1e-14));
  CHECK(out.observed == std::vector<bool>{true, false, true, false, true});
}

TEST_CASE("no gaps gives the standard filtered trajectory") {
  Rng rng(14);
  const auto m = random_model(rng, 3, 2);
  std::vector<std::optional<Vector>> series;
  for (int t = 0; t < 30; ++t) series.push_back(Vector{rng.normal(), rng.normal()});
  const KalmanState init{Vector(3, 0.0), Matrix::identity(3)};
  const auto out = impute_series(m, series, {}, init);
  KalmanState ks = update(m, init, *series[0]).state;
  CHECK(out.x_filtered[0] == ks.x_hat);
  for (std::size_t t = 1; t < series.size(); ++t) {
    ks = update(m, predict(m, ks).state, *series[t]).state;
    CHECK(out.x_filtered[t] == ks.x_hat);
    CHECK(out.m_reconstructed[t] == m.h * ks.x_hat);
  }
}

TEST_CASE("all gaps after the first sample extrapolate a constant") {
  const LinearModel m{Matrix::identity(2), Matrix(2, 0), Matrix::identity(2),
                      Matrix::identity(2) * 0.1, Matrix::identity(2)};
  std::vector<std::optional<Vector>> series(10);
  series[0] = Vector{3.0, -1.0};
  const auto out = impute_series(m, series, {}, {Vector(2, 0.0), Matrix::identity(2)});
  for (const auto& x : out.x_filtered) CHECK(x == out.x_filtered[0]);
  for (std::size_t t = 1; t < 10; ++t) CHECK(out.cov_trace[t] > out.cov_trace[t - 1]);
}

TEST_CASE("innovations of a matched filter are white") {
  Rng rng(15);
  const LinearModel m{Matrix{{0.9, 0.1}, {0.0, 0.95}}, Matrix(2, 0), Matrix{{1.0, 0.0}},
                      Matrix{{0.2, 0.0}, {0.0, 0.1}}, Matrix{{0.5}}};
  const auto ss = steady_state(m, m.c0);
  REQUIRE(ss.converged);
  Vector x{0.0, 0.0};
  KalmanState ks{Vector(2, 0.0), ss.p_pred};
  const std::size_t n = 10000;
  std::vector<double> nu;
  for (std::size_t t = 0; t < n; ++t) {
    x = m.f * x;
    x[0] += std::sqrt(0.2) * rng.normal();
    x[1] += std::sqrt(0.1) * rng.normal();
    const double y = x[0] + std::sqrt(0.5) * rng.normal();
    const auto c = update(m, predict(m, ks).state, Vector{y});
    nu.push_back(c.innovation[0] / std::sqrt(c.s(0, 0)));
    ks = c.state;
  }
  double c0 = 0.0;
  for (double v : nu) c0 += v * v;
  for (std::size_t lag = 1; lag <= 5; ++lag) {
    double c = 0.0;
    for (std::size_t t = lag; t < n; ++t) c += nu[t] * nu[t - lag];
    CHECK(std::abs(c / c0) < 0.1);
  }
}

TEST_CASE("select_outputs keeps the requested rows") {
  Rng rng(16);
  const auto m = random_model(rng, 3, 4);
  const std::vector<std::size_t> rows{1, 3};
  const auto sub = m.select_outputs(rows);
  REQUIRE(sub.outputs() == 2);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(sub.h(0, c) == m.h(1, c));
    CHECK(sub.h(1, c) == m.h(3, c));
  }
  CHECK(sub.c1(0, 1) == m.c1(1, 3));
}

TEST_CASE("filter input validation") {
  const auto m = scalar(1, 1, 1, 1);
  CHECK_THROWS_AS(update(m, {{0.0}, Matrix{{1.0}}}, Vector{1.0, 2.0}), Error);
  CHECK_THROWS_AS(impute_series(m, std::vector<std::optional<Vector>>{}, {}, {{0.0}, Matrix{{1.0}}}),
                  Error);
}
