#pragma once

// Discrete-time linear Kalman filter:
//   x(t+1|t)   = F x(t|t) + B c(t)
//   m(t+1|t)   = H x(t+1|t)
//   n(t+1)     = m(t+1) - m(t+1|t)               (innovation)
//   P(t+1|t)   = F P(t|t) F' + C0
//   S(t+1)     = H P(t+1|t) H' + C1
//   N(t+1)     = P(t+1|t) H' S^-1                (gain)
//   x(t+1|t+1) = x(t+1|t) + N n
//   P(t+1|t+1) = P(t+1|t) - N S N'               (then symmetrized)

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gridveil/linalg.hpp"

namespace gridveil::estimator {

struct LinearModel {
  Matrix f;   // n x n
  Matrix b;   // n x u
  Matrix h;   // m x n
  Matrix c0;  // n x n process noise
  Matrix c1;  // m x m measurement noise

  std::size_t states() const noexcept { return f.rows(); }
  std::size_t inputs() const noexcept { return b.cols(); }
  std::size_t outputs() const noexcept { return h.rows(); }

  /// Dimension and symmetry checks; C1 must be positive definite.
  void validate() const;
  /// Copy observing only the given measurement rows (partial sensor access).
  LinearModel select_outputs(std::span<const std::size_t> rows) const;
};

/// Estimate and its covariance. Not to be confused with active power.
struct KalmanState {
  Vector x_hat;
  Matrix p_cov;
};

struct Prediction {
  KalmanState state;
  Vector m_pred;
};

struct Correction {
  KalmanState state;
  Vector innovation;
  Matrix s;     // innovation covariance
  Matrix gain;  // N
};

/// `c` may be empty, meaning a zero control input.
Prediction predict(const LinearModel& model, const KalmanState& ks, std::span<const double> c = {});

/// Throws Error(Numerical) when S is singular, Error(Numerical) when the
/// updated covariance has an eigenvalue below -1e-9.
Correction update(const LinearModel& model, const KalmanState& predicted,
                  std::span<const double> m_obs);

/// (I - N H) P (I - N H)' + N C1 N' for the same gain; used to cross-check the short form.
Matrix joseph_covariance(const LinearModel& model, const Matrix& p_pred, const Matrix& gain);

struct ImputedSeries {
  std::vector<Vector> x_filtered;       // x(t|t) for every t
  std::vector<Vector> m_reconstructed;  // H x(t|t)
  std::vector<double> cov_trace;        // trace P(t|t), a quality score
  std::vector<bool> observed;
};

/// Forward pass with predict at every step and update only where a
/// measurement is present. The first step is updated against `initial`
/// directly (no prediction). `controls` may be empty (zero input).
ImputedSeries impute_series(const LinearModel& model,
                            std::span<const std::optional<Vector>> measurements,
                            std::span<const Vector> controls, const KalmanState& initial);

/// Iterates the predicted-covariance recursion until successive iterates differ
/// by less than `tol` times max(1, max|P|) or `max_iter` is hit.
struct RiccatiResult {
  Matrix p_pred;   // fixed point of P(t+1|t)
  Matrix s;        // H P H' + C1
  Matrix gain;     // P H' S^-1
  std::size_t iterations;
  bool converged;
};

RiccatiResult steady_state(const LinearModel& model, const Matrix& p0, double tol = 1e-12,
                           std::size_t max_iter = 100000);

}  // namespace gridveil::estimator
