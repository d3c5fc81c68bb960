#include "gridveil/kalman.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridveil/error.hpp"

namespace gridveil::estimator {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::InvalidInput, what);
}

bool is_symmetric(const Matrix& m, double tol) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = r + 1; c < m.cols(); ++c)
      if (std::abs(m(r, c) - m(c, r)) > tol * (1.0 + std::abs(m(r, c)))) return false;
  return true;
}

void check_psd(const Matrix& p) {
  // Shifted Cholesky stands in for "min eigenvalue >= -1e-9".
  Matrix shifted = p;
  for (std::size_t i = 0; i < p.rows(); ++i) shifted(i, i) += 1e-9;
  try {
    Cholesky chol(shifted);
  } catch (const Error&) {
    const Vector ev = symmetric_eigenvalues(p);
    if (ev.front() < -1e-9)
      throw Error(ErrorKind::Numerical,
                  "covariance lost positive semidefiniteness (min eigenvalue " +
                      std::to_string(ev.front()) + ")");
  }
}

}  // namespace

void LinearModel::validate() const {
  const std::size_t n = f.rows();
  require(n > 0 && f.cols() == n, "F must be square and nonempty");
  require(b.rows() == n, "B must have n rows");
  require(h.cols() == n && h.rows() > 0, "H must be m x n");
  require(c0.rows() == n && c0.cols() == n, "C0 must be n x n");
  require(c1.rows() == h.rows() && c1.cols() == h.rows(), "C1 must be m x m");
  require(is_symmetric(c0, 1e-12), "C0 must be symmetric");
  require(is_symmetric(c1, 1e-12), "C1 must be symmetric");
  Cholesky chol(c1);  // throws if C1 is not positive definite
}

LinearModel LinearModel::select_outputs(std::span<const std::size_t> rows) const {
  LinearModel out = *this;
  out.h = Matrix(rows.size(), h.cols());
  out.c1 = Matrix(rows.size(), rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < h.rows(), "output row out of range");
    for (std::size_t c = 0; c < h.cols(); ++c) out.h(r, c) = h(rows[r], c);
    for (std::size_t c = 0; c < rows.size(); ++c) out.c1(r, c) = c1(rows[r], rows[c]);
  }
  return out;
}

Prediction predict(const LinearModel& model, const KalmanState& ks, std::span<const double> c) {
  require(ks.x_hat.size() == model.states(), "predict: state length mismatch");
  require(ks.p_cov.rows() == model.states() && ks.p_cov.cols() == model.states(),
          "predict: covariance shape mismatch");
  require(c.empty() || c.size() == model.inputs(), "predict: control length mismatch");
  Prediction out;
  out.state.x_hat = model.f * ks.x_hat;
  if (!c.empty()) {
    const Vector bc = model.b * c;
    for (std::size_t i = 0; i < bc.size(); ++i) out.state.x_hat[i] += bc[i];
  }
  out.state.p_cov = model.f * ks.p_cov * model.f.transpose() + model.c0;
  out.m_pred = model.h * out.state.x_hat;
  return out;
}

Correction update(const LinearModel& model, const KalmanState& predicted,
                  std::span<const double> m_obs) {
  require(m_obs.size() == model.outputs(), "update: measurement length mismatch");
  require(predicted.x_hat.size() == model.states(), "update: state length mismatch");
  const Matrix ht = model.h.transpose();
  const Matrix pht = predicted.p_cov * ht;
  Correction out;
  out.s = model.h * pht + model.c1;
  const Cholesky chol(out.s);
  // N = P H' S^-1  <=>  S N' = H P'  (S, P symmetric)
  out.gain = chol.solve(pht.transpose()).transpose();
  out.innovation = sub(m_obs, model.h * predicted.x_hat);
  const Vector correction = out.gain * out.innovation;
  out.state.x_hat = add(predicted.x_hat, correction);
  out.state.p_cov =
      (predicted.p_cov - out.gain * out.s * out.gain.transpose()).symmetrized();
  check_psd(out.state.p_cov);
  return out;
}

Matrix joseph_covariance(const LinearModel& model, const Matrix& p_pred, const Matrix& gain) {
  const Matrix a = Matrix::identity(model.states()) - gain * model.h;
  return a * p_pred * a.transpose() + gain * model.c1 * gain.transpose();
}

ImputedSeries impute_series(const LinearModel& model,
                            std::span<const std::optional<Vector>> measurements,
                            std::span<const Vector> controls, const KalmanState& initial) {
  if (measurements.empty()) throw Error(ErrorKind::InvalidInput, "impute_series: empty series");
  require(controls.empty() || controls.size() == measurements.size(),
          "impute_series: controls must be empty or match the series length");
  bool any = false;
  for (const auto& m : measurements) any = any || m.has_value();
  if (!any) throw Error(ErrorKind::InvalidInput, "impute_series: no observed measurement");

  ImputedSeries out;
  out.x_filtered.reserve(measurements.size());
  KalmanState ks = initial;
  for (std::size_t t = 0; t < measurements.size(); ++t) {
    if (t > 0) {
      const std::span<const double> c =
          controls.empty() ? std::span<const double>{} : std::span<const double>(controls[t - 1]);
      ks = predict(model, ks, c).state;
    }
    if (measurements[t]) ks = update(model, ks, *measurements[t]).state;
    out.x_filtered.push_back(ks.x_hat);
    out.m_reconstructed.push_back(model.h * ks.x_hat);
    out.cov_trace.push_back(ks.p_cov.trace());
    out.observed.push_back(measurements[t].has_value());
  }
  return out;
}

RiccatiResult steady_state(const LinearModel& model, const Matrix& p0, double tol,
                           std::size_t max_iter) {
  const Matrix ht = model.h.transpose();
  const Matrix ft = model.f.transpose();
  Matrix p = p0;
  RiccatiResult r{p, {}, {}, 0, false};
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const Matrix pht = p * ht;
    const Matrix s = model.h * pht + model.c1;
    const Cholesky chol(s);
    const Matrix gain = chol.solve(pht.transpose()).transpose();
    const Matrix post = (p - gain * s * gain.transpose()).symmetrized();
    Matrix next = (model.f * post * ft + model.c0).symmetrized();
    const double delta = max_abs_diff(next, p);
    const double scale = std::max(1.0, max_abs(next.data()));
    p = std::move(next);
    r.iterations = it;
    if (delta < tol * scale) {
      r.converged = true;
      break;
    }
  }
  r.p_pred = p;
  const Matrix pht = p * ht;
  r.s = model.h * pht + model.c1;
  r.gain = Cholesky(r.s).solve(pht.transpose()).transpose();
  return r;
}

}  // namespace gridveil::estimator
