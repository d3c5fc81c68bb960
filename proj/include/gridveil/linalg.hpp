#pragma once

// Small dense row-major matrices for the filter, the detector and the MLP.
// Sizes stay in the tens, so everything is direct: no blocking, no pivoting
// beyond what Cholesky needs.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace gridveil {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Matrix transpose() const;
  double trace() const;
  /// (A + A^T) / 2
  Matrix symmetrized() const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

Vector add(std::span<const double> a, std::span<const double> b);
Vector sub(std::span<const double> a, std::span<const double> b);
double max_abs(std::span<const double> v);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Lower-triangular L with A = L L^T for symmetric positive definite A.
class Cholesky {
 public:
  /// Throws Error(Numerical) with a condition estimate when A is not SPD.
  explicit Cholesky(const Matrix& a);

  const Matrix& factor() const noexcept { return l_; }
  Vector solve(std::span<const double> b) const;
  /// Solves A X = B column by column.
  Matrix solve(const Matrix& b) const;
  Matrix inverse() const;
  /// (max L_ii / min L_ii)^2, a cheap lower bound on cond_2(A).
  double condition_estimate() const;

 private:
  Matrix l_;
};

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
Vector symmetric_eigenvalues(const Matrix& a);

}  // namespace gridveil
