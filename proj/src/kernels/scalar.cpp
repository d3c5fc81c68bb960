#include "gridveil/kernels/kernels.hpp"

namespace gridveil::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  const std::size_t n4 = n - n % 4;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  for (std::size_t i = 0; i < n4; i += 4) {
    l0 += a[i] * b[i];
    l1 += a[i + 1] * b[i + 1];
    l2 += a[i + 2] * b[i + 2];
    l3 += a[i + 3] * b[i + 3];
  }
  double s = (l0 + l1) + (l2 + l3);
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(a + r * cols, x, cols);
}

constexpr KernelTable kScalar{"scalar", &dot_scalar, &axpy_scalar, &gemv_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace gridveil::kernels
