#include "gridveil/kernels/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace gridveil::kernels {
namespace {

// Two float64x2 accumulators hold lanes (0,1) and (2,3) of the reference order.
double dot_neon(const double* a, const double* b, std::size_t n) {
  const std::size_t n4 = n - n % 4;
  float64x2_t lo = vdupq_n_f64(0.0);
  float64x2_t hi = vdupq_n_f64(0.0);
  for (std::size_t i = 0; i < n4; i += 4) {
    lo = vaddq_f64(lo, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    hi = vaddq_f64(hi, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double s = (vgetq_lane_f64(lo, 0) + vgetq_lane_f64(lo, 1)) +
             (vgetq_lane_f64(hi, 0) + vgetq_lane_f64(hi, 1));
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const std::size_t n2 = n - n % 2;
  const float64x2_t va = vdupq_n_f64(alpha);
  for (std::size_t i = 0; i < n2; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (std::size_t i = n2; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_neon(a + r * cols, x, cols);
}

constexpr KernelTable kNeon{"neon", &dot_neon, &axpy_neon, &gemv_neon};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace gridveil::kernels

#else

namespace gridveil::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace gridveil::kernels

#endif
