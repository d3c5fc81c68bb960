#pragma once

// Dense double-precision kernels used by the matrix routines and the MLP.
//
// Every variant accumulates reductions in four interleaved lanes
// (lane k sums elements i with i % 4 == k over the largest multiple of four),
// combines them as (l0 + l1) + (l2 + l3) and then adds the tail in order.
// With FP contraction disabled this makes the SIMD variants bit-identical to
// the scalar reference, so results never depend on the host CPU.

#include <cstddef>
#include <span>
#include <string_view>

namespace gridveil::kernels {

using DotFn = double (*)(const double* a, const double* b, std::size_t n);
/// y[i] += alpha * x[i]
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
/// y = A x, A row-major rows x cols
using GemvFn = void (*)(const double* a, std::size_t rows, std::size_t cols, const double* x,
                        double* y);

struct KernelTable {
  std::string_view name;
  DotFn dot;
  AxpyFn axpy;
  GemvFn gemv;
};

const KernelTable& scalar_table();
/// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// Best table for this host. GRIDVEIL_KERNELS=scalar|avx2|neon overrides.
const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void gemv(std::span<const double> a, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> y) {
  active().gemv(a.data(), rows, cols, x.data(), y.data());
}

}  // namespace gridveil::kernels
