#pragma once

#include <cstddef>

namespace fedclust::kern {

// Double-precision compute kernels behind every dense inner loop in the
// library. Two implementations exist: a scalar reference and an AVX2/FMA
// variant. The active table is chosen once at startup from CPUID; the
// FEDCLUST_BACKEND environment variable ("scalar" or "avx2") overrides it.
//
// Matrices are row-major. Transcendental element maps (exp, log, sigmoid)
// stay scalar on purpose: they are not on the flop-critical path and keeping
// them out of the table means both backends share bit-identical libm calls.
struct Ops {
  // C(m x n) = A(m x k) * B(k x n), or += when accumulate is set.
  void (*gemm_nn)(double* c, const double* a, const double* b, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C(m x n) = A(m x k) * B(n x k)^T, or += when accumulate is set.
  void (*gemm_nt)(double* c, const double* a, const double* b, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C(k x n) = A(m x k)^T * B(m x n), or += when accumulate is set.
  void (*gemm_tn)(double* c, const double* a, const double* b, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // y(m) = A(m x n) * x(n)
  void (*gemv)(double* y, const double* a, const double* x, std::size_t m,
               std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sumsq)(const double* a, std::size_t n);
  double (*vsum)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  void (*scal)(double* a, double alpha, std::size_t n);
  void (*vmul)(double* dst, const double* a, const double* b, std::size_t n);
  void (*vsub)(double* dst, const double* a, const double* b, std::size_t n);
  // dst = max(src, 0)
  void (*relu)(double* dst, const double* src, std::size_t n);
  // grad *= (act > 0)
  void (*relu_bwd)(double* grad, const double* act, std::size_t n);
  // Fused Adam update on one parameter block. b1c/b2c are the bias
  // corrections 1 - beta^t for the current step.
  void (*adam)(double* p, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double b1c,
               double b2c);

  const char* name;
};

const Ops& scalar_ops();
const Ops& avx2_ops();  // valid only when CpuFeatures::get().avx2 && fma

// Table selected at startup (CPUID + FEDCLUST_BACKEND override).
const Ops& ops();
const char* active_backend();

}  // namespace fedclust::kern
