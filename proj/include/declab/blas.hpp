#pragma once

#include <cstdint>

namespace declab::blas {

// Row-major GEMM: C[m,n] = alpha * op(A) * op(B) + beta * C.
// op(A) = A[m,k], stored [k,m] when trans_a; op(B) = B[k,n], stored [n,k]
// when trans_b.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, const float* b, float beta, float* c);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

// Caps BLAS-internal threads (no-op for the fallback kernel).
void set_threads(int n);

// True when an external BLAS was loaded; false means the portable fallback.
bool external_loaded();

}  // namespace declab::blas
