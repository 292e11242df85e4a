// Minimal dgemm shim. Uses OpenBLAS when available (loaded lazily so the
// core type can be pinned from CPUID before library init), otherwise a
// portable blocked kernel.
#pragma once

namespace idf::blas {

// C(m×n) = alpha·op(A)·op(B) + beta·C, all row-major with explicit leading
// dimensions (row strides).
void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc);

// "openblas" or "builtin".
const char* backend_name();

}  // namespace idf::blas
