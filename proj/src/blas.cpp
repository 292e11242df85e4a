#include "idf/blas.hpp"

#include <cstdlib>
#include <vector>

#if defined(__linux__)
#include <dlfcn.h>
#endif

namespace idf::blas {
namespace {

// cblas ABI constants (stable, avoids a hard header dependency).
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using CblasDgemmFn = void (*)(int, int, int, int, int, int, double, const double*, int,
                              const double*, int, double, double*, int);

struct Backend {
    CblasDgemmFn cblas_dgemm = nullptr;
    const char* name = "builtin";
};

#if defined(__x86_64__) && defined(__GNUC__)
const char* pick_coretype() {
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
        __builtin_cpu_supports("avx512vl") && __builtin_cpu_supports("avx512bw")) {
        return "SKYLAKEX";
    }
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return "HASWELL";
    }
    return nullptr;
}
#else
const char* pick_coretype() { return nullptr; }
#endif

Backend load_backend() {
    Backend be;
#if defined(__linux__)
    // OpenBLAS reads these during its init, which runs when the DSO loads —
    // hence dlopen after setenv rather than a link-time dependency. Inside a
    // VM the runtime CPU detection can fall back to a generic kernel, so pin
    // the core type from CPUID unless the user already chose one.
    setenv("OPENBLAS_NUM_THREADS", "1", 0);
    if (const char* core = pick_coretype()) {
        setenv("OPENBLAS_CORETYPE", core, 0);
    }
    void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!handle) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (handle) {
        if (auto* fn = dlsym(handle, "cblas_dgemm")) {
            be.cblas_dgemm = reinterpret_cast<CblasDgemmFn>(fn);
            be.name = "openblas";
        }
        if (auto* set_threads = dlsym(handle, "openblas_set_num_threads")) {
            reinterpret_cast<void (*)(int)>(set_threads)(1);
        }
    }
#endif
    return be;
}

const Backend& backend() {
    static const Backend be = load_backend();
    return be;
}

// Fallback: materialize op(A), op(B) and run a blocked kernel.
void builtin_dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                   const double* a, int lda, const double* b, int ldb, double beta,
                   double* c, int ldc) {
    std::vector<double> abuf, bbuf;
    const double* am = a;
    int am_ld = lda;
    if (trans_a) {
        abuf.resize(static_cast<size_t>(m) * k);
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) abuf[static_cast<size_t>(i) * k + p] = a[static_cast<size_t>(p) * lda + i];
        am = abuf.data();
        am_ld = k;
    }
    const double* bm = b;
    int bm_ld = ldb;
    if (trans_b) {
        bbuf.resize(static_cast<size_t>(k) * n);
        for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) bbuf[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * ldb + p];
        bm = bbuf.data();
        bm_ld = n;
    }
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * ldc;
        if (beta == 0.0) {
            for (int j = 0; j < n; ++j) crow[j] = 0.0;
        } else if (beta != 1.0) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (int p = 0; p < k; ++p) {
            const double av = alpha * am[static_cast<size_t>(i) * am_ld + p];
            if (av == 0.0) continue;
            const double* brow = bm + static_cast<size_t>(p) * bm_ld;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc) {
    if (m <= 0 || n <= 0) return;
    const Backend& be = backend();
    if (be.cblas_dgemm) {
        be.cblas_dgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans,
                       m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    } else {
        builtin_dgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

const char* backend_name() { return backend().name; }

}  // namespace idf::blas
