#pragma once

#include <cblas.h>

#include <cstdint>
#include <vector>

#include "evhar/common.hpp"

namespace evhar::detail {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
//
// float dispatches to OpenBLAS (the training hot path). double uses the
// reference kernel below: the OpenBLAS 0.3.20 AVX-512 dgemm kernel returns
// wrong results on this target (half of the N range corrupted at e.g.
// M=32,K=432,N=256), and the double path only serves gradient verification
// where a plain kernel is fast enough.
//
// BLAS is pinned to one thread (init_backend); parallelism is structured
// above these calls, so results do not depend on the worker count.

inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
                 int64_t ldc) {
    init_backend();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
                 const double* a, int64_t lda, const double* b, int64_t ldb, double beta,
                 double* c, int64_t ldc) {
    auto a_at = [&](int64_t i, int64_t kk) { return trans_a ? a[kk * lda + i] : a[i * lda + kk]; };
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        if (!trans_b) {
            for (int64_t kk = 0; kk < k; ++kk) {
                const double av = a_at(i, kk);
                const double* brow = b + kk * ldb;
                for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += av * brow[j];
            }
        } else {
            for (int64_t j = 0; j < n; ++j) {
                const double* brow = b + j * ldb;
                double acc = 0;
                for (int64_t kk = 0; kk < k; ++kk) acc += a_at(i, kk) * brow[kk];
                row[static_cast<size_t>(j)] = acc;
            }
        }
        double* crow = c + i * ldc;
        if (beta == 0.0)
            for (int64_t j = 0; j < n; ++j) crow[j] = alpha * row[static_cast<size_t>(j)];
        else
            for (int64_t j = 0; j < n; ++j)
                crow[j] = alpha * row[static_cast<size_t>(j)] + beta * crow[j];
    }
}

}  // namespace evhar::detail
