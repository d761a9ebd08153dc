#pragma once

namespace featup {

/// Row-major C[n x m] = init + A[n x k] * B[k x m].
///
/// init is C itself when `accumulate`, else `bias` broadcast over rows (or
/// zero when bias is null). Every C[i][j] is computed as a single fused
/// multiply-add chain over k in increasing order, so a row's result depends
/// only on that row of A: batching, tiling and threading never change bits.
template <typename T>
void gemm(int n, int k, int m, const T* a, int lda, const T* b, int ldb, T* c, int ldc, const T* bias = nullptr,
          bool accumulate = false);

/// out[cols x rows] = in[rows x cols]^T
template <typename T>
void transpose(const T* in, int rows, int cols, T* out);

}  // namespace featup
