#include "featup/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "featup/parallel.hpp"

namespace featup {

namespace {

constexpr int kRowBlock = 8;
constexpr int kDepthBlock = 256;
constexpr int kRowTile = 64;

template <typename T>
constexpr int col_block() {
  return 64 / static_cast<int>(sizeof(T)) * 2;
}

template <typename T, int MR, int NR>
inline void micro_full(int kn, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  T acc[MR][NR];
  for (int r = 0; r < MR; ++r) {
    for (int j = 0; j < NR; ++j) acc[r][j] = c[r * ldc + j];
  }
  for (int kk = 0; kk < kn; ++kk) {
    const T* brow = b + static_cast<std::int64_t>(kk) * ldb;
    for (int r = 0; r < MR; ++r) {
      const T av = a[r * lda + kk];
      for (int j = 0; j < NR; ++j) acc[r][j] = std::fma(av, brow[j], acc[r][j]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    for (int j = 0; j < NR; ++j) c[r * ldc + j] = acc[r][j];
  }
}

template <typename T>
inline void micro_edge(int mr, int nr, int kn, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int r = 0; r < mr; ++r) {
    T* crow = c + static_cast<std::int64_t>(r) * ldc;
    const T* arow = a + static_cast<std::int64_t>(r) * lda;
    for (int kk = 0; kk < kn; ++kk) {
      const T av = arow[kk];
      const T* brow = b + static_cast<std::int64_t>(kk) * ldb;
      for (int j = 0; j < nr; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

}  // namespace

template <typename T>
void gemm(int n, int k, int m, const T* a, int lda, const T* b, int ldb, T* c, int ldc, const T* bias,
          bool accumulate) {
  if (n <= 0 || m <= 0) return;
  if (!accumulate) {
    for (int i = 0; i < n; ++i) {
      T* crow = c + static_cast<std::int64_t>(i) * ldc;
      if (bias) {
        std::copy(bias, bias + m, crow);
      } else {
        std::fill(crow, crow + m, T(0));
      }
    }
  }
  if (k <= 0) return;
  constexpr int NR = col_block<T>();
  const int tiles = (n + kRowTile - 1) / kRowTile;
  parallel_for(0, tiles, [&](std::int64_t tile) {
    const int i_begin = static_cast<int>(tile) * kRowTile;
    const int i_end = std::min(n, i_begin + kRowTile);
    for (int k0 = 0; k0 < k; k0 += kDepthBlock) {
      const int kn = std::min(kDepthBlock, k - k0);
      for (int j0 = 0; j0 < m; j0 += NR) {
        const int nr = std::min(NR, m - j0);
        for (int i0 = i_begin; i0 < i_end; i0 += kRowBlock) {
          const int mr = std::min(kRowBlock, i_end - i0);
          const T* ap = a + static_cast<std::int64_t>(i0) * lda + k0;
          const T* bp = b + static_cast<std::int64_t>(k0) * ldb + j0;
          T* cp = c + static_cast<std::int64_t>(i0) * ldc + j0;
          if (mr == kRowBlock && nr == NR) {
            micro_full<T, kRowBlock, NR>(kn, ap, lda, bp, ldb, cp, ldc);
          } else {
            micro_edge<T>(mr, nr, kn, ap, lda, bp, ldb, cp, ldc);
          }
        }
      }
    }
  });
}

template <typename T>
void transpose(const T* in, int rows, int cols, T* out) {
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B) {
    for (int c0 = 0; c0 < cols; c0 += B) {
      const int r1 = std::min(rows, r0 + B);
      const int c1 = std::min(cols, c0 + B);
      for (int r = r0; r < r1; ++r) {
        for (int cc = c0; cc < c1; ++cc) {
          out[static_cast<std::int64_t>(cc) * rows + r] = in[static_cast<std::int64_t>(r) * cols + cc];
        }
      }
    }
  }
}

template void gemm<float>(int, int, int, const float*, int, const float*, int, float*, int, const float*, bool);
template void gemm<double>(int, int, int, const double*, int, const double*, int, double*, int, const double*, bool);
template void transpose<float>(const float*, int, int, float*);
template void transpose<double>(const double*, int, int, double*);

}  // namespace featup
