#ifndef CEMB_SRC_NUMERICS_KERNELS_HPP_
#define CEMB_SRC_NUMERICS_KERNELS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace cemb::numerics::kernels {

// C[m x n] (+)= A[m x k] * B[k x n], row-major.
//
// Every output element is the fused multiply-add chain over p = 0..k-1 in
// order, started from 0 (or from the existing C value when accumulating). The
// register-blocked body and the tail loop evaluate the same chain, so a row's
// result never depends on m or on where the row falls in a block.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 128 / sizeof(T);
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t width = std::min(kCols, n - j0);
    std::size_t i0 = 0;
    if (width == kCols) {
      for (; i0 + kRows <= m; i0 += kRows) {
        T acc[kRows][kCols];
        for (std::size_t r = 0; r < kRows; ++r) {
          for (std::size_t jj = 0; jj < kCols; ++jj) {
            acc[r][jj] = accumulate ? c[(i0 + r) * n + j0 + jj] : T(0);
          }
        }
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = b + p * n + j0;
          for (std::size_t r = 0; r < kRows; ++r) {
            const T av = a[(i0 + r) * k + p];
            for (std::size_t jj = 0; jj < kCols; ++jj) {
              acc[r][jj] = std::fma(av, brow[jj], acc[r][jj]);
            }
          }
        }
        for (std::size_t r = 0; r < kRows; ++r) {
          for (std::size_t jj = 0; jj < kCols; ++jj) c[(i0 + r) * n + j0 + jj] = acc[r][jj];
        }
      }
    }
    for (; i0 < m; ++i0) {
      T acc[kCols];
      for (std::size_t jj = 0; jj < width; ++jj) acc[jj] = accumulate ? c[i0 * n + j0 + jj] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i0 * k + p];
        const T* brow = b + p * n + j0;
        for (std::size_t jj = 0; jj < width; ++jj) acc[jj] = std::fma(av, brow[jj], acc[jj]);
      }
      for (std::size_t jj = 0; jj < width; ++jj) c[i0 * n + j0 + jj] = acc[jj];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  }
  return out;
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

}  // namespace cemb::numerics::kernels

#endif  // CEMB_SRC_NUMERICS_KERNELS_HPP_
