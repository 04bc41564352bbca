#include "excelformer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace excelformer::kernels {

namespace {

constexpr std::size_t kRowBlock = 16;        // rows handed to one thread at a time
constexpr std::size_t kParallelWork = 1 << 15;  // below this many MACs stay serial

// Register tile: MR rows by NR columns of C accumulated over all of k.
template <std::size_t MR, std::size_t NR>
inline void micro_tile(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                       bool accumulate) {
  double acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = a[r * k + p];
      for (std::size_t q = 0; q < NR; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    double* crow = c + r * n;
    if (accumulate) {
      for (std::size_t q = 0; q < NR; ++q) crow[q] += acc[r][q];
    } else {
      for (std::size_t q = 0; q < NR; ++q) crow[q] = acc[r][q];
    }
  }
}

template <std::size_t MR>
inline void row_panel(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                      bool accumulate) {
  constexpr std::size_t NR = 32;
  std::size_t j = 0;
  for (; j + NR <= n; j += NR) micro_tile<MR, NR>(n, k, a, b + j, c + j, accumulate);
  for (; j + 8 <= n; j += 8) micro_tile<MR, 8>(n, k, a, b + j, c + j, accumulate);
  for (; j < n; ++j) micro_tile<MR, 1>(n, k, a, b + j, c + j, accumulate);
}

void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c, bool accumulate) {
  std::size_t i = row_begin;
  for (; i + 4 <= row_end; i += 4) row_panel<4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < row_end; ++i) row_panel<1>(n, k, a + i * k, b, c + i * n, accumulate);
}

void softmax_row(std::size_t cols, const double* x, const double* mask, double* y) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = x[j] + (mask ? mask[j] : 0.0);
    mx = std::max(mx, y[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(y[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

void softmax_backward_row(std::size_t cols, const double* y, const double* gy, double* gx,
                          bool accumulate) {
  double dot = 0.0;
  for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
  for (std::size_t j = 0; j < cols; ++j) {
    const double g = y[j] * (gy[j] - dot);
    gx[j] = accumulate ? gx[j] + g : g;
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_tile(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c, bool accumulate) {
  gemm_rows(0, m, n, k, a, b, c, accumulate);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const bool parallel = m * n * k >= kParallelWork && blocks > 1;
  const auto nblocks = static_cast<long>(blocks);
#pragma omp parallel for schedule(static) if (parallel)
  for (long blk = 0; blk < nblocks; ++blk) {
    const std::size_t begin = static_cast<std::size_t>(blk) * kRowBlock;
    gemm_rows(begin, std::min(m, begin + kRowBlock), n, k, a, b, c, accumulate);
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t T = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += T) {
    for (std::size_t j0 = 0; j0 < cols; j0 += T) {
      const std::size_t i1 = std::min(rows, i0 + T);
      const std::size_t j1 = std::min(cols, j0 + T);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
      }
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> at(m * k);
  transpose(k, m, a, at.data());
  gemm(m, n, k, at.data(), b, c, accumulate);
}

void masked_softmax(std::size_t rows, std::size_t cols, const double* logits,
                    std::span<const double> mask, double* out) {
  const bool parallel = rows * cols >= 4096;
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (parallel)
  for (long r = 0; r < nrows; ++r) {
    const auto row = static_cast<std::size_t>(r);
    const double* m = mask.empty() ? nullptr : mask.data() + (row % cols) * cols;
    softmax_row(cols, logits + row * cols, m, out + row * cols);
  }
}

void softmax_backward(std::size_t rows, std::size_t cols, const double* y, const double* gy,
                      double* gx, bool accumulate) {
  const bool parallel = rows * cols >= 4096;
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (parallel)
  for (long r = 0; r < nrows; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_backward_row(cols, y + off, gy + off, gx + off, accumulate);
  }
}

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void masked_softmax(std::size_t rows, std::size_t cols, const double* logits,
                    std::span<const double> mask, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* m = mask.empty() ? nullptr : mask.data() + (r % cols) * cols;
    softmax_row(cols, logits + r * cols, m, out + r * cols);
  }
}

void softmax_backward(std::size_t rows, std::size_t cols, const double* y, const double* gy,
                      double* gx, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_backward_row(cols, y + r * cols, gy + r * cols, gx + r * cols, accumulate);
  }
}

}  // namespace reference

}  // namespace excelformer::kernels
