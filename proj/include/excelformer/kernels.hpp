#pragma once

// Dense kernels used by the autodiff engine.
//
// Every kernel in `kernels::` has a straightforward serial twin in
// `kernels::reference::` that is kept for tests and the benchmark. The
// parallel versions split work over independent output rows only, so results
// do not depend on the thread count.

#include <cstddef>
#include <span>

namespace excelformer::kernels {

/// C[m,n] (+)= A[m,k] * B[k,n], row-major.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate = false);
/// C[m,n] (+)= A[m,k] * B[n,k]^T.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
/// C[m,n] (+)= A[k,m]^T * B[k,n].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);

/// Single-threaded blocked GEMM; callers that already parallelise over a
/// batch use this directly.
void gemm_tile(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c, bool accumulate);

/// out = softmax(logits + mask) along rows of length `cols`. `mask` is either
/// empty or cols x cols; row r of the input uses mask row (r % cols).
void masked_softmax(std::size_t rows, std::size_t cols, const double* logits,
                    std::span<const double> mask, double* out);
/// Backward of softmax given its output y and upstream gradient gy.
void softmax_backward(std::size_t rows, std::size_t cols, const double* y, const double* gy,
                      double* gx, bool accumulate);

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate = false);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
void masked_softmax(std::size_t rows, std::size_t cols, const double* logits,
                    std::span<const double> mask, double* out);
void softmax_backward(std::size_t rows, std::size_t cols, const double* y, const double* gy,
                      double* gx, bool accumulate);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace excelformer::kernels
