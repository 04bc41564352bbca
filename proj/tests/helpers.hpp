#pragma once

#include <cstddef>
#include <vector>

#include "excelformer/rng.hpp"
#include "excelformer/tensor.hpp"

namespace testing {

inline excelformer::Tensor random_tensor(excelformer::Shape shape, excelformer::Rng& rng,
                                         double sd = 1.0) {
  excelformer::Tensor t(shape);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

inline bool bit_equal(const excelformer::Tensor& a, const excelformer::Tensor& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

// Plain triple loop, independent of the library kernels.
inline std::vector<double> naive_matmul(std::size_t m, std::size_t n, std::size_t k,
                                        const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

}  // namespace testing
