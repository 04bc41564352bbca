#pragma once

// Finite-difference checks of every layer and of the full model.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace excelformer {

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradsuiteOptions {
  std::size_t points = 5;
  double step = 1e-5;
  /// Test hook forwarded to every gradcheck call.
  double corrupt = 0.0;
};

struct GradcheckReport {
  std::string layer;
  double max_error = 0.0;
  std::size_t tensors = 0;  // tensors differentiated, summed over points
  bool passed() const { return max_error < kGradcheckTolerance; }
};

/// Layers: embedding, spa, glu, head, loss, model (3 blocks). Each is
/// checked with respect to its input and every parameter tensor at
/// `points` random draws, dropout off.
std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, const GradsuiteOptions& options = {});

}  // namespace excelformer
