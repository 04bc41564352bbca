#pragma once

// Feature preparation: target-statistic encoding of categorical columns,
// quantile normalisation to a standard-normal marginal, and the mutual
// information importance that feeds the attention mask and Feat-Mix.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "excelformer/dataset.hpp"
#include "excelformer/tensor.hpp"

namespace excelformer {

/// Standard normal quantile function.
double normal_quantile(double p);

/// Maps values through the training empirical CDF and then through the
/// standard normal quantile function.
class QuantileTransformer {
 public:
  static constexpr double kClip = 1e-3;

  QuantileTransformer() = default;
  QuantileTransformer(std::vector<double> support, std::vector<double> quantiles);

  static QuantileTransformer fit(std::span<const double> column);

  double transform(double v) const;
  std::vector<double> transform(std::span<const double> column) const;

  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& quantiles() const { return quantiles_; }
  bool constant() const { return support_.size() == 1; }

 private:
  std::vector<double> support_;    // sorted unique training values
  std::vector<double> quantiles_;  // midpoint quantile (avg rank - 0.5) / n per support value
};

/// Ordered target statistics, smoothing a = 1 around the training mean.
class CategoricalEncoder {
 public:
  static constexpr double kSmoothing = 1.0;

  struct Stat {
    double sum = 0.0;
    double count = 0.0;
  };

  CategoricalEncoder() = default;
  CategoricalEncoder(std::map<std::string, Stat> stats, double prior)
      : stats_(std::move(stats)), prior_(prior) {}

  struct Fitted;
  /// Fits on training rows (in order) and returns their ordered encodings.
  static Fitted fit(std::span<const std::string> categories, std::span<const double> targets);

  /// Full-training-statistics encoding; unseen categories map to the prior.
  double transform(const std::string& category) const;

  double prior() const { return prior_; }
  const std::map<std::string, Stat>& stats() const { return stats_; }

 private:
  std::map<std::string, Stat> stats_;
  double prior_ = 0.0;
};

struct CategoricalEncoder::Fitted {
  CategoricalEncoder encoder;
  std::vector<double> train_encoding;
};

/// Per-feature normalised mutual information with the target, in [0, 1].
struct ImportanceVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double sum() const;
};

/// Equal-frequency bin codes; tied values always share a bin.
std::vector<int> equal_frequency_bins(std::span<const double> values, std::size_t bins);
/// Plug-in MI / sqrt(H(X) H(Y)) over two discrete code vectors; 0 when either entropy is 0.
double normalized_mutual_information(std::span<const int> x, std::span<const int> y);

/// Importance for a column-major feature matrix (features[j] is column j).
ImportanceVector importance(const std::vector<std::vector<double>>& features,
                            std::span<const double> targets, Task task);
/// Same, for a row-major [n, f] tensor.
ImportanceVector importance(const Tensor& features, std::span<const double> targets, Task task);

/// Everything fitted on the training split that is needed to transform new rows.
struct FeaturePipeline {
  std::vector<std::string> feature_names;
  std::vector<bool> categorical;
  std::vector<CategoricalEncoder> encoders;   // indexed like features; unused for numeric
  std::vector<QuantileTransformer> quantiles;

  /// Transforms every row with full-training statistics -> [n, f].
  Tensor transform(const TabularDataset& data) const;
};

struct PreparedData {
  Tensor features;  // [n, f], all rows of the dataset
  ImportanceVector importance;
  FeaturePipeline pipeline;
};

/// Fits encoders and quantile maps on training rows only, transforms all
/// rows, and scores importance on the transformed training rows.
PreparedData preprocess_pipeline(const TabularDataset& data);

/// Rows of a [n, f] matrix.
Tensor take_rows(const Tensor& matrix, std::span<const std::size_t> rows);

}  // namespace excelformer
