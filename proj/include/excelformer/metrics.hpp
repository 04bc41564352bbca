#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace excelformer::metrics {

/// Tie-aware Mann-Whitney AUC: P(score of a random positive > score of a
/// random negative), ties counting one half. Labels are 0/1.
double auc(std::span<const double> scores, std::span<const int> labels);
double accuracy(std::span<const int> predicted, std::span<const int> labels);
/// Negated RMSE, so larger is better.
double nrmse(std::span<const double> predictions, std::span<const double> targets);

/// 1-based ranks with ties sharing the mean of their span. With
/// `higher_is_better`, the largest value gets rank 1.
std::vector<double> average_ranks(std::span<const double> values, bool higher_is_better = true);

/// Score matrix indexed [model][dataset].
using ScoreMatrix = std::vector<std::vector<double>>;

/// Per-dataset min-max normalisation over models, averaged over datasets.
std::vector<double> normalized_scores(const ScoreMatrix& scores);

struct RankSummary {
  std::vector<double> mean;
  std::vector<double> stddev;  // population std across datasets
};
/// Per-dataset ranks (1 = best), averaged over datasets.
RankSummary ranks(const ScoreMatrix& scores);

}  // namespace excelformer::metrics
