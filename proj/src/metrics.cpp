#include "excelformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace excelformer::metrics {

std::vector<double> average_ranks(std::span<const double> values, bool higher_is_better) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return higher_is_better ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) rank[order[t]] = r;
    i = j;
  }
  return rank;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int y : labels) {
    if (y == 1) ++pos;
    else if (y == 0) ++neg;
    else throw std::invalid_argument("auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("auc needs both classes; got " + std::to_string(pos) +
                                " positives and " + std::to_string(neg) + " negatives");
  }
  // ascending ranks: the positive rank sum minus its minimum is the U statistic
  const std::vector<double> r = average_ranks(scores, false);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (labels[i] == 1) rank_sum += r[i];
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double nrmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size() || targets.empty()) {
    throw std::invalid_argument("nrmse: need equal, non-empty inputs");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double e = predictions[i] - targets[i];
    s += e * e;
  }
  return -std::sqrt(s / static_cast<double>(targets.size()));
}

namespace {

std::size_t check_matrix(const ScoreMatrix& scores) {
  if (scores.size() < 2) throw std::invalid_argument("need scores for at least two models");
  const std::size_t datasets = scores.front().size();
  for (const auto& row : scores) {
    if (row.size() != datasets) throw std::invalid_argument("ragged score matrix");
  }
  return datasets;
}

}  // namespace

std::vector<double> normalized_scores(const ScoreMatrix& scores) {
  const std::size_t datasets = check_matrix(scores);
  std::vector<double> out(scores.size(), 0.0);
  if (datasets == 0) return out;
  for (std::size_t d = 0; d < datasets; ++d) {
    double lo = scores[0][d], hi = scores[0][d];
    for (const auto& row : scores) {
      lo = std::min(lo, row[d]);
      hi = std::max(hi, row[d]);
    }
    if (!(hi > lo)) {
      std::cerr << "warning: dataset " << d << " has identical scores for all models\n";
      continue;
    }
    for (std::size_t m = 0; m < scores.size(); ++m) out[m] += (scores[m][d] - lo) / (hi - lo);
  }
  for (double& v : out) v /= static_cast<double>(datasets);
  return out;
}

RankSummary ranks(const ScoreMatrix& scores) {
  const std::size_t datasets = check_matrix(scores);
  const std::size_t models = scores.size();
  std::vector<std::vector<double>> per(models);
  for (std::size_t d = 0; d < datasets; ++d) {
    std::vector<double> col(models);
    for (std::size_t m = 0; m < models; ++m) col[m] = scores[m][d];
    const auto r = average_ranks(col, true);
    for (std::size_t m = 0; m < models; ++m) per[m].push_back(r[m]);
  }
  RankSummary out;
  for (const auto& rs : per) {
    const double n = static_cast<double>(std::max<std::size_t>(rs.size(), 1));
    const double mu = std::accumulate(rs.begin(), rs.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rs) var += (r - mu) * (r - mu);
    out.mean.push_back(mu);
    out.stddev.push_back(std::sqrt(var / n));
  }
  return out;
}

}  // namespace excelformer::metrics
