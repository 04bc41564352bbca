#include "excelformer/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace excelformer {

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

// ---------------------------------------------------------------- quantile

QuantileTransformer::QuantileTransformer(std::vector<double> support, std::vector<double> quantiles)
    : support_(std::move(support)), quantiles_(std::move(quantiles)) {
  if (support_.empty() || support_.size() != quantiles_.size()) {
    throw DataError("quantile transformer needs matching, non-empty support and quantiles");
  }
}

QuantileTransformer QuantileTransformer::fit(std::span<const double> column) {
  if (column.empty()) throw DataError("cannot fit a quantile transform on an empty column");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<double> support, quantiles;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    support.push_back(sorted[i]);
    quantiles.push_back((avg_rank - 0.5) / n);
    i = j;
  }
  return QuantileTransformer(std::move(support), std::move(quantiles));
}

double QuantileTransformer::transform(double v) const {
  if (std::isnan(v)) return v;
  double q;
  if (v <= support_.front()) {
    q = quantiles_.front();
  } else if (v >= support_.back()) {
    q = quantiles_.back();
  } else {
    const auto hi = static_cast<std::size_t>(
        std::upper_bound(support_.begin(), support_.end(), v) - support_.begin());
    const std::size_t lo = hi - 1;
    if (support_[lo] == v) {
      q = quantiles_[lo];
    } else {
      const double t = (v - support_[lo]) / (support_[hi] - support_[lo]);
      q = quantiles_[lo] + t * (quantiles_[hi] - quantiles_[lo]);
    }
  }
  return normal_quantile(std::clamp(q, kClip, 1.0 - kClip));
}

std::vector<double> QuantileTransformer::transform(std::span<const double> column) const {
  std::vector<double> out(column.size());
  std::transform(column.begin(), column.end(), out.begin(), [&](double v) { return transform(v); });
  return out;
}

// ------------------------------------------------------------- categorical

CategoricalEncoder::Fitted CategoricalEncoder::fit(std::span<const std::string> categories,
                                                   std::span<const double> targets) {
  if (categories.size() != targets.size()) {
    throw DataError("categorical encoder: categories and targets differ in length");
  }
  if (categories.empty()) throw DataError("categorical encoder: no training rows");
  const double prior =
      std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
  std::map<std::string, Stat> stats;
  std::vector<double> encoded(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    Stat& s = stats[categories[i]];
    encoded[i] = (s.sum + kSmoothing * prior) / (s.count + kSmoothing);
    s.sum += targets[i];
    s.count += 1.0;
  }
  return Fitted{CategoricalEncoder(std::move(stats), prior), std::move(encoded)};
}

double CategoricalEncoder::transform(const std::string& category) const {
  const auto it = stats_.find(category);
  if (it == stats_.end()) return prior_;
  return (it->second.sum + kSmoothing * prior_) / (it->second.count + kSmoothing);
}

// -------------------------------------------------------------- importance

double ImportanceVector::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

std::vector<int> equal_frequency_bins(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("need at least one bin");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<int> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto below = static_cast<double>(
        std::lower_bound(sorted.begin(), sorted.end(), values[i]) - sorted.begin());
    const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(bins) * below / n));
    codes[i] = static_cast<int>(std::min(bins - 1, b));
  }
  return codes;
}

double normalized_mutual_information(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("NMI: need equal, non-empty codes");
  std::map<int, double> px, py;
  std::map<std::pair<int, int>, double> pxy;
  const double w = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    px[x[i]] += w;
    py[y[i]] += w;
    pxy[{x[i], y[i]}] += w;
  }
  const auto entropy = [](const std::map<int, double>& p) {
    double h = 0.0;
    for (const auto& [_, v] : p) h -= v * std::log(v);
    return h;
  };
  const double hx = entropy(px), hy = entropy(py);
  if (hx <= 0.0 || hy <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, v] : pxy) mi += v * std::log(v / (px[key.first] * py[key.second]));
  return std::clamp(mi / std::sqrt(hx * hy), 0.0, 1.0);
}

ImportanceVector importance(const std::vector<std::vector<double>>& features,
                            std::span<const double> targets, Task task) {
  const std::size_t n = targets.size();
  if (n < 10) throw DataError("importance needs at least 10 rows, got " + std::to_string(n));
  const std::size_t bins = std::min<std::size_t>(10, n / 5);
  std::vector<int> ycodes;
  if (is_classification(task)) {
    ycodes.reserve(n);
    for (double y : targets) ycodes.push_back(static_cast<int>(y));
  } else {
    ycodes = equal_frequency_bins(targets, bins);
  }
  ImportanceVector out;
  for (const auto& column : features) {
    if (column.size() != n) throw DataError("importance: feature length differs from targets");
    out.values.push_back(normalized_mutual_information(equal_frequency_bins(column, bins), ycodes));
  }
  return out;
}

ImportanceVector importance(const Tensor& features, std::span<const double> targets, Task task) {
  if (features.rank() != 2) throw ShapeError("importance expects an [n, f] matrix");
  const std::size_t n = features.dim(0), f = features.dim(1);
  std::vector<std::vector<double>> cols(f, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) cols[j][i] = features.at(i, j);
  return importance(cols, targets, task);
}

// ---------------------------------------------------------------- pipeline

Tensor take_rows(const Tensor& matrix, std::span<const std::size_t> rows) {
  const std::size_t f = matrix.dim(1);
  Tensor out(Shape{rows.size(), f});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(matrix.data() + rows[i] * f, f, out.data() + i * f);
  }
  return out;
}

Tensor FeaturePipeline::transform(const TabularDataset& data) const {
  if (data.features() != feature_names.size()) {
    throw DataError("expected " + std::to_string(feature_names.size()) + " feature columns, found " +
                    std::to_string(data.features()));
  }
  const std::size_t n = data.rows(), f = feature_names.size();
  Tensor out(Shape{n, f});
  for (std::size_t j = 0; j < f; ++j) {
    const Column& c = data.columns[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double raw = categorical[j] ? encoders[j].transform(c.categories[i]) : c.numeric[i];
      out.at(i, j) = quantiles[j].transform(raw);
    }
  }
  return out;
}

PreparedData preprocess_pipeline(const TabularDataset& data) {
  data.validate();
  if (data.splits.empty()) throw DataError("dataset has no split assignment");
  const std::vector<std::size_t> train = data.rows_in(Split::train);
  if (train.empty()) throw DataError("dataset has no training rows");

  std::vector<double> train_targets;
  for (std::size_t r : train) train_targets.push_back(data.labels[r]);

  const std::size_t n = data.rows(), f = data.features();
  PreparedData out;
  out.features = Tensor(Shape{n, f});
  FeaturePipeline& pipe = out.pipeline;
  pipe.encoders.resize(f);
  std::vector<std::vector<double>> train_columns(f);

  for (std::size_t j = 0; j < f; ++j) {
    const Column& c = data.columns[j];
    pipe.feature_names.push_back(c.name);
    pipe.categorical.push_back(c.categorical);

    std::vector<double> raw(n);
    if (c.categorical) {
      std::vector<std::string> cats;
      for (std::size_t r : train) cats.push_back(c.categories[r]);
      auto fitted = CategoricalEncoder::fit(cats, train_targets);
      for (std::size_t i = 0; i < n; ++i) {
        if (data.splits[i] != Split::train) raw[i] = fitted.encoder.transform(c.categories[i]);
      }
      for (std::size_t t = 0; t < train.size(); ++t) raw[train[t]] = fitted.train_encoding[t];
      pipe.encoders[j] = std::move(fitted.encoder);
    } else {
      raw = c.numeric;
    }

    std::vector<double> train_raw;
    for (std::size_t r : train) train_raw.push_back(raw[r]);
    QuantileTransformer qt = QuantileTransformer::fit(train_raw);
    if (qt.constant()) {
      std::cerr << "warning: column '" << c.name << "' is constant on the training rows\n";
    }
    for (std::size_t i = 0; i < n; ++i) out.features.at(i, j) = qt.transform(raw[i]);
    for (std::size_t r : train) train_columns[j].push_back(out.features.at(r, j));
    pipe.quantiles.push_back(std::move(qt));
  }

  out.importance = importance(train_columns, train_targets, data.task);
  return out;
}

}  // namespace excelformer
