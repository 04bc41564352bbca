#include "excelformer/rotharness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include "json.hpp"

#include "excelformer/kernels.hpp"
#include "excelformer/preprocess.hpp"
#include "excelformer/rng.hpp"

namespace excelformer {

Tensor random_orthogonal(std::size_t f, std::uint64_t seed) {
  if (f < 2) throw std::invalid_argument("random_orthogonal needs f >= 2");
  Rng rng(seed);
  Eigen::MatrixXd g(f, f);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j) g(i, j) = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < f; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  Tensor out(Shape{f, f});
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j) out.at(i, j) = q(i, j);
  return out;
}

Tensor rotate(const Tensor& x, const Tensor& q) {
  if (x.rank() != 2 || q.rank() != 2 || q.dim(0) != x.dim(1) || q.dim(1) != x.dim(1)) {
    throw ShapeError("rotate: cannot apply " + q.shape().str() + " to " + x.shape().str());
  }
  Tensor out(x.shape());
  kernels::gemm(x.dim(0), x.dim(1), x.dim(1), x.data(), q.data(), out.data(), false);
  return out;
}

NoisyDataset add_noise_features(const TabularDataset& data, std::uint64_t seed) {
  if (!data.all_numeric()) throw DataError("noise injection expects an all-numeric dataset");
  NoisyDataset out{data, std::vector<bool>(data.features(), false)};
  Rng rng(seed);
  const std::size_t f = data.features(), n = data.rows();
  for (std::size_t k = 0; k < f; ++k) {
    Column c{"noise_" + std::to_string(k), false, std::vector<double>(n), {}};
    for (double& v : c.numeric) v = rng.normal();
    out.data.columns.push_back(std::move(c));
    out.injected.push_back(true);
  }
  return out;
}

std::string_view to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::linear: return "linear";
    case SyntheticKind::xor_: return "xor";
    case SyntheticKind::piecewise: return "piecewise";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  for (SyntheticKind k : {SyntheticKind::linear, SyntheticKind::xor_, SyntheticKind::piecewise}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown synthetic kind '" + std::string(name) +
                              "' (linear|xor|piecewise)");
}

namespace {

// Class index of each score among `classes` equal-count sample quantiles.
std::vector<double> quantile_classes(const std::vector<double>& score, std::size_t classes) {
  const std::size_t n = score.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    y[order[r]] = static_cast<double>(r * classes / n);
  }
  return y;
}

}  // namespace

TabularDataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 50) throw std::invalid_argument("synthetic datasets need n >= 50");
  const std::size_t k = spec.informative;
  if (k < 1) throw std::invalid_argument("synthetic datasets need an informative feature");
  if (spec.kind == SyntheticKind::xor_ && k < 2) {
    throw std::invalid_argument("xor needs at least 2 informative features");
  }
  Rng rng(spec.seed);
  const std::size_t f = k + spec.noise, n = spec.n;
  TabularDataset data;
  data.task = spec.task;
  for (std::size_t j = 0; j < f; ++j) {
    const std::string name = j < k ? "x" + std::to_string(j) : "noise_" + std::to_string(j - k);
    data.columns.push_back(Column{name, false, std::vector<double>(n), {}});
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) data.columns[j].numeric[i] = rng.normal();
  const auto x = [&](std::size_t i, std::size_t j) { return data.columns[j].numeric[i]; };

  std::vector<double> score(n);
  std::size_t classes = spec.task == Task::multiclass ? 3 : 2;
  switch (spec.kind) {
    case SyntheticKind::linear: {
      std::vector<double> w(k);
      for (double& v : w) v = rng.normal();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) score[i] += w[j] * x(i, j);
      break;
    }
    case SyntheticKind::xor_:
      for (std::size_t i = 0; i < n; ++i) score[i] = x(i, 0) * x(i, 1);
      break;
    case SyntheticKind::piecewise: {
      std::vector<double> a(k), c(k);
      for (std::size_t j = 0; j < k; ++j) {
        a[j] = rng.normal();
        c[j] = 2.0 * rng.uniform() - 1.0;
      }
      const double corner = 2.0 * rng.normal();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) score[i] += x(i, j) > c[j] ? a[j] : 0.0;
        if (k >= 2 && x(i, 0) > c[0] && x(i, 1) < c[1]) score[i] += corner;
      }
      break;
    }
  }

  if (spec.task == Task::regression) {
    data.labels = score;
    classes = 1;
  } else if (spec.kind == SyntheticKind::xor_) {
    data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.task == Task::binary) {
        data.labels[i] = score[i] > 0.0 ? 1.0 : 0.0;
      } else {
        data.labels[i] = (x(i, 0) > 0.0 ? 1.0 : 0.0) + (x(i, 1) > 0.0 ? 2.0 : 0.0);
      }
    }
    if (spec.task == Task::multiclass) classes = 4;
  } else {
    data.labels = quantile_classes(score, classes);
  }
  data.classes = classes;
  if (is_classification(spec.task)) {
    for (std::size_t c = 0; c < classes; ++c) data.class_names.push_back(std::to_string(c));
  }
  return data;
}

TabularDataset make_separable(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = n;
  spec.seed = seed;
  TabularDataset data = gen_synthetic(spec);
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = data.columns[0].numeric[i] + data.columns[1].numeric[i] > 0.0 ? 1.0 : 0.0;
  }
  return data;
}

std::vector<RotationRecord> run_rotation_experiment(const TabularDataset& data,
                                                    const RotationExperiment& experiment) {
  if (experiment.variants.empty()) throw std::invalid_argument("rotation experiment needs a variant");
  if (experiment.seeds == 0) throw std::invalid_argument("rotation experiment needs a seed");
  std::vector<RotationRecord> records;
  for (std::size_t s = 0; s < experiment.seeds; ++s) {
    const std::uint64_t seed = experiment.first_seed + s;
    TabularDataset d = data;
    split(d, seed);
    const PreparedData prepared = preprocess_pipeline(d);
    const TrainingData plain = training_data(prepared, d);

    TrainingData turned = plain;
    const std::size_t f = plain.features.dim(1);
    Tensor q(Shape{f, f});
    if (experiment.identity_rotation) {
      for (std::size_t i = 0; i < f; ++i) q.at(i, i) = 1.0;
    } else {
      q = random_orthogonal(f, Rng(seed).fork(0x524f54).seed());
    }
    turned.features = rotate(plain.features, q);
    const std::vector<std::size_t> train_rows = d.rows_in(Split::train);
    std::vector<double> train_labels;
    for (std::size_t r : train_rows) train_labels.push_back(d.labels[r]);
    turned.importance = importance(take_rows(turned.features, train_rows), train_labels, d.task);

    const std::vector<std::size_t> test_rows = d.rows_in(Split::test);
    std::vector<double> test_labels;
    for (std::size_t r : test_rows) test_labels.push_back(d.labels[r]);

    for (Variant v : experiment.variants) {
      for (const TrainingData* td : {&plain, static_cast<const TrainingData*>(&turned)}) {
        ModelConfig mc = experiment.model;
        mc.apply(v);
        TrainConfig tc = experiment.train;
        tc.seed = seed;
        const FitResult fitted = fit(*td, mc, tc);
        const Tensor pred = fitted.trained.predict(take_rows(td->features, test_rows));
        records.push_back(RotationRecord{v, td == &turned, seed,
                                         task_metric(pred, test_labels, d.task), fitted.log.size()});
      }
    }
  }
  return records;
}

std::string rotation_csv(const std::vector<RotationRecord>& records) {
  std::ostringstream out;
  out.precision(17);
  out << "variant,rotated,seed,metric,epochs\n";
  for (const RotationRecord& r : records) {
    out << to_string(r.variant) << ',' << (r.rotated ? 1 : 0) << ',' << r.seed << ',' << r.metric
        << ',' << r.epochs << '\n';
  }
  return out.str();
}

std::string rotation_summary_json(const std::vector<RotationRecord>& records, Task task) {
  std::map<std::pair<std::string, bool>, std::vector<double>> cells;
  std::vector<std::pair<std::string, bool>> order;
  for (const RotationRecord& r : records) {
    const auto key = std::make_pair(std::string(to_string(r.variant)), r.rotated);
    if (!cells.contains(key)) order.push_back(key);
    cells[key].push_back(r.metric);
  }
  nlohmann::json out;
  out["metric"] = metric_name(task);
  out["cells"] = nlohmann::json::array();
  for (const auto& key : order) {
    const std::vector<double>& v = cells[key];
    double mean = 0.0;
    for (double m : v) mean += m;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double m : v) var += (m - mean) * (m - mean);
    out["cells"].push_back({{"variant", key.first},
                            {"rotated", key.second},
                            {"mean", mean},
                            {"std", std::sqrt(var / static_cast<double>(v.size()))},
                            {"n", v.size()}});
  }
  return out.dump(2) + "\n";
}

}  // namespace excelformer
