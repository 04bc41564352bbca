#include "excelformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "excelformer/metrics.hpp"

namespace excelformer {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  mix.validate();
}

// ------------------------------------------------------------------ splits

namespace {

constexpr double kFractions[3] = {0.64, 0.16, 0.20};

// Walks `order` and gives each row to the split furthest behind its quota,
// so every contiguous class segment is apportioned 64/16/20 as well.
std::vector<Split> apportion(const std::vector<std::size_t>& order, std::size_t n) {
  std::vector<Split> out(n);
  double assigned[3] = {0, 0, 0};
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::size_t best = 0;
    double best_gap = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      const double gap = kFractions[s] * static_cast<double>(i + 1) - assigned[s];
      if (gap > best_gap) {
        best_gap = gap;
        best = s;
      }
    }
    assigned[best] += 1.0;
    out[order[i]] = static_cast<Split>(best);
  }
  return out;
}

}  // namespace

std::vector<Split> make_splits(std::span<const double> labels, Task task, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (n < 25) throw DataError("splitting needs at least 25 rows, got " + std::to_string(n));
  Rng rng(seed);
  std::vector<std::size_t> order = rng.permutation(n);
  if (is_classification(task)) {
    std::map<double, std::size_t> counts;
    for (double y : labels) ++counts[y];
    bool stratify = true;
    for (const auto& [cls, count] : counts) {
      if (count < 3) {
        std::cerr << "warning: class " << cls << " has only " << count
                  << " rows; using an unstratified split\n";
        stratify = false;
      }
    }
    if (stratify) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
    }
  }
  return apportion(order, n);
}

void split(TabularDataset& data, std::uint64_t seed) {
  data.splits = make_splits(data.labels, data.task, seed);
}

// ------------------------------------------------------------------ losses

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// d row_loss / d prediction, written into `grad` (scaled by `weight`).
void row_loss_grad(std::span<const double> pred, double target, Task task, double weight,
                   double* grad) {
  switch (task) {
    case Task::binary: {
      const double p = pred[0];
      if (p > kProbClamp && p < 1.0 - kProbClamp) {
        grad[0] += weight * (-(target / p) + (1.0 - target) / (1.0 - p));
      }
      break;
    }
    case Task::multiclass: {
      const auto c = static_cast<std::size_t>(target);
      if (pred[c] > kProbClamp) grad[c] += weight * (-1.0 / pred[c]);
      break;
    }
    case Task::regression:
      grad[0] += weight * 2.0 * (pred[0] - target);
      break;
  }
}

void check_targets(const Shape& shape, std::span<const double> labels,
                   const std::vector<std::vector<TargetTerm>>& targets, Task task) {
  if (shape.rank() != 2) throw ShapeError("loss expects [batch, C] predictions, got " + shape.str());
  if (targets.size() != shape[0]) throw ShapeError("loss: target list does not match the batch");
  for (const auto& terms : targets)
    for (const TargetTerm& t : terms) {
      if (t.row >= labels.size()) throw ShapeError("loss: target row out of range");
      if (task == Task::multiclass && static_cast<std::size_t>(labels[t.row]) >= shape[1]) {
        throw ShapeError("loss: class label exceeds the output width");
      }
    }
}

}  // namespace

double row_loss(std::span<const double> prediction, double target, Task task) {
  switch (task) {
    case Task::binary: {
      const double p = clamp_prob(prediction[0]);
      return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
    }
    case Task::multiclass:
      return -std::log(clamp_prob(prediction[static_cast<std::size_t>(target)]));
    case Task::regression: {
      const double e = prediction[0] - target;
      return e * e;
    }
  }
  return 0.0;
}

Var mixed_loss(Var predictions, std::span<const double> labels,
               const std::vector<std::vector<TargetTerm>>& targets, Task task) {
  const Shape& shape = predictions.shape();
  check_targets(shape, labels, targets, task);
  const std::size_t batch = shape[0], c = shape[1];
  const Tensor& p = predictions.value();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::span<const double> row(p.data() + b * c, c);
    for (const TargetTerm& t : targets[b]) total += t.weight * row_loss(row, labels[t.row], task);
  }
  const double inv = batch == 0 ? 0.0 : 1.0 / static_cast<double>(batch);
  const std::size_t pid = predictions.id();
  std::vector<double> y(labels.begin(), labels.end());
  return predictions.tape().record(
      Tensor::scalar(total * inv), {pid},
      [pid, y = std::move(y), targets, task, batch, c, inv](Tape& tape, std::size_t self) {
        const double g = tape.grad_ref(self)[0] * inv;
        const Tensor& pv = tape.value(pid);
        Tensor& gp = tape.grad_slot(pid);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::span<const double> row(pv.data() + b * c, c);
          for (const TargetTerm& t : targets[b]) {
            row_loss_grad(row, y[t.row], task, g * t.weight, gp.data() + b * c);
          }
        }
      });
}

Var loss(Var predictions, std::span<const double> labels, Task task) {
  std::vector<std::vector<TargetTerm>> targets(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) targets[b] = {{b, 1.0}};
  return mixed_loss(predictions, labels, targets, task);
}

double loss_value(const Tensor& predictions, std::span<const double> labels, Task task) {
  Tape tape;
  return loss(tape.constant(predictions), labels, task).value().item();
}

// --------------------------------------------------------------- optimiser

void AdamW::step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("AdamW: parameter / gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter set changed between steps");
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - options_.lr * options_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!(g.shape() == p.shape()) || !(m_[i].shape() == p.shape())) {
      throw ShapeError("AdamW: gradient shape " + g.shape().str() + " does not match parameter " +
                       p.shape().str());
    }
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = p.data();
    const double* gd = g.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * gd[j];
      v[j] = b2 * v[j] + (1.0 - b2) * gd[j] * gd[j];
      w[j] *= decay;
      w[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

bool EarlyStopper::observe(double metric) {
  const bool improved = !std::isnan(metric) && (seen_ == 0 || metric > best_);
  if (improved) {
    best_ = metric;
    best_index_ = seen_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  ++seen_;
  return improved;
}

// ----------------------------------------------------------------- metrics

TargetScaler TargetScaler::fit(std::span<const double> targets, Task task) {
  TargetScaler s;
  if (task != Task::regression || targets.empty()) return s;
  const double n = static_cast<double>(targets.size());
  s.mean = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  double ss = 0.0;
  for (double y : targets) ss += (y - s.mean) * (y - s.mean);
  const double sd = std::sqrt(ss / n);
  s.scale = sd > 0.0 ? sd : 1.0;
  return s;
}

double task_metric(const Tensor& predictions, std::span<const double> labels, Task task) {
  const std::size_t n = labels.size();
  if (predictions.rank() != 2 || predictions.dim(0) != n) {
    throw ShapeError("metric: predictions " + predictions.shape().str() + " vs " +
                     std::to_string(n) + " labels");
  }
  const std::size_t c = predictions.dim(1);
  switch (task) {
    case Task::binary: {
      std::vector<double> scores(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = predictions.at(i, 0);
        y[i] = static_cast<int>(labels[i]);
      }
      return metrics::auc(scores, y);
    }
    case Task::multiclass: {
      std::vector<int> pred(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = predictions.data() + i * c;
        pred[i] = static_cast<int>(std::max_element(row, row + c) - row);
        y[i] = static_cast<int>(labels[i]);
      }
      return metrics::accuracy(pred, y);
    }
    case Task::regression: {
      std::vector<double> pred(n);
      for (std::size_t i = 0; i < n; ++i) pred[i] = predictions.at(i, 0);
      return metrics::nrmse(pred, labels);
    }
  }
  return 0.0;
}

std::string metric_name(Task task) {
  switch (task) {
    case Task::binary: return "auc";
    case Task::multiclass: return "accuracy";
    case Task::regression: return "nrmse";
  }
  return "?";
}

// -------------------------------------------------------------------- fit

Tensor TrainedModel::predict(const Tensor& x) const {
  Tensor out = model.predict(x);
  if (model.config().task == Task::regression) {
    for (double& v : out.values()) v = scaler.inverse(v);
  }
  return out;
}

TrainingData training_data(const PreparedData& prepared, const TabularDataset& data) {
  TrainingData t;
  t.features = prepared.features;
  t.labels = data.labels;
  t.splits = data.splits;
  t.importance = prepared.importance;
  t.task = data.task;
  t.classes = data.classes;
  return t;
}

namespace {

std::vector<std::size_t> rows_with(const std::vector<Split>& splits, Split s) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) rows.push_back(i);
  }
  return rows;
}

std::vector<Tensor*> parameter_slots(ModelParams& params) {
  std::vector<Tensor*> out;
  params.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace

FitResult fit(const TrainingData& data, ModelConfig model_config, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  if (data.features.rank() != 2 || data.features.dim(0) != data.labels.size() ||
      data.splits.size() != data.labels.size()) {
    throw DataError("training data: features, labels and splits disagree in length");
  }
  const std::vector<std::size_t> train_rows = rows_with(data.splits, Split::train);
  const std::vector<std::size_t> val_rows = rows_with(data.splits, Split::val);
  if (train_rows.empty() || val_rows.empty()) {
    throw DataError("training needs non-empty train and validation splits");
  }
  model_config.task = data.task;
  model_config.classes = data.classes;

  const std::size_t f = data.features.dim(1);
  const Tensor x_train = take_rows(data.features, train_rows);
  const Tensor x_val = take_rows(data.features, val_rows);
  std::vector<double> y_train, y_val;
  for (std::size_t r : train_rows) y_train.push_back(data.labels[r]);
  for (std::size_t r : val_rows) y_val.push_back(data.labels[r]);

  const TargetScaler scaler = TargetScaler::fit(y_train, data.task);
  std::vector<double> y_fit(y_train);
  for (double& y : y_fit) y = scaler.forward(y);

  const Rng root(config.seed);
  Rng init_rng = root.fork(1), shuffle_rng = root.fork(2), mix_rng = root.fork(3),
      dropout_rng = root.fork(4);

  FitResult result{TrainedModel{ExcelFormer(model_config, data.importance, init_rng), scaler}, {}, 0, 0.0};
  ExcelFormer& model = result.trained.model;
  ModelParams best = model.params();
  AdamW optimizer(AdamWOptions{.lr = config.lr, .weight_decay = config.weight_decay});
  EarlyStopper stopper(config.patience);
  const std::vector<Tensor*> slots = parameter_slots(model.params());

  const std::size_t n = train_rows.size();
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffle_rng.permutation(n);
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < n; b += config.batch_size) bounds.push_back(b);
    // a trailing single row joins the previous batch so it can still be mixed
    if (bounds.size() > 1 && n - bounds.back() == 1) bounds.pop_back();
    bounds.push_back(n);

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi + 1 < bounds.size(); ++bi) {
      const std::span<const std::size_t> idx(order.data() + bounds[bi], bounds[bi + 1] - bounds[bi]);
      Tensor xb(Shape{idx.size(), f});
      std::vector<double> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(x_train.data() + idx[i] * f, f, xb.data() + i * f);
        yb[i] = y_fit[idx[i]];
      }
      const MixedBatch mixed = apply_scheme(xb, config.mix, data.importance, model_config.d, mix_rng);
      Tape tape;
      const ExcelFormer::Pass pass =
          model.forward(tape, mixed.inputs, dropout_rng, true, mixed.hid ? &*mixed.hid : nullptr);
      const Var l = mixed_loss(pass.output, yb, mixed.targets, data.task);
      const double lv = l.value().item();
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi));
      }
      tape.backward(l);
      std::vector<Tensor> grads;
      pass.params.visit([&](const std::string&, const Var& v) { grads.push_back(v.grad()); });
      optimizer.step(slots, grads);
      loss_sum += lv * static_cast<double>(idx.size());
    }

    const Tensor val_pred = result.trained.predict(x_val);
    if (!val_pred.all_finite()) {
      throw TrainingError("non-finite validation predictions after epoch " + std::to_string(epoch));
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    entry.val_metric = task_metric(val_pred, y_val, data.task);
    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (stopper.observe(entry.val_metric)) {
      best = model.params();
      result.best_epoch = epoch;
      result.best_val_metric = entry.val_metric;
    }
    if (stopper.should_stop()) break;
  }
  model.params() = std::move(best);
  return result;
}

}  // namespace excelformer
