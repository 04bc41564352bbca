#pragma once

// Training: splits, losses, AdamW, early stopping and the epoch loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "excelformer/augment.hpp"
#include "excelformer/autodiff.hpp"
#include "excelformer/dataset.hpp"
#include "excelformer/model.hpp"
#include "excelformer/preprocess.hpp"
#include "excelformer/rng.hpp"
#include "excelformer/tensor.hpp"

namespace excelformer {

/// Numeric failure during training (exit code 1 at the CLI).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 500;
  std::size_t patience = 32;
  std::uint64_t seed = 0;
  MixConfig mix;

  void validate() const;
};

/// 64/16/20 train/val/test tags, stratified by class for classification.
/// Falls back to an unstratified split (with a warning) when some class has
/// fewer than 3 rows.
std::vector<Split> make_splits(std::span<const double> labels, Task task, std::uint64_t seed);
/// Assigns `data.splits`.
void split(TabularDataset& data, std::uint64_t seed);

inline constexpr double kProbClamp = 1e-12;

/// Per-row loss against a single target: binary CE on a sigmoid output,
/// categorical CE on softmax rows, squared error for regression.
double row_loss(std::span<const double> prediction, double target, Task task);

/// Batch mean of sum_t w_t * row_loss(pred_b, labels[t.row]).
Var mixed_loss(Var predictions, std::span<const double> labels,
               const std::vector<std::vector<TargetTerm>>& targets, Task task);
/// Unmixed loss: every row targets its own label with weight 1.
Var loss(Var predictions, std::span<const double> labels, Task task);
double loss_value(const Tensor& predictions, std::span<const double> labels, Task task);

struct AdamWOptions {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// One update of every tensor in `params` with the matching gradient.
  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads);
  std::size_t steps() const { return step_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  AdamWOptions options_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Tracks a higher-is-better metric.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when `metric` is a new best.
  bool observe(double metric);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_index() const { return best_index_; }

 private:
  std::size_t patience_;
  std::size_t seen_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_index_ = 0;
  double best_ = 0.0;
};

/// Regression targets are trained standardised; classification is untouched.
struct TargetScaler {
  double mean = 0.0;
  double scale = 1.0;

  static TargetScaler fit(std::span<const double> targets, Task task);
  double forward(double y) const { return (y - mean) / scale; }
  double inverse(double y) const { return y * scale + mean; }
};

/// Headline metric, higher is better: AUC, accuracy, or nRMSE.
double task_metric(const Tensor& predictions, std::span<const double> labels, Task task);
std::string metric_name(Task task);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainedModel {
  ExcelFormer model;
  TargetScaler scaler;

  /// Predictions on the original label scale, [n, C].
  Tensor predict(const Tensor& x) const;
};

struct FitResult {
  TrainedModel trained;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_metric = 0.0;
};

/// Training input: preprocessed features for every row plus split tags.
/// Only train and val rows are ever read.
struct TrainingData {
  Tensor features;  // [n, f]
  std::vector<double> labels;
  std::vector<Split> splits;
  ImportanceVector importance;
  Task task = Task::binary;
  std::size_t classes = 2;
};

TrainingData training_data(const PreparedData& prepared, const TabularDataset& data);

using EpochCallback = std::function<void(const EpochLog&)>;

FitResult fit(const TrainingData& data, ModelConfig model_config, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

}  // namespace excelformer
