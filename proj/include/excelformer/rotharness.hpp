#pragma once

// Rotation and noisy-column experiments on synthetic or user data.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "excelformer/dataset.hpp"
#include "excelformer/model.hpp"
#include "excelformer/tensor.hpp"
#include "excelformer/train.hpp"

namespace excelformer {

/// Haar-distributed f x f orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
Tensor random_orthogonal(std::size_t f, std::uint64_t seed);
/// Rows of x times Q: [n, f] x [f, f].
Tensor rotate(const Tensor& x, const Tensor& q);

struct NoisyDataset {
  TabularDataset data;
  std::vector<bool> injected;  // per column, true for the added noise columns
};
/// Appends f standard-Gaussian columns named noise_<k>.
NoisyDataset add_noise_features(const TabularDataset& data, std::uint64_t seed);

enum class SyntheticKind { linear, xor_, piecewise };
std::string_view to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::linear;
  std::size_t n = 1000;
  std::size_t informative = 2;
  std::size_t noise = 4;
  Task task = Task::binary;
  std::uint64_t seed = 0;
};

/// Informative columns x0..x{k-1} come first, then noise columns; all are
/// standard Gaussian. Labels:
///   linear     random linear score
///   xor        1[x0 * x1 > 0] (quadrant index for multiclass, x0 * x1 for regression)
///   piecewise  random sum of axis-aligned steps plus one two-feature corner
/// Classification thresholds are sample quantiles of the score, so classes are balanced.
TabularDataset gen_synthetic(const SyntheticSpec& spec);
/// y = 1[x0 + x1 > 0] with 2 informative and 4 noise columns.
TabularDataset make_separable(std::size_t n, std::uint64_t seed);

struct RotationRecord {
  Variant variant = Variant::full;
  bool rotated = false;
  std::uint64_t seed = 0;
  double metric = 0.0;
  std::size_t epochs = 0;
};

struct RotationExperiment {
  std::vector<Variant> variants{Variant::full, Variant::vanilla};
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  ModelConfig model;
  TrainConfig train;
  /// Test hook: use Q = I instead of a random rotation.
  bool identity_rotation = false;
};

/// For each seed: split, preprocess, then train every variant on the
/// unrotated and the rotated features (rotation applied after the quantile
/// transform, importance recomputed on the rotated training rows). Records
/// are ordered seed-major, then variant, then unrotated before rotated.
std::vector<RotationRecord> run_rotation_experiment(const TabularDataset& data,
                                                    const RotationExperiment& experiment);

/// Long-format CSV: variant,rotated,seed,metric,epochs.
std::string rotation_csv(const std::vector<RotationRecord>& records);
/// {"metric": ..., "cells": [{"variant", "rotated", "mean", "std", "n"}...]} as JSON text.
std::string rotation_summary_json(const std::vector<RotationRecord>& records, Task task);

}  // namespace excelformer
