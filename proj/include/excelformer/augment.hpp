#pragma once

// Hid-Mix and Feat-Mix, plus the vanilla Mixup and tabular CutMix baselines.
//
// Labels are never interpolated directly. A mixed row carries a short list of
// (source row, weight) terms with weights summing to 1, and the loss is the
// weighted sum of per-term losses. For cross-entropy this equals the loss
// against the interpolated label; for MSE it differs only by a constant.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "excelformer/preprocess.hpp"
#include "excelformer/rng.hpp"
#include "excelformer/tensor.hpp"

namespace excelformer {

enum class MixScheme { none, hid, feat, both, mixup, cutmix };

std::string_view to_string(MixScheme scheme);
MixScheme parse_mix_scheme(std::string_view name);

struct MixConfig {
  MixScheme scheme = MixScheme::none;
  double alpha_hid = 0.5;
  double alpha_feat = 0.5;
  /// Beta parameter for the Mixup / CutMix baselines.
  double alpha_baseline = 0.5;

  void validate() const;
};

/// Binary selector with exactly floor(lambda * n) ones at random positions.
std::vector<double> random_selector(std::size_t n, double lambda, Rng& rng);

/// One mixed pair of raw feature rows.
struct MixedRow {
  std::vector<double> x;
  double coefficient = 1.0;  // weight of the first sample's label
  double lambda = 1.0;       // Beta draw
  std::vector<double> selector;
};

/// Feat-Mix with given selector: x = s*x1 + (1-s)*x2, coefficient = importance
/// share of the selected features.
MixedRow feat_mix_with(std::span<const double> x1, std::span<const double> x2,
                       std::span<const double> selector, const ImportanceVector& importance);
MixedRow feat_mix(std::span<const double> x1, std::span<const double> x2, double alpha,
                  const ImportanceVector& importance, Rng& rng);
/// Like Feat-Mix but the coefficient is the swapped count fraction.
MixedRow cutmix_with(std::span<const double> x1, std::span<const double> x2,
                     std::span<const double> selector);
MixedRow cutmix_tabular(std::span<const double> x1, std::span<const double> x2, double alpha,
                        Rng& rng);
MixedRow mixup_with(std::span<const double> x1, std::span<const double> x2, double lambda);
MixedRow mixup_vanilla(std::span<const double> x1, std::span<const double> x2, double alpha,
                       Rng& rng);

/// Hid-Mix of two [f, d] token matrices: the same embedding dimensions are
/// taken from z1 for every feature.
struct MixedTokens {
  Tensor z;
  double coefficient = 1.0;
  std::vector<double> selector;  // length d
};
MixedTokens hid_mix_with(const Tensor& z1, const Tensor& z2, double lambda, Rng& rng);
MixedTokens hid_mix(const Tensor& z1, const Tensor& z2, double alpha, Rng& rng);

/// Deferred Hid-Mix for a whole batch, applied by the model right after the
/// embedding layer.
struct HidMixPlan {
  std::vector<std::size_t> partner;  // row b mixes with row partner[b]
  Tensor selector;                   // [batch, d]
  std::vector<double> lambda;
};

struct TargetTerm {
  std::size_t row;  // index into the unmixed batch labels
  double weight;
};

struct MixedBatch {
  Tensor inputs;                                 // [batch, f] after raw-feature mixing
  std::vector<std::vector<TargetTerm>> targets;  // per row, weights sum to 1
  std::vector<std::size_t> feature_partner;      // empty unless a raw-feature scheme ran
  std::vector<double> feature_lambda;
  std::vector<double> feature_coefficient;
  Tensor feature_selector;                       // [batch, f] for feat / cutmix
  std::optional<HidMixPlan> hid;

  /// Label weight of the row's own original sample.
  double self_weight(std::size_t row) const;
  /// Interpolated label sum_t w_t * labels[t.row] for one row.
  double mixed_label(std::size_t row, std::span<const double> labels) const;
};

/// Pairs every row with a partner from a random batch permutation and applies
/// the configured scheme. Hid-Mix selectors are sized by `embed_dim`.
MixedBatch apply_scheme(const Tensor& batch, const MixConfig& config,
                        const ImportanceVector& importance, std::size_t embed_dim, Rng& rng);

}  // namespace excelformer
