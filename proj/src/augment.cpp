#include "excelformer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace excelformer {

std::string_view to_string(MixScheme scheme) {
  switch (scheme) {
    case MixScheme::none: return "none";
    case MixScheme::hid: return "hid";
    case MixScheme::feat: return "feat";
    case MixScheme::both: return "both";
    case MixScheme::mixup: return "mixup";
    case MixScheme::cutmix: return "cutmix";
  }
  return "?";
}

MixScheme parse_mix_scheme(std::string_view name) {
  for (MixScheme s : {MixScheme::none, MixScheme::hid, MixScheme::feat, MixScheme::both,
                      MixScheme::mixup, MixScheme::cutmix}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown mix scheme '" + std::string(name) +
                              "' (none|hid|feat|both|mixup|cutmix)");
}

void MixConfig::validate() const {
  if (!(alpha_hid > 0.0) || !(alpha_feat > 0.0) || !(alpha_baseline > 0.0)) {
    throw std::invalid_argument("Beta parameters of the mix schemes must be positive");
  }
}

std::vector<double> random_selector(std::size_t n, double lambda, Rng& rng) {
  const auto count = static_cast<std::size_t>(
      std::clamp(std::floor(lambda * static_cast<double>(n)), 0.0, static_cast<double>(n)));
  std::vector<double> s(n, 0.0);
  for (std::size_t i : rng.choose(n, count)) s[i] = 1.0;
  return s;
}

namespace {

void check_pair(std::span<const double> x1, std::span<const double> x2) {
  if (x1.size() != x2.size()) throw ShapeError("mixing rows of different lengths");
}

std::vector<double> splice(std::span<const double> x1, std::span<const double> x2,
                           std::span<const double> s) {
  std::vector<double> out(x1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] * x1[i] + (1.0 - s[i]) * x2[i];
  return out;
}

}  // namespace

MixedRow feat_mix_with(std::span<const double> x1, std::span<const double> x2,
                       std::span<const double> selector, const ImportanceVector& importance) {
  check_pair(x1, x2);
  if (selector.size() != x1.size() || importance.size() != x1.size()) {
    throw ShapeError("feat_mix: selector / importance length does not match the feature count");
  }
  const double total = importance.sum();
  if (!(total > 0.0)) {
    throw std::invalid_argument(
        "feat_mix: feature importances sum to zero; check the importance estimator output");
  }
  double picked = 0.0;
  for (std::size_t i = 0; i < selector.size(); ++i) {
    if (selector[i] == 1.0) picked += importance[i];
  }
  MixedRow out;
  out.x = splice(x1, x2, selector);
  out.coefficient = picked / total;
  out.selector.assign(selector.begin(), selector.end());
  return out;
}

MixedRow feat_mix(std::span<const double> x1, std::span<const double> x2, double alpha,
                  const ImportanceVector& importance, Rng& rng) {
  const double lambda = rng.beta(alpha, alpha);
  MixedRow out = feat_mix_with(x1, x2, random_selector(x1.size(), lambda, rng), importance);
  out.lambda = lambda;
  return out;
}

MixedRow cutmix_with(std::span<const double> x1, std::span<const double> x2,
                     std::span<const double> selector) {
  check_pair(x1, x2);
  if (selector.size() != x1.size()) throw ShapeError("cutmix: selector length mismatch");
  double ones = 0.0;
  for (double s : selector) ones += s;
  MixedRow out;
  out.x = splice(x1, x2, selector);
  out.coefficient = x1.empty() ? 1.0 : ones / static_cast<double>(x1.size());
  out.selector.assign(selector.begin(), selector.end());
  return out;
}

MixedRow cutmix_tabular(std::span<const double> x1, std::span<const double> x2, double alpha,
                        Rng& rng) {
  const double lambda = rng.beta(alpha, alpha);
  MixedRow out = cutmix_with(x1, x2, random_selector(x1.size(), lambda, rng));
  out.lambda = lambda;
  return out;
}

MixedRow mixup_with(std::span<const double> x1, std::span<const double> x2, double lambda) {
  check_pair(x1, x2);
  MixedRow out;
  out.x.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) out.x[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
  out.coefficient = lambda;
  out.lambda = lambda;
  return out;
}

MixedRow mixup_vanilla(std::span<const double> x1, std::span<const double> x2, double alpha,
                       Rng& rng) {
  return mixup_with(x1, x2, rng.beta(alpha, alpha));
}

MixedTokens hid_mix_with(const Tensor& z1, const Tensor& z2, double lambda, Rng& rng) {
  if (z1.rank() != 2 || !(z1.shape() == z2.shape())) {
    throw ShapeError("hid_mix expects two [f, d] token matrices of equal shape");
  }
  const std::size_t f = z1.dim(0), d = z1.dim(1);
  if (d == 0) throw ShapeError("hid_mix: embedding width is zero");
  MixedTokens out;
  out.selector = random_selector(d, lambda, rng);
  out.coefficient = lambda;
  out.z = Tensor(z1.shape());
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double s = out.selector[k];
      out.z.at(i, k) = s * z1.at(i, k) + (1.0 - s) * z2.at(i, k);
    }
  return out;
}

MixedTokens hid_mix(const Tensor& z1, const Tensor& z2, double alpha, Rng& rng) {
  return hid_mix_with(z1, z2, rng.beta(alpha, alpha), rng);
}

double MixedBatch::self_weight(std::size_t row) const {
  double w = 0.0;
  for (const TargetTerm& t : targets[row]) {
    if (t.row == row) w += t.weight;
  }
  return w;
}

double MixedBatch::mixed_label(std::size_t row, std::span<const double> labels) const {
  double y = 0.0;
  for (const TargetTerm& t : targets[row]) y += t.weight * labels[t.row];
  return y;
}

MixedBatch apply_scheme(const Tensor& batch, const MixConfig& config,
                        const ImportanceVector& importance, std::size_t embed_dim, Rng& rng) {
  if (batch.rank() != 2) throw ShapeError("apply_scheme expects a [batch, f] matrix");
  config.validate();
  const std::size_t n = batch.dim(0), f = batch.dim(1);

  MixedBatch out;
  out.inputs = batch;
  out.targets.resize(n);
  for (std::size_t b = 0; b < n; ++b) out.targets[b] = {{b, 1.0}};

  if (config.scheme == MixScheme::none) return out;
  if (n < 2) {
    std::cerr << "warning: batch of one row cannot be mixed; passing it through\n";
    return out;
  }

  const auto row = [&](std::size_t b) {
    return std::span<const double>(batch.data() + b * f, f);
  };

  const bool raw_mix = config.scheme == MixScheme::feat || config.scheme == MixScheme::both ||
                       config.scheme == MixScheme::mixup || config.scheme == MixScheme::cutmix;
  if (raw_mix) {
    out.feature_partner = rng.permutation(n);
    out.feature_selector = Tensor(Shape{n, f});
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t p = out.feature_partner[b];
      MixedRow m;
      switch (config.scheme) {
        case MixScheme::mixup: m = mixup_vanilla(row(b), row(p), config.alpha_baseline, rng); break;
        case MixScheme::cutmix: m = cutmix_tabular(row(b), row(p), config.alpha_baseline, rng); break;
        default: m = feat_mix(row(b), row(p), config.alpha_feat, importance, rng); break;
      }
      std::copy(m.x.begin(), m.x.end(), out.inputs.data() + b * f);
      for (std::size_t j = 0; j < m.selector.size(); ++j) out.feature_selector.at(b, j) = m.selector[j];
      out.feature_lambda.push_back(m.lambda);
      out.feature_coefficient.push_back(m.coefficient);
      out.targets[b] = {{b, m.coefficient}, {p, 1.0 - m.coefficient}};
    }
  }

  if (config.scheme == MixScheme::hid || config.scheme == MixScheme::both) {
    if (embed_dim == 0) throw ShapeError("hid_mix: embedding width is zero");
    HidMixPlan plan;
    plan.partner = rng.permutation(n);
    plan.selector = Tensor(Shape{n, embed_dim});
    const auto inner = out.targets;
    for (std::size_t b = 0; b < n; ++b) {
      const double lambda = rng.beta(config.alpha_hid, config.alpha_hid);
      const auto s = random_selector(embed_dim, lambda, rng);
      std::copy(s.begin(), s.end(), plan.selector.data() + b * embed_dim);
      plan.lambda.push_back(lambda);
      // outer mix of the (possibly already mixed) targets of b and its partner
      std::vector<TargetTerm> terms;
      for (const TargetTerm& t : inner[b]) terms.push_back({t.row, lambda * t.weight});
      for (const TargetTerm& t : inner[plan.partner[b]]) {
        terms.push_back({t.row, (1.0 - lambda) * t.weight});
      }
      out.targets[b] = std::move(terms);
    }
    out.hid = std::move(plan);
  }
  return out;
}

}  // namespace excelformer
