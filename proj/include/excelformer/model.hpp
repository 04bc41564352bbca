#pragma once

// The network: per-feature GLU embedding, L blocks of
//   z <- z + SPA(z);  z <- z + GLU(z)
// and a head that contracts the feature axis, then the embedding axis.

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "excelformer/augment.hpp"
#include "excelformer/autodiff.hpp"
#include "excelformer/dataset.hpp"
#include "excelformer/preprocess.hpp"
#include "excelformer/rng.hpp"
#include "excelformer/tensor.hpp"

namespace excelformer {

/// Additive attention-mask value for blocked pairs.
inline constexpr double kMaskValue = -1e5;

/// Architecture switches used by the ablation experiments.
enum class Variant {
  full,     // importance mask + attenuated init
  no_spa,   // all-zero mask
  no_iai,   // importance mask, unscaled init
  vanilla,  // neither
};
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t blocks = 3;
  std::size_t d = 256;
  std::size_t heads = 32;
  double attn_dropout = 0.3;
  double gamma = 1e-4;
  Task task = Task::binary;
  std::size_t classes = 2;  // class count for classification, ignored for regression
  bool semi_permeable = true;
  bool attenuated_init = true;

  /// Output width C: class count for multiclass, else 1.
  std::size_t outputs() const { return task == Task::multiclass ? classes : 1; }
  void apply(Variant v);
  void validate() const;
};

template <class T>
struct LinearParams {
  T weight;  // [in, out]
  T bias;    // [out]
};

template <class T>
struct SpaParams {
  LinearParams<T> query, key, value, output;
};

template <class T>
struct GluParams {
  LinearParams<T> gate, value;
};

template <class T>
struct EmbeddingParams {
  T w1, b1, w2, b2;  // each [f, d]
};

template <class T>
struct HeadParams {
  T wf;     // [f, C]
  T bf;     // [C]
  T wd;     // [d, 1]
  T bd;     // [1]
  T slope;  // [1], P-ReLU
};

template <class T>
struct BasicParams {
  EmbeddingParams<T> embedding;
  std::vector<SpaParams<T>> attention;
  std::vector<GluParams<T>> glu;
  HeadParams<T> head;

  /// Every parameter with a stable dotted name, in a fixed order.
  template <class F>
  void visit(F&& fn) {
    visit_impl(*this, fn);
  }
  template <class F>
  void visit(F&& fn) const {
    visit_impl(*this, fn);
  }

  /// Same structure with each leaf mapped through `fn`.
  template <class U, class F>
  BasicParams<U> map(F&& fn) const {
    BasicParams<U> out;
    out.attention.resize(attention.size());
    out.glu.resize(glu.size());
    std::vector<U*> dst;
    out.visit([&](const std::string&, U& u) { dst.push_back(&u); });
    std::size_t i = 0;
    visit([&](const std::string&, const T& t) { *dst[i++] = fn(t); });
    return out;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& fn) {
    fn("embedding.w1", p.embedding.w1);
    fn("embedding.b1", p.embedding.b1);
    fn("embedding.w2", p.embedding.w2);
    fn("embedding.b2", p.embedding.b2);
    for (std::size_t l = 0; l < p.attention.size(); ++l) {
      const std::string pre = "block" + std::to_string(l) + ".";
      auto& a = p.attention[l];
      fn(pre + "spa.query.weight", a.query.weight);
      fn(pre + "spa.query.bias", a.query.bias);
      fn(pre + "spa.key.weight", a.key.weight);
      fn(pre + "spa.key.bias", a.key.bias);
      fn(pre + "spa.value.weight", a.value.weight);
      fn(pre + "spa.value.bias", a.value.bias);
      fn(pre + "spa.output.weight", a.output.weight);
      fn(pre + "spa.output.bias", a.output.bias);
      auto& g = p.glu[l];
      fn(pre + "glu.gate.weight", g.gate.weight);
      fn(pre + "glu.gate.bias", g.gate.bias);
      fn(pre + "glu.value.weight", g.value.weight);
      fn(pre + "glu.value.bias", g.value.bias);
    }
    fn("head.wf", p.head.wf);
    fn("head.bf", p.head.bf);
    fn("head.wd", p.head.wd);
    fn("head.bd", p.head.bd);
    fn("head.slope", p.head.slope);
  }
};

using ModelParams = BasicParams<Tensor>;
using BoundParams = BasicParams<Var>;

std::size_t parameter_count(const ModelParams& params);

/// M[i,j] = kMaskValue when importance[i] > importance[j], else 0.
Tensor build_mask(const ImportanceVector& importance);

/// Standard He variance 2 / fan_in.
double he_variance(std::size_t fan_in);

/// Fresh parameters: He-normal everywhere, SPA weights additionally scaled to
/// variance gamma * 2 / fan_in when attenuated init is on. Biases start at
/// zero except the embedding biases, which are drawn like their weights.
ModelParams init_params(const ModelConfig& config, std::size_t features, Rng& rng);
/// Redraws the SPA weights of `params` with variance gamma * 2 / fan_in.
void iai_init(ModelParams& params, double gamma, Rng& rng);

Var linear(Var x, const LinearParams<Var>& p);
Var embed(Var x, const EmbeddingParams<Var>& p);
/// Attention branch only; the caller adds the residual.
Var spa_forward(Var z, const Tensor& mask, const SpaParams<Var>& p, std::size_t heads,
                double dropout, Rng& rng, bool training);
/// tanh(Linear1(z)) * Linear2(z); the caller adds the residual.
Var glu_forward(Var z, const GluParams<Var>& p);
Var head_forward(Var z, const HeadParams<Var>& p, Task task);

class ExcelFormer {
 public:
  ExcelFormer() = default;
  ExcelFormer(ModelConfig config, ImportanceVector importance, Rng& init_rng);
  ExcelFormer(ModelConfig config, ImportanceVector importance, ModelParams params);

  struct Pass {
    BoundParams params;
    Var embedding;  // z(0), after any Hid-Mix
    Var tokens;     // z(L)
    Var output;     // [batch, C] after the output activation
  };
  /// Records one forward pass on `tape` with all parameters as leaves.
  Pass forward(Tape& tape, const Tensor& x, Rng& rng, bool training,
               const HidMixPlan* hid_mix = nullptr) const;
  /// Forward with the given tensor as z(0), skipping the embedding.
  Pass forward_tokens(Tape& tape, Var z0, const BoundParams& params, Rng& rng, bool training) const;

  /// Evaluation-mode outputs [n, C], computed in fixed-size row chunks.
  Tensor predict(const Tensor& x) const;

  const ModelConfig& config() const { return config_; }
  std::size_t features() const { return importance_.size(); }
  const ImportanceVector& importance() const { return importance_; }
  const Tensor& mask() const { return mask_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

 private:
  ModelConfig config_;
  ImportanceVector importance_;
  Tensor mask_;
  ModelParams params_;
};

}  // namespace excelformer
