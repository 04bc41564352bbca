#include "excelformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace excelformer {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_spa: return "no-spa";
    case Variant::no_iai: return "no-iai";
    case Variant::vanilla: return "vanilla";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::full, Variant::no_spa, Variant::no_iai, Variant::vanilla}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown model variant '" + std::string(name) +
                              "' (full|no-spa|no-iai|vanilla)");
}

void ModelConfig::apply(Variant v) {
  semi_permeable = v == Variant::full || v == Variant::no_iai;
  attenuated_init = v == Variant::full || v == Variant::no_spa;
}

void ModelConfig::validate() const {
  if (blocks < 1) throw std::invalid_argument("model needs at least one block");
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw std::invalid_argument("embedding width " + std::to_string(d) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(attn_dropout >= 0.0) || attn_dropout >= 1.0) {
    throw std::invalid_argument("attention dropout must lie in [0, 1)");
  }
  if (task == Task::multiclass && classes < 2) {
    throw std::invalid_argument("multiclass model needs at least 2 classes");
  }
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  params.visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Tensor build_mask(const ImportanceVector& importance) {
  const std::size_t f = importance.size();
  Tensor m(Shape{f, f});
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      if (importance[i] > importance[j]) m.at(i, j) = kMaskValue;
    }
  return m;
}

double he_variance(std::size_t fan_in) { return 2.0 / static_cast<double>(fan_in); }

namespace {

Tensor normal_tensor(Shape shape, double variance, Rng& rng) {
  Tensor t(shape);
  const double sd = std::sqrt(variance);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

LinearParams<Tensor> make_linear(std::size_t in, std::size_t out, double scale, Rng& rng) {
  return {normal_tensor(Shape{in, out}, scale * he_variance(in), rng), Tensor(Shape{out})};
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::size_t features, Rng& rng) {
  config.validate();
  if (features == 0) throw std::invalid_argument("model needs at least one feature");
  const std::size_t f = features, d = config.d, c = config.outputs();
  ModelParams p;
  const double ev = he_variance(1);
  p.embedding.w1 = normal_tensor(Shape{f, d}, ev, rng);
  p.embedding.b1 = normal_tensor(Shape{f, d}, ev, rng);
  p.embedding.w2 = normal_tensor(Shape{f, d}, ev, rng);
  p.embedding.b2 = normal_tensor(Shape{f, d}, ev, rng);
  const double spa_scale = config.attenuated_init ? config.gamma : 1.0;
  for (std::size_t l = 0; l < config.blocks; ++l) {
    SpaParams<Tensor> a;
    a.query = make_linear(d, d, spa_scale, rng);
    a.key = make_linear(d, d, spa_scale, rng);
    a.value = make_linear(d, d, spa_scale, rng);
    a.output = make_linear(d, d, spa_scale, rng);
    p.attention.push_back(std::move(a));
    GluParams<Tensor> g;
    g.gate = make_linear(d, d, 1.0, rng);
    g.value = make_linear(d, d, 1.0, rng);
    p.glu.push_back(std::move(g));
  }
  p.head.wf = normal_tensor(Shape{f, c}, he_variance(f), rng);
  p.head.bf = Tensor(Shape{c});
  p.head.wd = normal_tensor(Shape{d, 1}, he_variance(d), rng);
  p.head.bd = Tensor(Shape{1});
  p.head.slope = Tensor(Shape{1}, 0.25);
  return p;
}

void iai_init(ModelParams& params, double gamma, Rng& rng) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  for (SpaParams<Tensor>& a : params.attention) {
    for (LinearParams<Tensor>* lin : {&a.query, &a.key, &a.value, &a.output}) {
      lin->weight = normal_tensor(lin->weight.shape(), gamma * he_variance(lin->weight.dim(0)), rng);
      lin->bias.fill(0.0);
    }
  }
}

Var linear(Var x, const LinearParams<Var>& p) { return ad::add(ad::matmul(x, p.weight), p.bias); }

Var embed(Var x, const EmbeddingParams<Var>& p) {
  if (x.shape().rank() != 2 || x.shape()[1] != p.w1.shape()[0]) {
    throw ShapeError("embed: input " + x.shape().str() + " does not match " +
                     std::to_string(p.w1.shape()[0]) + " features");
  }
  return ad::mul(ad::tanh(ad::feature_affine(x, p.w1, p.b1)), ad::feature_affine(x, p.w2, p.b2));
}

Var spa_forward(Var z, const Tensor& mask, const SpaParams<Var>& p, std::size_t heads,
                double dropout, Rng& rng, bool training) {
  if (z.shape().rank() != 3) throw ShapeError("spa_forward expects [batch, f, d], got " + z.shape().str());
  const std::size_t d = z.shape()[2];
  if (heads == 0 || d % heads != 0) throw ShapeError("spa_forward: heads must divide d");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
  const Var q = ad::split_heads(linear(z, p.query), heads);
  const Var k = ad::split_heads(linear(z, p.key), heads);
  const Var v = ad::split_heads(linear(z, p.value), heads);
  Var attn = ad::masked_softmax(ad::scale(ad::matmul_nt(q, k), scale), mask);
  attn = ad::dropout(attn, dropout, rng, training);
  return linear(ad::merge_heads(ad::matmul(attn, v), heads), p.output);
}

Var glu_forward(Var z, const GluParams<Var>& p) {
  return ad::mul(ad::tanh(linear(z, p.gate)), linear(z, p.value));
}

Var head_forward(Var z, const HeadParams<Var>& p, Task task) {
  if (z.shape().rank() != 3) throw ShapeError("head_forward expects [batch, f, d], got " + z.shape().str());
  const std::size_t c = p.wf.shape()[1];
  if ((task == Task::multiclass) != (c > 1)) {
    throw ShapeError("head has " + std::to_string(c) + " outputs, which does not fit task " +
                     std::string(to_string(task)));
  }
  const std::size_t batch = z.shape()[0];
  Var h = ad::prelu(ad::feature_contract(z, p.wf, p.bf), p.slope);  // [B, C, d]
  Var logits = ad::reshape(ad::add(ad::matmul(h, p.wd), p.bd), Shape{batch, c});
  switch (task) {
    case Task::binary: return ad::sigmoid(logits);
    case Task::multiclass: return ad::softmax(logits);
    case Task::regression: return logits;
  }
  return logits;
}

ExcelFormer::ExcelFormer(ModelConfig config, ImportanceVector importance, Rng& init_rng)
    : ExcelFormer(config, importance, init_params(config, importance.size(), init_rng)) {}

ExcelFormer::ExcelFormer(ModelConfig config, ImportanceVector importance, ModelParams params)
    : config_(config), importance_(std::move(importance)), params_(std::move(params)) {
  config_.validate();
  const std::size_t f = importance_.size();
  mask_ = config_.semi_permeable ? build_mask(importance_) : Tensor(Shape{f, f});
  if (params_.attention.size() != config_.blocks || params_.glu.size() != config_.blocks ||
      params_.embedding.w1.rank() != 2 || params_.embedding.w1.dim(0) != f ||
      params_.embedding.w1.dim(1) != config_.d || params_.head.wf.dim(1) != config_.outputs()) {
    throw ShapeError("parameters do not match the model configuration");
  }
}

ExcelFormer::Pass ExcelFormer::forward(Tape& tape, const Tensor& x, Rng& rng, bool training,
                                       const HidMixPlan* hid_mix) const {
  BoundParams bound =
      params_.map<Var>([&](const Tensor& t) { return tape.leaf(t); });
  Var z0 = embed(tape.constant(x), bound.embedding);
  if (hid_mix != nullptr) z0 = ad::mix_tokens(z0, hid_mix->partner, hid_mix->selector);
  return forward_tokens(tape, z0, bound, rng, training);
}

ExcelFormer::Pass ExcelFormer::forward_tokens(Tape&, Var z0, const BoundParams& params, Rng& rng,
                                              bool training) const {
  Pass pass;
  pass.params = params;
  pass.embedding = z0;
  Var z = z0;
  for (std::size_t l = 0; l < config_.blocks; ++l) {
    z = ad::add(z, spa_forward(z, mask_, params.attention[l], config_.heads, config_.attn_dropout,
                               rng, training));
    z = ad::add(z, glu_forward(z, params.glu[l]));
  }
  pass.tokens = z;
  pass.output = head_forward(z, params.head, config_.task);
  return pass;
}

Tensor ExcelFormer::predict(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != features()) {
    throw ShapeError("predict: expected [n, " + std::to_string(features()) + "], got " +
                     x.shape().str());
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t n = x.dim(0), c = config_.outputs();
  Tensor out(Shape{n, c});
  Rng unused(0);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    Tensor chunk(Shape{rows, features()},
                 std::vector<double>(x.data() + start * features(),
                                     x.data() + (start + rows) * features()));
    Tape tape;
    const Pass pass = forward(tape, chunk, unused, false);
    std::copy_n(pass.output.value().data(), rows * c, out.data() + start * c);
  }
  return out;
}

}  // namespace excelformer
