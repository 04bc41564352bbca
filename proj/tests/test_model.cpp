#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "excelformer/gradsuite.hpp"
#include "excelformer/model.hpp"
#include "helpers.hpp"

using namespace excelformer;
using testing::random_tensor;

namespace {

ModelConfig small_config(Task task = Task::binary, std::size_t classes = 2) {
  ModelConfig c;
  c.d = 16;
  c.heads = 4;
  c.blocks = 2;
  c.task = task;
  c.classes = classes;
  return c;
}

ImportanceVector imp(std::vector<double> v) { return ImportanceVector{std::move(v)}; }

}  // namespace

TEST_CASE("build_mask examples") {
  const Tensor m = build_mask(imp({0.9, 0.2, 0.5}));
  const std::vector<double> expected{0, -1e5, -1e5, 0, 0, 0, 0, -1e5, 0};
  CHECK(m.vec() == expected);
  const Tensor tied = build_mask(imp({0.3, 0.3, 0.3}));
  for (double v : tied.values()) CHECK(v == 0.0);
}

TEST_CASE("mask properties over random importances") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t f = 2 + rng.index(10);
    std::vector<double> v(f);
    for (double& x : v) x = std::round(rng.uniform() * 5) / 5;  // coarse grid forces ties
    const Tensor m = build_mask(imp(v));
    for (std::size_t i = 0; i < f; ++i) {
      CHECK(m.at(i, i) == 0.0);
      for (std::size_t j = 0; j < f; ++j) {
        if (v[i] == v[j]) {
          CHECK(m.at(i, j) == 0.0);
        } else {
          CHECK(m.at(i, j) + m.at(j, i) == kMaskValue);
        }
      }
    }
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.d = 30;
  c.heads = 4;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.blocks = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.gamma = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  CHECK(c.blocks == 3);
  CHECK(c.d == 256);
  CHECK(c.heads == 32);
  CHECK(c.attn_dropout == 0.3);
  CHECK(c.gamma == 1e-4);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("variants toggle the mask and the initialisation") {
  ModelConfig c;
  c.apply(Variant::vanilla);
  CHECK_FALSE(c.semi_permeable);
  CHECK_FALSE(c.attenuated_init);
  c.apply(Variant::no_spa);
  CHECK_FALSE(c.semi_permeable);
  CHECK(c.attenuated_init);
  c.apply(Variant::no_iai);
  CHECK(c.semi_permeable);
  CHECK_FALSE(c.attenuated_init);
  CHECK(parse_variant("no-spa") == Variant::no_spa);
  CHECK_THROWS(parse_variant("nope"));
}

TEST_CASE("embedding examples") {
  Rng rng(2);
  Tape tape;
  const Tensor x = random_tensor(Shape{3, 4}, rng);
  const Var zero = tape.constant(Tensor(Shape{4, 8}));
  CHECK(frobenius_norm(embed(tape.constant(x), {zero, zero, zero, zero}).value()) == 0.0);
  const Var w2 = tape.constant(random_tensor(Shape{4, 8}, rng));
  CHECK(frobenius_norm(embed(tape.constant(x), {zero, zero, w2, w2}).value()) == 0.0);

  EmbeddingParams<Var> p;
  p.w1 = tape.constant(random_tensor(Shape{4, 8}, rng));
  p.b1 = tape.constant(random_tensor(Shape{4, 8}, rng));
  p.w2 = tape.constant(random_tensor(Shape{4, 8}, rng));
  p.b2 = tape.constant(random_tensor(Shape{4, 8}, rng));
  const Tensor z = embed(tape.constant(x), p).value();
  Tensor x2 = x;
  x2.at(1, 2) += 0.7;
  const Tensor z2 = embed(tape.constant(x2), p).value();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 8; ++k) {
        if (b == 1 && i == 2) continue;
        CHECK(z.at(b, i, k) == z2.at(b, i, k));
      }
  CHECK(z.at(1, 2, 0) != z2.at(1, 2, 0));
  CHECK_THROWS_AS(embed(tape.constant(Tensor(Shape{3, 5})), p), ShapeError);
}

TEST_CASE("fully masked attention is the identity map over tokens") {
  Rng rng(3);
  Tape tape;
  const std::size_t f = 4, d = 8;
  const Tensor z = random_tensor(Shape{2, f, d}, rng);
  const Var q = tape.constant(random_tensor(Shape{2, f, d}, rng));
  Tensor mask(Shape{f, f}, kMaskValue);
  for (std::size_t i = 0; i < f; ++i) mask.at(i, i) = 0.0;
  const Tensor a = ad::masked_softmax(ad::matmul_nt(q, tape.constant(z)), mask).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) CHECK(a.at(b, i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("attenuated SPA branch vanishes") {
  Rng rng(4);
  const ModelConfig c = small_config();
  double last = 1e300;
  for (double gamma : {1.0, 1e-4, 1e-8}) {
    ModelConfig g = c;
    g.gamma = gamma;
    Rng init(5);
    const ModelParams p = init_params(g, 3, init);
    Tape tape;
    const BoundParams bp = p.map<Var>([&](const Tensor& t) { return tape.constant(t); });
    const Var z = tape.constant(random_tensor(Shape{2, 3, c.d}, rng));
    const double norm = frobenius_norm(
        spa_forward(z, build_mask(imp({0.1, 0.2, 0.3})), bp.attention[0], c.heads, 0.3, rng, false).value());
    CHECK(norm < last);
    last = norm;
  }
  CHECK(last < 1e-6);
}

TEST_CASE("most informative token ignores every other token in one SPA layer") {
  Rng rng(6);
  const ModelConfig c = small_config();
  ModelConfig g = c;
  g.gamma = 1.0;
  Rng init(7);
  const ModelParams p = init_params(g, 4, init);
  const Tensor mask = build_mask(imp({0.2, 0.9, 0.4, 0.1}));  // feature 1 is strictly most informative
  const Tensor z = random_tensor(Shape{1, 4, c.d}, rng);
  const auto run = [&](const Tensor& in) {
    Tape tape;
    const BoundParams bp = p.map<Var>([&](const Tensor& t) { return tape.constant(t); });
    Rng unused(0);
    return spa_forward(tape.constant(in), mask, bp.attention[0], c.heads, 0.3, unused, false).value();
  };
  const Tensor base = run(z);
  for (std::size_t j : {0, 2, 3}) {
    Tensor pz = z;
    for (std::size_t k = 0; k < c.d; ++k) pz.at(0, j, k) += rng.normal();
    const Tensor out = run(pz);
    for (std::size_t k = 0; k < c.d; ++k) CHECK(std::abs(out.at(0, 1, k) - base.at(0, 1, k)) < 1e-10);
  }

  // and its gradient with respect to the other tokens is exactly zero
  Tape tape;
  const BoundParams bp = p.map<Var>([&](const Tensor& t) { return tape.constant(t); });
  const Var zin = tape.leaf(z);
  Rng unused(0);
  const Var out = spa_forward(zin, mask, bp.attention[0], c.heads, 0.3, unused, false);
  Tensor pick(out.shape());
  for (std::size_t k = 0; k < c.d; ++k) pick.at(0, 1, k) = rng.normal();
  tape.backward(ad::sum(ad::mul(out, tape.constant(pick))));
  const Tensor gz = zin.grad();
  for (std::size_t j : {0, 2, 3})
    for (std::size_t k = 0; k < c.d; ++k) CHECK(gz.at(0, j, k) == 0.0);
}

TEST_CASE("IAI variance") {
  ModelConfig c;  // d = 256
  Rng rng(8);
  ModelParams p = init_params(c, 2, rng);
  iai_init(p, 1e-4, rng);
  double ss = 0;
  std::size_t n = 0;
  for (const auto& a : p.attention)
    for (const auto* lin : {&a.query, &a.key, &a.value, &a.output}) {
      for (double w : lin->weight.values()) ss += w * w;
      n += lin->weight.size();
      for (double b : lin->bias.values()) CHECK(b == 0.0);
    }
  const double target = 1e-4 * he_variance(256);
  CHECK(n > 700000);
  CHECK(std::abs(ss / static_cast<double>(n) / target - 1.0) < 0.05);

  // gamma = 1 is plain He initialisation
  ModelParams q = init_params(c, 2, rng);
  iai_init(q, 1.0, rng);
  ss = 0;
  for (double w : q.attention[0].query.weight.values()) ss += w * w;
  CHECK(std::abs(ss / 65536.0 / he_variance(256) - 1.0) < 0.05);
  CHECK_THROWS(iai_init(q, 0.0, rng));
}

TEST_CASE("GLU examples") {
  Rng rng(9);
  Tape tape;
  const std::size_t d = 6;
  const Tensor z = random_tensor(Shape{2, 3, d}, rng);
  const Var zero_w = tape.constant(Tensor(Shape{d, d})), zero_b = tape.constant(Tensor(Shape{d}));
  const Var w = tape.constant(random_tensor(Shape{d, d}, rng));
  CHECK(frobenius_norm(glu_forward(tape.constant(z), {{zero_w, zero_b}, {w, zero_b}}).value()) == 0.0);

  // saturated gate with identity value path returns z
  Tensor eye(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
  const Tensor z_pos = Tensor(Shape{2, 3, d}, 1.0);
  const Var big_b = tape.constant(Tensor(Shape{d}, 1e3));
  const Tensor y = glu_forward(tape.constant(z_pos), {{zero_w, big_b}, {tape.constant(eye), zero_b}}).value();
  CHECK(max_abs_diff(y, z_pos) < 1e-12);
}

TEST_CASE("head examples") {
  Rng rng(10);
  Tape tape;
  const Tensor z = random_tensor(Shape{5, 3, 8}, rng, 3.0);
  const auto params = [&](std::size_t c, double scale) {
    return HeadParams<Var>{tape.constant(random_tensor(Shape{3, c}, rng, scale)),
                           tape.constant(random_tensor(Shape{c}, rng, scale)),
                           tape.constant(random_tensor(Shape{8, 1}, rng, scale)),
                           tape.constant(random_tensor(Shape{1}, rng, scale)),
                           tape.constant(Tensor(Shape{1}, 0.25))};
  };
  const Tensor bin = head_forward(tape.constant(z), params(1, 1.0), Task::binary).value();
  CHECK(bin.shape() == Shape{5, 1});
  for (double v : bin.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const Tensor multi = head_forward(tape.constant(z), params(4, 1.0), Task::multiclass).value();
  for (std::size_t b = 0; b < 5; ++b) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += multi.at(b, c);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(frobenius_norm(head_forward(tape.constant(z), params(1, 0.0), Task::regression).value()) == 0.0);
  CHECK_THROWS_AS(head_forward(tape.constant(z), params(3, 1.0), Task::binary), ShapeError);
  CHECK_THROWS_AS(head_forward(tape.constant(z), params(1, 1.0), Task::multiclass), ShapeError);
}

TEST_CASE("parameter layout and count parity") {
  const std::size_t f = 5, d = 16, C = 3;
  ModelConfig c = small_config(Task::multiclass, C);
  c.d = d;
  Rng rng(11);
  const ModelParams p = init_params(c, f, rng);
  // embedding: f * (2d weights + 2d biases)
  std::size_t emb = p.embedding.w1.size() + p.embedding.b1.size() + p.embedding.w2.size() + p.embedding.b2.size();
  CHECK(emb == f * 4 * d);
  // SPA + GLU block equals attention (4 d x d + biases) plus a two-layer d -> d -> d feedforward
  std::size_t block = 0;
  for (const auto* lin : {&p.attention[0].query, &p.attention[0].key, &p.attention[0].value, &p.attention[0].output,
                          &p.glu[0].gate, &p.glu[0].value}) {
    block += lin->weight.size() + lin->bias.size();
  }
  const std::size_t vanilla_attention = 4 * (d * d + d), feedforward = 2 * (d * d + d);
  CHECK(block == vanilla_attention + feedforward);
  const std::size_t head = f * C + C + d + 1 + 1;
  CHECK(parameter_count(p) == emb + c.blocks * block + head);
  CHECK(p.head.slope[0] == 0.25);

  std::vector<std::string> names;
  p.visit([&](const std::string& n, const Tensor&) { names.push_back(n); });
  CHECK(names.front() == "embedding.w1");
  CHECK(names.back() == "head.slope");
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
}

TEST_CASE("forward rows are independent of each other") {
  Rng rng(12);
  const ModelConfig c = small_config();
  Rng init(13);
  const ExcelFormer m(c, imp({0.5, 0.1, 0.3}), init);
  Tensor x = random_tensor(Shape{4, 3}, rng);
  for (std::size_t j = 0; j < 3; ++j) x.at(3, j) = x.at(1, j);
  const Tensor y = m.predict(x);
  CHECK(y.at(3, 0) == y.at(1, 0));
  Tensor single(Shape{1, 3}, std::vector<double>{x.at(1, 0), x.at(1, 1), x.at(1, 2)});
  CHECK(std::abs(m.predict(single).at(0, 0) - y.at(1, 0)) < 1e-14);
}

TEST_CASE("forward is deterministic, including dropout and gradients") {
  const ModelConfig c = small_config();
  Rng data(14);
  const Tensor x = random_tensor(Shape{6, 3}, data);
  const auto run = [&] {
    Rng init(15), drop(16);
    const ExcelFormer m(c, imp({0.5, 0.1, 0.3}), init);
    Tape tape;
    const auto pass = m.forward(tape, x, drop, true);
    tape.backward(ad::mean(pass.output));
    std::vector<double> flat = pass.output.value().vec();
    pass.params.visit([&](const std::string&, const Var& v) {
      const Tensor g = v.grad();
      flat.insert(flat.end(), g.vec().begin(), g.vec().end());
    });
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("equal importances make the no-spa variant identical to full") {
  ModelConfig full = small_config(), nospa = small_config();
  nospa.apply(Variant::no_spa);
  Rng a(17), b(17);
  const ExcelFormer m1(full, imp({0.4, 0.4, 0.4}), a), m2(nospa, imp({0.4, 0.4, 0.4}), b);
  Rng data(18);
  const Tensor x = random_tensor(Shape{5, 3}, data);
  CHECK(m1.predict(x).vec() == m2.predict(x).vec());
}

TEST_CASE("hid-mix plan is applied after the embedding") {
  const ModelConfig c = small_config();
  Rng init(19);
  const ExcelFormer m(c, imp({0.2, 0.1}), init);
  Rng data(20);
  const Tensor x = random_tensor(Shape{2, 2}, data);
  HidMixPlan plan{{1, 0}, Tensor(Shape{2, c.d}, 1.0), {1.0, 1.0}};
  Tape t1, t2;
  Rng r1(0), r2(0);
  const auto mixed = m.forward(t1, x, r1, false, &plan);
  const auto plain = m.forward(t2, x, r2, false);
  CHECK(mixed.output.value().vec() == plain.output.value().vec());
  plan.selector.fill(0.0);
  Tape t3;
  const auto swapped = m.forward(t3, x, r1, false, &plan);
  CHECK(swapped.output.value()[0] == plain.output.value()[1]);
}

TEST_CASE("gradient suite passes for several seeds") {
  for (std::uint64_t seed : {1, 2}) {
    for (const GradcheckReport& r : gradcheck_suite(seed, GradsuiteOptions{2})) {
      CHECK_MESSAGE(r.passed(), r.layer << " " << r.max_error);
    }
  }
  const auto bad = gradcheck_suite(0, GradsuiteOptions{1, 1e-5, 1e-2});
  CHECK_FALSE(bad.front().passed());
}
