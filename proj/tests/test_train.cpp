#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "excelformer/rotharness.hpp"
#include "excelformer/train.hpp"
#include "helpers.hpp"

using namespace excelformer;

namespace {

std::size_t count(const std::vector<Split>& s, Split which) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), which));
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.blocks = 1;
  return c;
}

TrainingData tiny_data(std::size_t n, std::uint64_t seed, Task task = Task::binary) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::linear;
  spec.n = n;
  spec.informative = 2;
  spec.noise = 1;
  spec.task = task;
  spec.seed = seed;
  TabularDataset d = gen_synthetic(spec);
  split(d, seed);
  return training_data(preprocess_pipeline(d), d);
}

}  // namespace

TEST_CASE("split proportions and determinism") {
  std::vector<double> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = static_cast<double>(i % 2);
  for (Task t : {Task::binary, Task::regression}) {
    const auto s = make_splits(y, t, 3);
    CHECK(count(s, Split::train) == 64);
    CHECK(count(s, Split::val) == 16);
    CHECK(count(s, Split::test) == 20);
    CHECK(s == make_splits(y, t, 3));
    CHECK(s != make_splits(y, t, 4));
  }
  CHECK_THROWS_AS(make_splits(std::vector<double>(24, 0.0), Task::regression, 0), DataError);
}

TEST_CASE("split proportions hold within one row for every size") {
  for (std::size_t n = 25; n < 300; n += 7) {
    const auto s = make_splits(std::vector<double>(n, 1.0), Task::regression, n);
    const double dn = static_cast<double>(n);
    CHECK(std::abs(static_cast<double>(count(s, Split::train)) - 0.64 * dn) <= 1.0);
    CHECK(std::abs(static_cast<double>(count(s, Split::val)) - 0.16 * dn) <= 1.0);
    CHECK(std::abs(static_cast<double>(count(s, Split::test)) - 0.20 * dn) <= 1.0);
  }
}

TEST_CASE("stratified split preserves class ratios") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + rng.index(200);
    std::vector<double> y(n);
    for (double& v : y) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    y[0] = y[1] = y[2] = 1.0;
    y[3] = y[4] = y[5] = 0.0;
    const auto s = make_splits(y, Task::binary, trial);
    const double positives = std::count(y.begin(), y.end(), 1.0);
    for (auto [which, share] : {std::pair{Split::train, 0.64}, {Split::val, 0.16}, {Split::test, 0.20}}) {
      double pos = 0;
      for (std::size_t i = 0; i < n; ++i) pos += s[i] == which && y[i] == 1.0;
      CHECK(std::abs(pos - share * positives) <= 1.0);
    }
  }
}

TEST_CASE("rare class falls back to an unstratified split") {
  std::vector<double> y(60, 0.0);
  y[7] = y[30] = 1.0;
  const auto s = make_splits(y, Task::binary, 1);
  CHECK(count(s, Split::train) == 38);
  CHECK(count(s, Split::test) == 12);
}

TEST_CASE("loss closed forms") {
  Tape tape;
  const std::vector<double> labels{0, 2};
  const Tensor uniform(Shape{2, 4}, 0.25);
  CHECK(std::abs(loss_value(uniform, labels, Task::multiclass) - std::log(4.0)) < 1e-14);
  const Tensor perfect(Shape{2, 4}, std::vector<double>{1, 0, 0, 0, 0, 0, 1, 0});
  CHECK(loss_value(perfect, labels, Task::multiclass) < 1e-12);
  CHECK(std::abs(loss_value(Tensor(Shape{1, 4}, 0.0), std::vector<double>{1}, Task::multiclass) +
                 std::log(kProbClamp)) < 1e-9);
  const Tensor binary(Shape{2, 1}, std::vector<double>{0.8, 0.3});
  CHECK(std::abs(loss_value(binary, std::vector<double>{1, 0}, Task::binary) -
                 -(std::log(0.8) + std::log(0.7)) / 2) < 1e-15);

  const std::vector<double> targets{1, 2, 3, 6};
  const Tensor mean(Shape{4, 1}, 3.0);
  CHECK(std::abs(loss_value(mean, targets, Task::regression) - 3.5) < 1e-15);
}

TEST_CASE("unmixed loss equals the coefficient-one mixed loss") {
  Rng rng(6);
  Tape tape;
  const Var p = tape.constant(testing::random_tensor(Shape{5, 1}, rng));
  const std::vector<double> y{0.5, -1, 2, 0, 3};
  std::vector<std::vector<TargetTerm>> terms(5);
  for (std::size_t b = 0; b < 5; ++b) terms[b] = {{b, 1.0}};
  CHECK(loss(p, y, Task::regression).value().item() ==
        mixed_loss(p, y, terms, Task::regression).value().item());

  // two-term cross-entropy equals cross-entropy against the interpolated label
  Tensor probs(Shape{1, 3}, std::vector<double>{0.2, 0.5, 0.3});
  const Var q = tape.constant(probs);
  const std::vector<double> cls{0, 2};
  const std::vector<std::vector<TargetTerm>> mix{{{0, 0.3}, {1, 0.7}}};
  const double expected = -(0.3 * std::log(0.2) + 0.7 * std::log(0.3));
  CHECK(std::abs(mixed_loss(q, cls, mix, Task::multiclass).value().item() - expected) < 1e-15);
}

TEST_CASE("AdamW single-step closed forms") {
  Tensor w(Shape{3}, std::vector<double>{1, -2, 3});
  {
    AdamW opt({1e-3, 0.0});
    Tensor p = w;
    for (int i = 0; i < 5; ++i) opt.step({&p}, {Tensor(Shape{3})});
    CHECK(p.vec() == w.vec());
  }
  {
    AdamW opt({1e-3, 0.0});
    Tensor p = w;
    opt.step({&p}, {Tensor(Shape{3}, std::vector<double>{0.5, -4, 1e-3})});
    CHECK(std::abs(p[0] - (1 - 1e-3)) < 1e-10);
    CHECK(std::abs(p[1] - (-2 + 1e-3)) < 1e-10);
    CHECK(std::abs(p[2] - (3 - 1e-3 * 1e-3 / (1e-3 + 1e-8))) < 1e-12);
    CHECK(opt.steps() == 1);
    CHECK(opt.first_moment()[0].shape() == p.shape());
  }
  {
    AdamW opt({1e-2, 0.1});
    Tensor p = w;
    for (int i = 0; i < 3; ++i) opt.step({&p}, {Tensor(Shape{3})});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - w[i] * std::pow(1 - 1e-3, 3)) < 1e-15);
  }
}

TEST_CASE("early stopping patience") {
  EarlyStopper s(1);
  CHECK(s.observe(0.5));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.observe(0.5));
  CHECK(s.should_stop());

  EarlyStopper t(3);
  for (double m : {0.1, 0.4, 0.3, 0.45, 0.2}) t.observe(m);
  CHECK(t.best() == 0.45);
  CHECK(t.best_index() == 3);
}

TEST_CASE("target scaler round trip") {
  const std::vector<double> y{1, 2, 3, 10};
  const TargetScaler s = TargetScaler::fit(y, Task::regression);
  for (double v : y) CHECK(std::abs(s.inverse(s.forward(v)) - v) < 1e-14);
  const TargetScaler c = TargetScaler::fit(y, Task::binary);
  CHECK(c.mean == 0.0);
  CHECK(c.scale == 1.0);
}

TEST_CASE("fit logs, best-val restore and determinism") {
  const TrainingData data = tiny_data(120, 1);
  TrainConfig tc;
  tc.max_epochs = 6;
  tc.lr = 1e-3;
  tc.batch_size = 32;
  tc.mix.scheme = MixScheme::both;
  std::vector<EpochLog> streamed;
  const FitResult a = fit(data, tiny_model(), tc, [&](const EpochLog& e) { streamed.push_back(e); });
  const FitResult b = fit(data, tiny_model(), tc);
  REQUIRE(a.log.size() == b.log.size());
  CHECK(streamed.size() == a.log.size());
  double best = -1e300;
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].epoch == i);
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_metric == b.log[i].val_metric);
    best = std::max(best, a.log[i].val_metric);
  }
  CHECK(a.best_val_metric == best);

  std::vector<std::size_t> val;
  std::vector<double> val_labels;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.splits[i] == Split::val) {
      val.push_back(i);
      val_labels.push_back(data.labels[i]);
    }
  }
  const Tensor pred = a.trained.predict(take_rows(data.features, val));
  CHECK(task_metric(pred, val_labels, Task::binary) == best);
}

TEST_CASE("patience one stops after one stale epoch") {
  TrainingData data = tiny_data(80, 2);
  // constant features give a constant validation metric
  data.features.fill(0.0);
  TrainConfig tc;
  tc.patience = 1;
  tc.max_epochs = 50;
  const FitResult r = fit(data, tiny_model(), tc);
  CHECK(r.log.size() == 2);
  CHECK(r.best_epoch == 0);
}

TEST_CASE("training never reads test rows") {
  const TrainingData clean = tiny_data(150, 3);
  TrainingData poisoned = clean;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < clean.labels.size(); ++i) {
    if (clean.splits[i] != Split::test) continue;
    for (std::size_t j = 0; j < clean.features.dim(1); ++j) poisoned.features.at(i, j) = nan;
    poisoned.labels[i] = nan;
  }
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.mix.scheme = MixScheme::feat;
  const FitResult a = fit(clean, tiny_model(), tc), b = fit(poisoned, tiny_model(), tc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_metric == b.log[i].val_metric);
  }
}

TEST_CASE("non-finite loss halts with a diagnostic") {
  TrainingData data = tiny_data(100, 4);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.splits[i] == Split::train) data.features.at(i, 0) = std::numeric_limits<double>::infinity();
  }
  TrainConfig tc;
  tc.max_epochs = 2;
  try {
    fit(data, tiny_model(), tc);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("regression and multiclass fits run end to end") {
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.mix.scheme = MixScheme::hid;
  const TrainingData reg = tiny_data(100, 5, Task::regression);
  const FitResult r = fit(reg, tiny_model(), tc);
  CHECK(r.best_val_metric <= 0.0);
  ModelConfig mc = tiny_model();
  mc.task = Task::multiclass;
  mc.classes = 3;
  const TrainingData multi = tiny_data(100, 6, Task::multiclass);
  const FitResult m = fit(multi, mc, tc);
  CHECK(m.best_val_metric >= 0.0);
  CHECK(m.best_val_metric <= 1.0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.lr == 1e-4);
  CHECK(c.weight_decay == 0.0);
  CHECK(c.patience == 32);
  c.patience = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.lr = 0;
  CHECK_THROWS(c.validate());
}
