#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "excelformer/metrics.hpp"
#include "excelformer/rotharness.hpp"
#include "helpers.hpp"

using namespace excelformer;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
  return m;
}

Tensor transpose(const Tensor& t) {
  Tensor out(Shape{t.dim(1), t.dim(0)});
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out.at(j, i) = t.at(i, j);
  return out;
}

}  // namespace

TEST_CASE("random rotations are orthogonal with unit determinant") {
  for (std::size_t f : {2, 3, 8, 17}) {
    const Eigen::MatrixXd q = to_eigen(random_orthogonal(f, f));
    const Eigen::MatrixXd e = q.transpose() * q - Eigen::MatrixXd::Identity(f, f);
    CHECK(e.cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(std::abs(q.determinant()) - 1.0) < 1e-8);
  }
  CHECK(random_orthogonal(5, 1).vec() == random_orthogonal(5, 1).vec());
  CHECK((to_eigen(random_orthogonal(5, 1)) - to_eigen(random_orthogonal(5, 2))).norm() > 0.1);
  CHECK_THROWS(random_orthogonal(1, 0));
}

TEST_CASE("rotation is an invertible isometry") {
  Rng rng(1);
  const Tensor x = testing::random_tensor(Shape{30, 6}, rng);
  const Tensor q = random_orthogonal(6, 9);
  const Tensor r = rotate(x, q);
  CHECK(max_abs_diff(rotate(r, transpose(q)), x) < 1e-10);
  const auto dist = [](const Tensor& m, std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t j = 0; j < m.dim(1); ++j) s += (m.at(a, j) - m.at(b, j)) * (m.at(a, j) - m.at(b, j));
    return std::sqrt(s);
  };
  for (std::size_t a = 0; a < 30; ++a)
    for (std::size_t b = a + 1; b < 30; ++b) CHECK(std::abs(dist(x, a, b) - dist(r, a, b)) < 1e-8);
  CHECK_THROWS_AS(rotate(x, random_orthogonal(5, 0)), ShapeError);
}

TEST_CASE("noise injection doubles the feature count with uninformative columns") {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::linear;
  spec.n = 2000;
  spec.informative = 3;
  spec.noise = 0;
  const TabularDataset d = gen_synthetic(spec);
  const NoisyDataset noisy = add_noise_features(d, 7);
  REQUIRE(noisy.data.features() == 6);
  for (std::size_t j = 0; j < 3; ++j) CHECK(noisy.data.columns[j].numeric == d.columns[j].numeric);
  CHECK(noisy.data.labels == d.labels);
  std::vector<double> col;
  const ImportanceVector imp = [&] {
    Tensor x(Shape{d.rows(), 6});
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = noisy.data.columns[j].numeric[i];
    return importance(x, d.labels, d.task);
  }();
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(noisy.injected[j] == (j >= 3));
    if (noisy.injected[j]) CHECK(imp[j] < 0.1);
  }
}

TEST_CASE("synthetic generators") {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::xor_;
  spec.n = 2000;
  const TabularDataset x = gen_synthetic(spec);
  CHECK(x.features() == 6);
  CHECK(x.columns[0].name == "x0");
  CHECK(x.columns[5].name == "noise_3");
  // the best linear scorer on xor is no better than chance
  std::vector<int> y(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) y[i] = static_cast<int>(x.labels[i]);
  for (auto [a, b] : {std::pair{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {1.0, -1.0}}) {
    std::vector<double> s(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) s[i] = a * x.columns[0].numeric[i] + b * x.columns[1].numeric[i];
    const double auc = metrics::auc(s, y);
    CHECK(std::max(auc, 1 - auc) < 0.6);
  }
  CHECK(gen_synthetic(spec).labels == x.labels);

  spec.kind = SyntheticKind::linear;
  spec.informative = 3;
  spec.noise = 3;
  const TabularDataset lin = gen_synthetic(spec);
  Tensor feats(Shape{lin.rows(), 6});
  for (std::size_t i = 0; i < lin.rows(); ++i)
    for (std::size_t j = 0; j < 6; ++j) feats.at(i, j) = lin.columns[j].numeric[i];
  const ImportanceVector imp = importance(feats, lin.labels, lin.task);
  const double weakest_signal = std::min({imp[0], imp[1], imp[2]});
  CHECK(weakest_signal > std::max({imp[3], imp[4], imp[5]}));

  spec.kind = SyntheticKind::piecewise;
  spec.task = Task::multiclass;
  const TabularDataset pw = gen_synthetic(spec);
  CHECK(pw.classes == 3);
  spec.task = Task::regression;
  CHECK(gen_synthetic(spec).classes == 1);
  spec.n = 49;
  CHECK_THROWS(gen_synthetic(spec));
  CHECK(parse_synthetic_kind("xor") == SyntheticKind::xor_);
  CHECK_THROWS(parse_synthetic_kind("spiral"));
}

TEST_CASE("rotation grid counting and the identity rotation") {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::xor_;
  spec.n = 80;
  spec.noise = 1;
  const TabularDataset d = gen_synthetic(spec);
  RotationExperiment exp;
  exp.seeds = 3;
  exp.model.d = 8;
  exp.model.heads = 2;
  exp.model.blocks = 1;
  exp.train.max_epochs = 2;
  const auto records = run_rotation_experiment(d, exp);
  CHECK(records.size() == 12);
  const std::string csv = rotation_csv(records);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(csv.rfind("variant,rotated,seed,metric,epochs\n", 0) == 0);
  CHECK(rotation_summary_json(records, Task::binary).find("\"vanilla\"") != std::string::npos);
  const auto again = run_rotation_experiment(d, exp);
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(records[i].metric == again[i].metric);

  exp.identity_rotation = true;
  exp.seeds = 2;
  const auto same = run_rotation_experiment(d, exp);
  for (std::size_t i = 0; i < same.size(); i += 2) {
    CHECK_FALSE(same[i].rotated);
    CHECK(same[i + 1].rotated);
    CHECK(same[i].metric == same[i + 1].metric);
  }
}
