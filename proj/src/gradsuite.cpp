#include "excelformer/gradsuite.hpp"

#include <algorithm>
#include <functional>

#include "excelformer/autodiff.hpp"
#include "excelformer/model.hpp"
#include "excelformer/train.hpp"

namespace excelformer {

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Tensor random_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

// Scalar probe sum(out * r) with a fixed random r, so no direction is degenerate.
Var probe(Var out, Rng& rng) {
  Tensor r = random_tensor(out.shape(), 1.0, rng);
  return ad::sum(ad::mul(out, out.tape().constant(std::move(r))));
}

// Differentiates `build` with respect to each tensor in turn, holding the rest constant.
void check_each(GradcheckReport& report, const std::vector<Tensor>& tensors, const Builder& build,
                const GradcheckOptions& options) {
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const double err = gradcheck(
        [&](Tape& tape, Var v) {
          std::vector<Var> vars;
          for (std::size_t i = 0; i < tensors.size(); ++i) {
            vars.push_back(i == k ? v : tape.constant(tensors[i]));
          }
          return build(tape, vars);
        },
        tensors[k], options);
    report.max_error = std::max(report.max_error, err);
    ++report.tensors;
  }
}

constexpr std::size_t kBatch = 4, kFeatures = 4, kWidth = 8, kHeads = 2;

ImportanceVector random_importance(Rng& rng) {
  ImportanceVector imp;
  for (std::size_t i = 0; i < kFeatures; ++i) imp.values.push_back(rng.uniform());
  imp.values[kFeatures - 1] = imp.values[0];  // keep one tie in play
  return imp;
}

}  // namespace

std::vector<GradcheckReport> gradcheck_suite(std::uint64_t seed, const GradsuiteOptions& options) {
  const GradcheckOptions gc{options.step, options.corrupt};
  Rng rng(seed);
  GradcheckReport emb{"embedding"}, spa{"spa"}, glu{"glu"}, head{"head"}, lossr{"loss"}, model{"model"};
  const double wd = std::sqrt(he_variance(kWidth));

  for (std::size_t p = 0; p < options.points; ++p) {
    Rng point = rng.fork(p);
    Rng probe_rng = point.fork(99);

    {
      std::vector<Tensor> t{random_tensor(Shape{kBatch, kFeatures}, 1.0, point)};
      for (int i = 0; i < 4; ++i) t.push_back(random_tensor(Shape{kFeatures, kWidth}, 1.0, point));
      const Rng pr = probe_rng;
      check_each(emb, t, [&](Tape&, const std::vector<Var>& v) {
        Rng r = pr;
        return probe(embed(v[0], EmbeddingParams<Var>{v[1], v[2], v[3], v[4]}), r);
      }, gc);
    }
    {
      const Tensor mask = build_mask(random_importance(point));
      std::vector<Tensor> t{random_tensor(Shape{kBatch, kFeatures, kWidth}, 1.0, point)};
      for (int i = 0; i < 4; ++i) {
        t.push_back(random_tensor(Shape{kWidth, kWidth}, wd, point));
        t.push_back(random_tensor(Shape{kWidth}, 0.1, point));
      }
      const Rng pr = probe_rng;
      check_each(spa, t, [&](Tape&, const std::vector<Var>& v) {
        Rng r = pr, unused(0);
        const SpaParams<Var> sp{{v[1], v[2]}, {v[3], v[4]}, {v[5], v[6]}, {v[7], v[8]}};
        return probe(spa_forward(v[0], mask, sp, kHeads, 0.3, unused, false), r);
      }, gc);
    }
    {
      std::vector<Tensor> t{random_tensor(Shape{kBatch, kFeatures, kWidth}, 1.0, point)};
      for (int i = 0; i < 2; ++i) {
        t.push_back(random_tensor(Shape{kWidth, kWidth}, wd, point));
        t.push_back(random_tensor(Shape{kWidth}, 0.1, point));
      }
      const Rng pr = probe_rng;
      check_each(glu, t, [&](Tape&, const std::vector<Var>& v) {
        Rng r = pr;
        return probe(glu_forward(v[0], GluParams<Var>{{v[1], v[2]}, {v[3], v[4]}}), r);
      }, gc);
    }
    for (Task task : {Task::binary, Task::multiclass, Task::regression}) {
      const std::size_t c = task == Task::multiclass ? 3 : 1;
      std::vector<Tensor> t{random_tensor(Shape{kBatch, kFeatures, kWidth}, 1.0, point),
                            random_tensor(Shape{kFeatures, c}, 0.7, point),
                            random_tensor(Shape{c}, 0.1, point),
                            random_tensor(Shape{kWidth, 1}, wd, point),
                            random_tensor(Shape{1}, 0.1, point),
                            Tensor(Shape{1}, 0.25 + 0.1 * point.uniform())};
      const Rng pr = probe_rng;
      check_each(head, t, [&](Tape&, const std::vector<Var>& v) {
        Rng r = pr;
        return probe(head_forward(v[0], HeadParams<Var>{v[1], v[2], v[3], v[4], v[5]}, task), r);
      }, gc);

      // loss on top of the head output, with mixed two-term targets
      std::vector<double> labels(kBatch);
      for (std::size_t b = 0; b < kBatch; ++b) {
        labels[b] = task == Task::regression ? point.normal() : static_cast<double>(point.index(c == 1 ? 2 : c));
      }
      std::vector<std::vector<TargetTerm>> targets(kBatch);
      for (std::size_t b = 0; b < kBatch; ++b) {
        const double w = point.uniform();
        targets[b] = {{b, w}, {(b + 1) % kBatch, 1.0 - w}};
      }
      Tensor logits = random_tensor(Shape{kBatch, c}, 1.0, point);
      check_each(lossr, {logits}, [&](Tape&, const std::vector<Var>& v) {
        Var out = task == Task::binary ? ad::sigmoid(v[0])
                  : task == Task::multiclass ? ad::softmax(v[0]) : v[0];
        return mixed_loss(out, labels, targets, task);
      }, gc);
    }
    {
      ModelConfig mc;
      mc.blocks = 3;
      mc.d = kWidth;
      mc.heads = kHeads;
      Rng init = point.fork(1);
      const ExcelFormer net(mc, random_importance(point), init);
      const Tensor x = random_tensor(Shape{kBatch, kFeatures}, 1.0, point);
      std::vector<double> labels{0.0, 1.0, 1.0, 0.0};
      std::vector<Tensor> t;
      net.params().visit([&](const std::string&, const Tensor& w) { t.push_back(w); });
      check_each(model, t, [&](Tape& tape, const std::vector<Var>& v) {
        std::size_t i = 0;
        const BoundParams bp = net.params().map<Var>([&](const Tensor&) { return v[i++]; });
        Rng unused(0);
        const Var z0 = embed(tape.constant(x), bp.embedding);
        return loss(net.forward_tokens(tape, z0, bp, unused, false).output, labels, Task::binary);
      }, gc);
    }
  }
  return {emb, spa, glu, head, lossr, model};
}

}  // namespace excelformer
