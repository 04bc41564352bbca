#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Tape records every primitive in execution order; node ids therefore form
// a topological order and `backward` walks them in reverse. Tapes are cheap,
// single-use, and rebuilt for every forward pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "excelformer/rng.hpp"
#include "excelformer/tensor.hpp"

namespace excelformer {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const;
  /// Gradient after backward(); zeros if the node was not reached.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Propagates gradient from node `self` into its parents' grad slots.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Adds a computed node. `fn` runs during backward only when the node
  /// received gradient and at least one parent requires it.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.vec().empty(); }
  /// Gradient of node `id`; zeros when nothing flowed there.
  Tensor grad(std::size_t id) const;
  /// Mutable gradient slot, allocated (zero) on first use.
  Tensor& grad_slot(std::size_t id);
  const Tensor& grad_ref(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

namespace ad {

/// [m,k]x[k,n], [B,m,k]x[B,k,n] (batched), or [B,m,k]x[k,n] (shared right operand).
Var matmul(Var a, Var b);
/// Batched a * b^T: [B,m,k]x[B,n,k] -> [B,m,n]; rank-2 operands also accepted.
Var matmul_nt(Var a, Var b);

/// Elementwise with suffix broadcasting: b's shape must equal a's shape or a
/// trailing part of it (bias-style), or b is a scalar.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
/// x if x >= 0 else slope * x, with a learnable scalar slope.
Var prelu(Var x, Var slope);

/// Softmax along the last axis of (logits + mask). `mask` is empty or f x f
/// where the two trailing extents of `logits` are both f.
Var masked_softmax(Var logits, const Tensor& mask);
Var softmax(Var logits);

/// Inverted dropout. Identity when !training or rate == 0.
Var dropout(Var x, double rate, Rng& rng, bool training);

Var reshape(Var x, Shape shape);
/// [B,f,d] -> [B*h,f,d/h]
Var split_heads(Var x, std::size_t heads);
/// [B*h,f,dh] -> [B,f,h*dh]
Var merge_heads(Var x, std::size_t heads);

/// Per-feature affine lift: out[b,i,:] = x[b,i] * w[i,:] + bias[i,:].
Var feature_affine(Var x, Var w, Var bias);
/// Contraction over the feature axis: out[b,c,:] = sum_i w[i,c] * z[b,i,:] + bias[c].
Var feature_contract(Var z, Var w, Var bias);
/// Hid-Mix on tokens: out[b,i,k] = s[b,k] z[b,i,k] + (1 - s[b,k]) z[partner[b],i,k].
Var mix_tokens(Var z, std::span<const std::size_t> partner, const Tensor& selector);

Var sum(Var x);
Var mean(Var x);

}  // namespace ad

struct GradcheckOptions {
  double step = 1e-5;
  /// Test hook: added to the first analytic gradient entry.
  double corrupt = 0.0;
};

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar function of one tensor.
double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                 const GradcheckOptions& options = {});

}  // namespace excelformer
