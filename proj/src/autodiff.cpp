#include "excelformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "excelformer/kernels.hpp"

namespace excelformer {

const Tensor& Var::value() const { return tape_->value(id_); }
const Shape& Var::shape() const { return tape_->value(id_).shape(); }
Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [&](std::size_t p) { return nodes_[p].requires_grad; });
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.grad.vec().empty() && n.value.size() != 0 ? Tensor::zeros_like(n.value) : n.grad;
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.vec().empty() && n.value.size() != 0) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + lv.shape().str());
  }
  grad_slot(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.vec().empty()) continue;
    n.backward(*this, i);
  }
}

namespace ad {

namespace {

constexpr std::size_t kParallelElems = 1 << 14;

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

// Size of the leading (broadcast) part when b's shape is a suffix of a's.
std::size_t broadcast_outer(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.rank() <= a.rank();
  for (std::size_t i = 0; ok && i < b.rank(); ++i) {
    ok = b[b.rank() - 1 - i] == a[a.rank() - 1 - i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
  }
  return a.numel() / std::max<std::size_t>(b.numel(), 1);
}

template <class F>
void parallel_for(std::size_t n, F&& f) {
  const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n >= kParallelElems)
  for (long i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

template <class Fwd, class Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  const double* xp = xv.data();
  double* yp = y.data();
  parallel_for(y.size(), [&](std::size_t i) { yp[i] = fwd(xp[i]); });
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [xid, deriv](Tape& t, std::size_t self) {
    const double* xp = t.value(xid).data();
    const double* yp = t.value(self).data();
    const double* gy = t.grad_ref(self).data();
    double* gx = t.grad_slot(xid).data();
    parallel_for(t.value(self).size(), [&](std::size_t i) { gx[i] += gy[i] * deriv(xp[i], yp[i]); });
  });
}

void tile_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool acc) {
  std::vector<double> bt(k * n);
  kernels::transpose(n, k, b, bt.data());
  kernels::gemm_tile(m, n, k, a, bt.data(), c, acc);
}

void tile_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool acc) {
  std::vector<double> at(m * k);
  kernels::transpose(k, m, a, at.data());
  kernels::gemm_tile(m, n, k, at.data(), b, c, acc);
}

template <class F>
void batch_for(std::size_t batch, std::size_t work, F&& f) {
  const auto nb = static_cast<long>(batch);
#pragma omp parallel for schedule(static) if (batch > 1 && batch * work >= (1u << 15))
  for (long i = 0; i < nb; ++i) f(static_cast<std::size_t>(i));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + sa.str() + " and " + sb.str());
  };
  if (sa.rank() < 2 || sb.rank() < 2) throw mismatch();

  if (sb.rank() == 2) {
    // Shared right operand; fold any leading batch axis into the rows.
    const std::size_t k = sa.last();
    if (k != sb[0]) throw mismatch();
    const std::size_t n = sb[1];
    const std::size_t m = sa.rows();
    Shape out_shape = sa.rank() == 2 ? Shape{m, n} : Shape{sa[0], sa[1], n};
    Tensor y(out_shape);
    kernels::gemm(m, n, k, a.value().data(), b.value().data(), y.data());
    const std::size_t aid = a.id(), bid = b.id();
    return tape.record(std::move(y), {aid, bid}, [aid, bid, m, n, k](Tape& t, std::size_t self) {
      const double* gy = t.grad_ref(self).data();
      if (t.requires_grad(aid)) {
        kernels::gemm_nt(m, k, n, gy, t.value(bid).data(), t.grad_slot(aid).data(), true);
      }
      if (t.requires_grad(bid)) {
        kernels::gemm_tn(k, n, m, t.value(aid).data(), gy, t.grad_slot(bid).data(), true);
      }
    });
  }

  if (sa.rank() != 3 || sb.rank() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) throw mismatch();
  const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Tensor y(Shape{batch, m, n});
  {
    const double* ap = a.value().data();
    const double* bp = b.value().data();
    double* yp = y.data();
    batch_for(batch, m * n * k, [&](std::size_t i) {
      kernels::gemm_tile(m, n, k, ap + i * m * k, bp + i * k * n, yp + i * m * n, false);
    });
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(y), {aid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* ap = t.value(aid).data();
    const double* bp = t.value(bid).data();
    double* ga = t.requires_grad(aid) ? t.grad_slot(aid).data() : nullptr;
    double* gb = t.requires_grad(bid) ? t.grad_slot(bid).data() : nullptr;
    batch_for(batch, m * n * k, [&](std::size_t i) {
      const double* g = gy + i * m * n;
      if (ga) tile_nt(m, k, n, g, bp + i * k * n, ga + i * m * k, true);
      if (gb) tile_tn(k, n, m, ap + i * m * k, g, gb + i * k * n, true);
    });
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool rank2 = sa.rank() == 2 && sb.rank() == 2;
  const bool rank3 = sa.rank() == 3 && sb.rank() == 3 && sa[0] == sb[0];
  if ((!rank2 && !rank3) || sa.last() != sb.last()) {
    throw ShapeError("matmul_nt: incompatible shapes " + sa.str() + " and " + sb.str());
  }
  const std::size_t batch = rank3 ? sa[0] : 1;
  const std::size_t m = rank3 ? sa[1] : sa[0];
  const std::size_t n = rank3 ? sb[1] : sb[0];
  const std::size_t k = sa.last();
  Tensor y(rank3 ? Shape{batch, m, n} : Shape{m, n});
  {
    const double* ap = a.value().data();
    const double* bp = b.value().data();
    double* yp = y.data();
    batch_for(batch, m * n * k, [&](std::size_t i) {
      tile_nt(m, n, k, ap + i * m * k, bp + i * n * k, yp + i * m * n, false);
    });
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(y), {aid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* ap = t.value(aid).data();
    const double* bp = t.value(bid).data();
    double* ga = t.requires_grad(aid) ? t.grad_slot(aid).data() : nullptr;
    double* gb = t.requires_grad(bid) ? t.grad_slot(bid).data() : nullptr;
    batch_for(batch, m * n * k, [&](std::size_t i) {
      const double* g = gy + i * m * n;
      // ga[m,k] += g[m,n] b[n,k];  gb[n,k] += g^T[n,m] a[m,k]
      if (ga) kernels::gemm_tile(m, k, n, g, bp + i * n * k, ga + i * m * k, true);
      if (gb) tile_tn(n, k, m, g, ap + i * m * k, gb + i * n * k, true);
    });
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const std::size_t outer = broadcast_outer(a.shape(), b.shape(), "add");
  const std::size_t inner = b.value().size();
  Tensor y = a.value();
  {
    const double* bp = b.value().data();
    double* yp = y.data();
    parallel_for(y.size(), [&](std::size_t i) { yp[i] += bp[i % inner]; });
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(y), {aid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const std::size_t n = outer * inner;
    if (t.requires_grad(aid)) {
      double* ga = t.grad_slot(aid).data();
      parallel_for(n, [&](std::size_t i) { ga[i] += gy[i]; });
    }
    if (t.requires_grad(bid)) {
      double* gb = t.grad_slot(bid).data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) gb[j] += gy[o * inner + j];
      }
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const std::size_t outer = broadcast_outer(a.shape(), b.shape(), "mul");
  const std::size_t inner = b.value().size();
  Tensor y = a.value();
  {
    const double* bp = b.value().data();
    double* yp = y.data();
    parallel_for(y.size(), [&](std::size_t i) { yp[i] *= bp[i % inner]; });
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(y), {aid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* ap = t.value(aid).data();
    const double* bp = t.value(bid).data();
    const std::size_t n = outer * inner;
    if (t.requires_grad(aid)) {
      double* ga = t.grad_slot(aid).data();
      parallel_for(n, [&](std::size_t i) { ga[i] += gy[i] * bp[i % inner]; });
    }
    if (t.requires_grad(bid)) {
      double* gb = t.grad_slot(bid).data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) gb[j] += gy[o * inner + j] * ap[o * inner + j];
      }
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var prelu(Var x, Var slope) {
  Tape& tape = same_tape(x, slope);
  if (slope.value().size() != 1) throw ShapeError("prelu slope must be a scalar");
  const double s = slope.value()[0];
  Tensor y = x.value();
  {
    double* yp = y.data();
    parallel_for(y.size(), [&](std::size_t i) {
      if (yp[i] < 0.0) yp[i] *= s;
    });
  }
  const std::size_t xid = x.id(), sid = slope.id();
  return tape.record(std::move(y), {xid, sid}, [xid, sid](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* xp = t.value(xid).data();
    const double s = t.value(sid)[0];
    const std::size_t n = t.value(xid).size();
    if (t.requires_grad(xid)) {
      double* gx = t.grad_slot(xid).data();
      parallel_for(n, [&](std::size_t i) { gx[i] += xp[i] >= 0.0 ? gy[i] : s * gy[i]; });
    }
    if (t.requires_grad(sid)) {
      double gs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (xp[i] < 0.0) gs += gy[i] * xp[i];
      }
      t.grad_slot(sid)[0] += gs;
    }
  });
}

Var masked_softmax(Var logits, const Tensor& mask) {
  const Shape& s = logits.shape();
  const std::size_t cols = s.last();
  if (s.rank() == 0 || cols == 0) throw ShapeError("softmax of an empty or scalar tensor");
  if (mask.size() != 0) {
    if (s.rank() < 2 || s[s.rank() - 2] != cols) {
      throw ShapeError("masked_softmax: trailing extents of " + s.str() + " are not square");
    }
    if (!(mask.shape() == Shape{cols, cols})) {
      throw ShapeError("masked_softmax: mask " + mask.shape().str() + " does not fit " + s.str());
    }
  }
  const std::size_t rows = s.rows();
  Tensor y(s);
  kernels::masked_softmax(rows, cols, logits.value().data(), mask.values(), y.data());
  const std::size_t xid = logits.id();
  return logits.tape().record(std::move(y), {xid}, [xid, rows, cols](Tape& t, std::size_t self) {
    kernels::softmax_backward(rows, cols, t.value(self).data(), t.grad_ref(self).data(),
                              t.grad_slot(xid).data(), true);
  });
}

Var softmax(Var logits) { return masked_softmax(logits, Tensor()); }

Var dropout(Var x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  const Tensor& xv = x.value();
  std::vector<double> factor(xv.size());
  for (double& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor[i];
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid},
                         [xid, factor = std::move(factor)](Tape& t, std::size_t self) {
                           const double* gy = t.grad_ref(self).data();
                           double* gx = t.grad_slot(xid).data();
                           for (std::size_t i = 0; i < factor.size(); ++i) gx[i] += gy[i] * factor[i];
                         });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(shape);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [xid](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    double* gx = t.grad_slot(xid).data();
    const std::size_t n = t.value(self).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i];
  });
}

Var split_heads(Var x, std::size_t heads) {
  const Shape s = x.shape();
  if (s.rank() != 3 || heads == 0 || s[2] % heads != 0) {
    throw ShapeError("split_heads: " + s.str() + " cannot be split into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t batch = s[0], f = s[1], d = s[2], dh = d / heads;
  Tensor y(Shape{batch * heads, f, dh});
  const double* xp = x.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < f; ++i)
        std::copy_n(xp + (b * f + i) * d + h * dh, dh, y.data() + ((b * heads + h) * f + i) * dh);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    double* gx = t.grad_slot(xid).data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < f; ++i) {
          const double* src = gy + ((b * heads + h) * f + i) * dh;
          double* dst = gx + (b * f + i) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
        }
  });
}

Var merge_heads(Var x, std::size_t heads) {
  const Shape s = x.shape();
  if (s.rank() != 3 || heads == 0 || s[0] % heads != 0) {
    throw ShapeError("merge_heads: " + s.str() + " is not a multiple of " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t batch = s[0] / heads, f = s[1], dh = s[2], d = dh * heads;
  Tensor y(Shape{batch, f, d});
  const double* xp = x.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < f; ++i)
        std::copy_n(xp + ((b * heads + h) * f + i) * dh, dh, y.data() + (b * f + i) * d + h * dh);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    double* gx = t.grad_slot(xid).data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < f; ++i) {
          const double* src = gy + (b * f + i) * d + h * dh;
          double* dst = gx + ((b * heads + h) * f + i) * dh;
          for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
        }
  });
}

Var feature_affine(Var x, Var w, Var bias) {
  Tape& tape = same_tape(x, w);
  same_tape(x, bias);
  const Shape sx = x.shape(), sw = w.shape();
  if (sx.rank() != 2 || sw.rank() != 2 || sx[1] != sw[0] || !(bias.shape() == sw)) {
    throw ShapeError("feature_affine: features " + sx.str() + " do not match weights " + sw.str() +
                     " / bias " + bias.shape().str());
  }
  const std::size_t batch = sx[0], f = sx[1], d = sw[1];
  Tensor y(Shape{batch, f, d});
  const double* xp = x.value().data();
  const double* wp = w.value().data();
  const double* bp = bias.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < f; ++i) {
      const double xv = xp[b * f + i];
      double* out = y.data() + (b * f + i) * d;
      for (std::size_t k = 0; k < d; ++k) out[k] = xv * wp[i * d + k] + bp[i * d + k];
    }
  const std::size_t xid = x.id(), wid = w.id(), bid = bias.id();
  return tape.record(std::move(y), {xid, wid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* xp = t.value(xid).data();
    const double* wp = t.value(wid).data();
    double* gx = t.requires_grad(xid) ? t.grad_slot(xid).data() : nullptr;
    double* gw = t.requires_grad(wid) ? t.grad_slot(wid).data() : nullptr;
    double* gb = t.requires_grad(bid) ? t.grad_slot(bid).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < f; ++i) {
        const double* g = gy + (b * f + i) * d;
        const double xv = xp[b * f + i];
        if (gx) {
          double s = 0.0;
          for (std::size_t k = 0; k < d; ++k) s += g[k] * wp[i * d + k];
          gx[b * f + i] += s;
        }
        if (gw)
          for (std::size_t k = 0; k < d; ++k) gw[i * d + k] += g[k] * xv;
        if (gb)
          for (std::size_t k = 0; k < d; ++k) gb[i * d + k] += g[k];
      }
  });
}

Var feature_contract(Var z, Var w, Var bias) {
  Tape& tape = same_tape(z, w);
  same_tape(z, bias);
  const Shape sz = z.shape(), sw = w.shape();
  if (sz.rank() != 3 || sw.rank() != 2 || sz[1] != sw[0] || bias.value().size() != sw[1]) {
    throw ShapeError("feature_contract: tokens " + sz.str() + " do not match weights " +
                     sw.str() + " / bias " + bias.shape().str());
  }
  const std::size_t batch = sz[0], f = sz[1], d = sz[2], c = sw[1];
  Tensor y(Shape{batch, c, d});
  {
    const double* zp = z.value().data();
    const double* wp = w.value().data();
    const double* bp = bias.value().data();
    for (std::size_t b = 0; b < batch; ++b) {
      double* out = y.data() + b * c * d;
      tile_tn(c, d, f, wp, zp + b * f * d, out, false);
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t k = 0; k < d; ++k) out[j * d + k] += bp[j];
    }
  }
  const std::size_t zid = z.id(), wid = w.id(), bid = bias.id();
  return tape.record(std::move(y), {zid, wid, bid}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad_ref(self).data();
    const double* zp = t.value(zid).data();
    const double* wp = t.value(wid).data();
    double* gz = t.requires_grad(zid) ? t.grad_slot(zid).data() : nullptr;
    double* gw = t.requires_grad(wid) ? t.grad_slot(wid).data() : nullptr;
    double* gb = t.requires_grad(bid) ? t.grad_slot(bid).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* g = gy + b * c * d;
      if (gz) kernels::gemm_tile(f, d, c, wp, g, gz + b * f * d, true);
      if (gw) tile_nt(f, c, d, zp + b * f * d, g, gw, true);
      if (gb)
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t k = 0; k < d; ++k) gb[j] += g[j * d + k];
    }
  });
}

Var mix_tokens(Var z, std::span<const std::size_t> partner, const Tensor& selector) {
  const Shape sz = z.shape();
  if (sz.rank() != 3 || partner.size() != sz[0] || !(selector.shape() == Shape{sz[0], sz[2]})) {
    throw ShapeError("mix_tokens: tokens " + sz.str() + " vs selector " + selector.shape().str());
  }
  const std::size_t batch = sz[0], f = sz[1], d = sz[2];
  std::vector<std::size_t> pairs(partner.begin(), partner.end());
  for (std::size_t p : pairs) {
    if (p >= batch) throw std::out_of_range("mix_tokens: partner index out of range");
  }
  Tensor y(sz);
  const double* zp = z.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double s = selector.at(b, k);
        y.at(b, i, k) = s * zp[(b * f + i) * d + k] + (1.0 - s) * zp[(pairs[b] * f + i) * d + k];
      }
  const std::size_t zid = z.id();
  return z.tape().record(std::move(y), {zid},
                         [=, pairs = std::move(pairs), sel = selector](Tape& t, std::size_t self) {
                           const double* gy = t.grad_ref(self).data();
                           double* gz = t.grad_slot(zid).data();
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t i = 0; i < f; ++i)
                               for (std::size_t k = 0; k < d; ++k) {
                                 const double s = sel.at(b, k);
                                 const double g = gy[(b * f + i) * d + k];
                                 gz[(b * f + i) * d + k] += s * g;
                                 gz[(pairs[b] * f + i) * d + k] += (1.0 - s) * g;
                               }
                         });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t xid = x.id();
  return x.tape().record(Tensor::scalar(s), {xid}, [xid](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    for (double& v : t.grad_slot(xid).values()) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

}  // namespace ad

double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                 const GradcheckOptions& options) {
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    tape.backward(f(tape, x));
    analytic = x.grad();
  }
  if (analytic.size() > 0) analytic[0] += options.corrupt;

  const auto eval = [&](const Tensor& p) {
    Tape tape;
    return f(tape, tape.leaf(p, false)).value().item();
  };
  const double h = options.step;
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = eval(probe);
    probe[i] = point[i] - h;
    const double down = eval(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace excelformer
