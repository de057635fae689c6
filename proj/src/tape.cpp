#include "gausstr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gausstr {

namespace {

struct BroadcastPlan {
  std::vector<int64_t> out_shape;
  std::vector<int64_t> a_strides;  // 0 on broadcast dims
  std::vector<int64_t> b_strides;
  bool trivial = false;  // shapes equal, plain loops suffice
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b,
                             const char* op) {
  BroadcastPlan p;
  if (a.shape == b.shape) {
    p.out_shape = a.shape;
    p.trivial = true;
    return p;
  }
  // A single-element operand broadcasts against anything.
  if (a.numel() == 1 || b.numel() == 1) {
    const Tensor& big = a.numel() == 1 ? b : a;
    p.out_shape = big.shape;
    p.a_strides = a.numel() == 1 ? std::vector<int64_t>(big.ndim(), 0)
                                 : row_strides(big.shape);
    p.b_strides = b.numel() == 1 ? std::vector<int64_t>(big.ndim(), 0)
                                 : row_strides(big.shape);
    return p;
  }
  if (a.ndim() != b.ndim())
    throw std::invalid_argument(std::string(op) + ": rank mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  p.out_shape.resize(a.shape.size());
  for (size_t i = 0; i < a.shape.size(); ++i) {
    int64_t da = a.shape[i], db = b.shape[i];
    if (da == db)
      p.out_shape[i] = da;
    else if (da == 1 || db == 1)
      p.out_shape[i] = std::max(da, db);
    else
      throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                  a.shape_str() + " vs " + b.shape_str());
  }
  auto sa = row_strides(a.shape);
  auto sb = row_strides(b.shape);
  p.a_strides.resize(a.shape.size());
  p.b_strides.resize(b.shape.size());
  for (size_t i = 0; i < a.shape.size(); ++i) {
    p.a_strides[i] = a.shape[i] == 1 ? 0 : sa[i];
    p.b_strides[i] = b.shape[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b,
                       const BroadcastPlan& p, F&& f) {
  Tensor out(p.out_shape);
  if (p.trivial) {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  std::vector<int64_t> idx(p.out_shape.size(), 0);
  for (int64_t i = 0; i < out.numel(); ++i) {
    int64_t oa = 0, ob = 0;
    for (size_t d = 0; d < idx.size(); ++d) {
      oa += idx[d] * p.a_strides[d];
      ob += idx[d] * p.b_strides[d];
    }
    out[i] = f(a[oa], b[ob]);
    for (int d = static_cast<int>(idx.size()) - 1; d >= 0; --d) {
      if (++idx[d] < p.out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

// Sums `g` (shaped like the broadcast output) down to `target_shape`.
Tensor reduce_to_shape(const Tensor& g, const std::vector<int64_t>& target) {
  if (g.shape == target) return g;
  Tensor out(target);
  if (out.numel() == 1) {
    double s = 0;
    for (double v : g.data) s += v;
    out[0] = s;
    return out;
  }
  auto ts = row_strides(target);
  std::vector<int64_t> idx(g.shape.size(), 0);
  for (int64_t i = 0; i < g.numel(); ++i) {
    int64_t ot = 0;
    for (size_t d = 0; d < idx.size(); ++d)
      if (target[d] != 1) ot += idx[d] * ts[d];
    out[ot] += g[i];
    for (int d = static_cast<int>(idx.size()) - 1; d >= 0; --d) {
      if (++idx[d] < g.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

// (outer, n, inner) decomposition around `axis`.
struct AxisSplit {
  int64_t outer, n, inner;
};

AxisSplit split_axis(const std::vector<int64_t>& shape, int axis) {
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim)
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

// ---- Tape core --------------------------------------------------------------

const Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
    throw std::invalid_argument("invalid tape var");
  return nodes_[static_cast<size_t>(v.idx)];
}

Node& Tape::node(Var v) {
  if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
    throw std::invalid_argument("invalid tape var");
  return nodes_[static_cast<size_t>(v.idx)];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::make_node(Tensor value, std::vector<Var> inputs,
                    std::function<void(Tape&, const Node&)> backward,
                    const char* op) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.op = op;
  for (Var in : n.inputs)
    if (node(in).requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::accum_grad(Var v, const Tensor& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.shape != n.value.shape)
    throw std::invalid_argument("grad shape mismatch on op " +
                                std::string(n.op));
  for (int64_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                ln.value.shape_str());
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  nodes_[static_cast<size_t>(loss.idx)].grad[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, n);
  }
}

// ---- elementwise binaries ----------------------------------------------------

namespace {

template <class FwdF, class BwdF>
Var binary_op(Tape& t, Var a, Var b, const char* name, FwdF fwd, BwdF bwd) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  BroadcastPlan plan = plan_broadcast(va, vb, name);
  Tensor out = broadcast_apply(va, vb, plan, fwd);
  return t.make_node(
      std::move(out), {a, b},
      [a, b, plan, bwd](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        if (tp.needs_grad(a)) {
          Tensor ga = broadcast_apply(
              va, vb, plan, [&](double x, double y) { return bwd(x, y, true); });
          for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= n.grad[i];
          tp.accum_grad(a, reduce_to_shape(ga, va.shape));
        }
        if (tp.needs_grad(b)) {
          Tensor gb = broadcast_apply(
              va, vb, plan, [&](double x, double y) { return bwd(x, y, false); });
          for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= n.grad[i];
          tp.accum_grad(b, reduce_to_shape(gb, vb.shape));
        }
      },
      name);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  return binary_op(
      t, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, bool) { return 1.0; });
}

Var sub(Tape& t, Var a, Var b) {
  return binary_op(
      t, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, bool wrt_a) { return wrt_a ? 1.0 : -1.0; });
}

Var mul(Tape& t, Var a, Var b) {
  return binary_op(
      t, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, bool wrt_a) { return wrt_a ? y : x; });
}

Var divide(Tape& t, Var a, Var b) {
  for (double v : t.value(b).data)
    if (v == 0.0) throw std::domain_error("divide: zero denominator");
  return binary_op(
      t, a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, bool wrt_a) {
        return wrt_a ? 1.0 / y : -x / (y * y);
      });
}

// ---- elementwise unaries ------------------------------------------------------

namespace {

// d(op)/dx expressed with the input x and output y both available.
template <class FwdF, class BwdF>
Var unary_op(Tape& t, Var a, const char* name, FwdF fwd, BwdF bwd) {
  const Tensor& va = t.value(a);
  Tensor out(va.shape);
  for (int64_t i = 0; i < va.numel(); ++i) out[i] = fwd(va[i]);
  return t.make_node(
      std::move(out), {a},
      [a, bwd](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        Tensor g(va.shape);
        for (int64_t i = 0; i < va.numel(); ++i)
          g[i] = n.grad[i] * bwd(va[i], n.value[i]);
        tp.accum_grad(a, g);
      },
      name);
}

}  // namespace

Var exp(Tape& t, Var a) {
  return unary_op(
      t, a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(Tape& t, Var a) {
  for (double v : t.value(a).data)
    if (v <= 0.0) throw std::domain_error("log: non-positive input");
  return unary_op(
      t, a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Tape& t, Var a) {
  return unary_op(
      t, a, "sigmoid",
      [](double x) {
        // Evaluate on the non-overflowing branch.
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Tape& t, Var a) {
  return unary_op(
      t, a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var neg(Tape& t, Var a) {
  return unary_op(
      t, a, "neg", [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Var tanh(Tape& t, Var a) {
  return unary_op(
      t, a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sqrt(Tape& t, Var a) {
  for (double v : t.value(a).data)
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  return unary_op(
      t, a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var sin(Tape& t, Var a) {
  return unary_op(
      t, a, "sin", [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Var cos(Tape& t, Var a) {
  return unary_op(
      t, a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Var abs(Tape& t, Var a) {
  return unary_op(
      t, a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary_op(
      t, a, "clamp",
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var affine(Tape& t, Var a, double m, double c) {
  return unary_op(
      t, a, "affine", [m, c](double x) { return x * m + c; },
      [m](double, double) { return m; });
}

// ---- matmul -------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.ndim() != 2 || vb.ndim() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands");
  if (va.shape[1] != vb.shape[0])
    throw std::invalid_argument("matmul: inner dims differ, " + va.shape_str() +
                                " x " + vb.shape_str());
  const int64_t M = va.shape[0], K = va.shape[1], N = vb.shape[1];
  Tensor out({M, N});
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t k = 0; k < K; ++k) {
      const double aik = va[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = vb.data.data() + k * N;
      double* orow = out.data.data() + i * N;
      for (int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  }
  return t.make_node(
      std::move(out), {a, b},
      [a, b, M, K, N](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        if (tp.needs_grad(a)) {
          Tensor ga({M, K});
          for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j) {
              const double g = n.grad[i * N + j];
              if (g == 0.0) continue;
              for (int64_t k = 0; k < K; ++k)
                ga[i * K + k] += g * vb[k * N + j];
            }
          tp.accum_grad(a, ga);
        }
        if (tp.needs_grad(b)) {
          Tensor gb({K, N});
          for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
              const double aik = va[i * K + k];
              if (aik == 0.0) continue;
              for (int64_t j = 0; j < N; ++j)
                gb[k * N + j] += aik * n.grad[i * N + j];
            }
          tp.accum_grad(b, gb);
        }
      },
      "matmul");
}

Var transpose2d(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  if (va.ndim() != 2) throw std::invalid_argument("transpose2d: expects 2-D");
  const int64_t M = va.shape[0], N = va.shape[1];
  Tensor out({N, M});
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) out[j * M + i] = va[i * N + j];
  return t.make_node(
      std::move(out), {a},
      [a, M, N](Tape& tp, const Node& n) {
        Tensor g({M, N});
        for (int64_t i = 0; i < M; ++i)
          for (int64_t j = 0; j < N; ++j) g[i * N + j] = n.grad[j * M + i];
        tp.accum_grad(a, g);
      },
      "transpose2d");
}

// ---- softmax family -------------------------------------------------------------

Var softmax(Tape& t, Var a, int axis) {
  const Tensor& va = t.value(a);
  axis = normalize_axis(axis, va.ndim(), "softmax");
  AxisSplit s = split_axis(va.shape, axis);
  if (s.n < 1) throw std::invalid_argument("softmax: empty axis");
  Tensor out(va.shape);
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.n * s.inner + in;
      double mx = va[base];
      for (int64_t k = 1; k < s.n; ++k)
        mx = std::max(mx, va[base + k * s.inner]);
      double denom = 0;
      for (int64_t k = 0; k < s.n; ++k) {
        double e = std::exp(va[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        denom += e;
      }
      for (int64_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= denom;
    }
  return t.make_node(
      std::move(out), {a},
      [a, s](Tape& tp, const Node& n) {
        Tensor g(n.value.shape);
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t in = 0; in < s.inner; ++in) {
            const int64_t base = o * s.n * s.inner + in;
            double dot = 0;
            for (int64_t k = 0; k < s.n; ++k)
              dot += n.grad[base + k * s.inner] * n.value[base + k * s.inner];
            for (int64_t k = 0; k < s.n; ++k) {
              const int64_t off = base + k * s.inner;
              g[off] = n.value[off] * (n.grad[off] - dot);
            }
          }
        tp.accum_grad(a, g);
      },
      "softmax");
}

Var log_softmax(Tape& t, Var a, int axis) {
  const Tensor& va = t.value(a);
  axis = normalize_axis(axis, va.ndim(), "log_softmax");
  AxisSplit s = split_axis(va.shape, axis);
  if (s.n < 1) throw std::invalid_argument("log_softmax: empty axis");
  Tensor out(va.shape);
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.n * s.inner + in;
      double mx = va[base];
      for (int64_t k = 1; k < s.n; ++k)
        mx = std::max(mx, va[base + k * s.inner]);
      double denom = 0;
      for (int64_t k = 0; k < s.n; ++k)
        denom += std::exp(va[base + k * s.inner] - mx);
      const double lse = mx + std::log(denom);
      for (int64_t k = 0; k < s.n; ++k)
        out[base + k * s.inner] = va[base + k * s.inner] - lse;
    }
  return t.make_node(
      std::move(out), {a},
      [a, s](Tape& tp, const Node& n) {
        Tensor g(n.value.shape);
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t in = 0; in < s.inner; ++in) {
            const int64_t base = o * s.n * s.inner + in;
            double gsum = 0;
            for (int64_t k = 0; k < s.n; ++k)
              gsum += n.grad[base + k * s.inner];
            for (int64_t k = 0; k < s.n; ++k) {
              const int64_t off = base + k * s.inner;
              g[off] = n.grad[off] - std::exp(n.value[off]) * gsum;
            }
          }
        tp.accum_grad(a, g);
      },
      "log_softmax");
}

// ---- reductions -------------------------------------------------------------------

Var sum_all(Tape& t, Var a) {
  const Tensor& va = t.value(a);
  double s = 0;
  for (double v : va.data) s += v;
  return t.make_node(
      Tensor::scalar(s), {a},
      [a](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        Tensor g = Tensor::full(va.shape, n.grad[0]);
        tp.accum_grad(a, g);
      },
      "sum_all");
}

Var sum_axis(Tape& t, Var a, int axis, bool keepdim) {
  const Tensor& va = t.value(a);
  axis = normalize_axis(axis, va.ndim(), "sum_axis");
  AxisSplit s = split_axis(va.shape, axis);
  std::vector<int64_t> out_shape = va.shape;
  if (keepdim)
    out_shape[static_cast<size_t>(axis)] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t in = 0; in < s.inner; ++in) {
      double acc = 0;
      for (int64_t k = 0; k < s.n; ++k)
        acc += va[o * s.n * s.inner + k * s.inner + in];
      out[o * s.inner + in] = acc;
    }
  return t.make_node(
      std::move(out), {a},
      [a, s](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        Tensor g(va.shape);
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t in = 0; in < s.inner; ++in) {
            const double gv = n.grad[o * s.inner + in];
            for (int64_t k = 0; k < s.n; ++k)
              g[o * s.n * s.inner + k * s.inner + in] = gv;
          }
        tp.accum_grad(a, g);
      },
      "sum_axis");
}

Var mean_all(Tape& t, Var a) {
  const int64_t n = t.value(a).numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

// ---- shape ops --------------------------------------------------------------------

Var reshape(Tape& t, Var a, std::vector<int64_t> shape) {
  const Tensor& va = t.value(a);
  if (shape_numel(shape) != va.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), va.data);
  return t.make_node(
      std::move(out), {a},
      [a](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        Tensor g(va.shape, n.grad.data);
        tp.accum_grad(a, g);
      },
      "reshape");
}

Var slice(Tape& t, Var a, int axis, int64_t start, int64_t len) {
  const Tensor& va = t.value(a);
  axis = normalize_axis(axis, va.ndim(), "slice");
  const int64_t n = va.shape[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > n)
    throw std::invalid_argument("slice: range out of bounds");
  AxisSplit s = split_axis(va.shape, axis);
  std::vector<int64_t> out_shape = va.shape;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      std::copy_n(va.data.data() + (o * s.n + start + k) * s.inner, s.inner,
                  out.data.data() + (o * len + k) * s.inner);
  return t.make_node(
      std::move(out), {a},
      [a, s, start, len](Tape& tp, const Node& n) {
        const Tensor& va = tp.value(a);
        Tensor g(va.shape);
        for (int64_t o = 0; o < s.outer; ++o)
          for (int64_t k = 0; k < len; ++k) {
            const double* src = n.grad.data.data() + (o * len + k) * s.inner;
            double* dst = g.data.data() + (o * s.n + start + k) * s.inner;
            for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
          }
        tp.accum_grad(a, g);
      },
      "slice");
}

Var concat(Tape& t, const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor& first = t.value(parts[0]);
  axis = normalize_axis(axis, first.ndim(), "concat");
  std::vector<int64_t> out_shape = first.shape;
  int64_t total = 0;
  for (Var p : parts) {
    const Tensor& vp = t.value(p);
    if (vp.ndim() != first.ndim())
      throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < first.ndim(); ++d)
      if (d != axis && vp.shape[static_cast<size_t>(d)] !=
                           first.shape[static_cast<size_t>(d)])
        throw std::invalid_argument("concat: off-axis shape mismatch");
    total += vp.shape[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;
  AxisSplit s = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<int64_t> lens;
  int64_t pos = 0;
  for (Var p : parts) {
    const Tensor& vp = t.value(p);
    const int64_t len = vp.shape[static_cast<size_t>(axis)];
    lens.push_back(len);
    for (int64_t o = 0; o < s.outer; ++o)
      std::copy_n(vp.data.data() + o * len * s.inner, len * s.inner,
                  out.data.data() + (o * s.n + pos) * s.inner);
    pos += len;
  }
  return t.make_node(
      std::move(out), parts,
      [parts, s, lens](Tape& tp, const Node& n) {
        int64_t pos = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
          const int64_t len = lens[pi];
          if (tp.needs_grad(parts[pi])) {
            const Tensor& vp = tp.value(parts[pi]);
            Tensor g(vp.shape);
            for (int64_t o = 0; o < s.outer; ++o)
              std::copy_n(n.grad.data.data() + (o * s.n + pos) * s.inner,
                          len * s.inner, g.data.data() + o * len * s.inner);
            tp.accum_grad(parts[pi], g);
          }
          pos += len;
        }
      },
      "concat");
}

// ---- bilinear sampling ---------------------------------------------------------------

Var bilinear_sample(Tape& t, Var map, Var pos) {
  const Tensor& vm = t.value(map);
  const Tensor& vp = t.value(pos);
  if (vm.ndim() != 3) throw std::invalid_argument("bilinear_sample: map must be HxWxC");
  if (vp.ndim() != 2 || vp.shape[1] != 2)
    throw std::invalid_argument("bilinear_sample: pos must be Nx2");
  const int64_t H = vm.shape[0], W = vm.shape[1], C = vm.shape[2];
  const int64_t N = vp.shape[0];
  Tensor out({N, C});

  auto tap = [&](int64_t y, int64_t x, int64_t c) -> double {
    if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
    return vm[(y * W + x) * C + c];
  };

  for (int64_t i = 0; i < N; ++i) {
    const double x = vp[i * 2 + 0] * static_cast<double>(W) - 0.5;
    const double y = vp[i * 2 + 1] * static_cast<double>(H) - 0.5;
    const int64_t x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const double wx = x - static_cast<double>(x0);
    const double wy = y - static_cast<double>(y0);
    for (int64_t c = 0; c < C; ++c) {
      const double m00 = tap(y0, x0, c), m01 = tap(y0, x0 + 1, c);
      const double m10 = tap(y0 + 1, x0, c), m11 = tap(y0 + 1, x0 + 1, c);
      out[i * C + c] = (1 - wy) * ((1 - wx) * m00 + wx * m01) +
                       wy * ((1 - wx) * m10 + wx * m11);
    }
  }

  return t.make_node(
      std::move(out), {map, pos},
      [map, pos, H, W, C, N](Tape& tp, const Node& n) {
        const Tensor& vm = tp.value(map);
        const Tensor& vp = tp.value(pos);
        const bool gm = tp.needs_grad(map);
        const bool gp = tp.needs_grad(pos);
        Tensor gmap = gm ? Tensor::zeros(vm.shape) : Tensor();
        Tensor gpos = gp ? Tensor::zeros(vp.shape) : Tensor();
        auto tap = [&](int64_t y, int64_t x, int64_t c) -> double {
          if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
          return vm[(y * W + x) * C + c];
        };
        auto scatter = [&](int64_t y, int64_t x, int64_t c, double v) {
          if (x < 0 || y < 0 || x >= W || y >= H) return;
          gmap[(y * W + x) * C + c] += v;
        };
        for (int64_t i = 0; i < N; ++i) {
          const double x = vp[i * 2 + 0] * static_cast<double>(W) - 0.5;
          const double y = vp[i * 2 + 1] * static_cast<double>(H) - 0.5;
          const int64_t x0 = static_cast<int64_t>(std::floor(x));
          const int64_t y0 = static_cast<int64_t>(std::floor(y));
          const double wx = x - static_cast<double>(x0);
          const double wy = y - static_cast<double>(y0);
          double dx = 0, dy = 0;
          for (int64_t c = 0; c < C; ++c) {
            const double g = n.grad[i * C + c];
            if (g == 0.0) continue;
            if (gm) {
              scatter(y0, x0, c, g * (1 - wy) * (1 - wx));
              scatter(y0, x0 + 1, c, g * (1 - wy) * wx);
              scatter(y0 + 1, x0, c, g * wy * (1 - wx));
              scatter(y0 + 1, x0 + 1, c, g * wy * wx);
            }
            if (gp) {
              const double m00 = tap(y0, x0, c), m01 = tap(y0, x0 + 1, c);
              const double m10 = tap(y0 + 1, x0, c), m11 = tap(y0 + 1, x0 + 1, c);
              dx += g * ((1 - wy) * (m01 - m00) + wy * (m11 - m10));
              dy += g * ((1 - wx) * (m10 - m00) + wx * (m11 - m01));
            }
          }
          if (gp) {
            gpos[i * 2 + 0] = dx * static_cast<double>(W);
            gpos[i * 2 + 1] = dy * static_cast<double>(H);
          }
        }
        if (gm) tp.accum_grad(map, gmap);
        if (gp) tp.accum_grad(pos, gpos);
      },
      "bilinear_sample");
}

}  // namespace gausstr
