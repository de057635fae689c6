#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gausstr/tensor.hpp"

namespace gausstr {

class Tape;

// Handle to a node on a tape. Plain index; tapes own all storage.
struct Var {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<Var> inputs;
  std::function<void(Tape&, const Node&)> backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

// Reverse-mode autodiff over dense tensors. Nodes are appended in
// topological order; backward() visits them exactly once in reverse.
// Gradient accumulation order is fixed by node index, so runs are
// bit-deterministic.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Custom op entry point. `backward` must add into the input nodes' grads
  // via accum_grad; it runs only when some input requires a gradient.
  Var make_node(Tensor value, std::vector<Var> inputs,
                std::function<void(Tape&, const Node&)> backward,
                const char* op);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool needs_grad(Var v) const { return node(v).requires_grad; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and sweeps the tape once in reverse.
  // `loss` must be scalar (numel == 1).
  void backward(Var loss);

  void accum_grad(Var v, const Tensor& g);

  const Node& node(Var v) const;
  Node& node(Var v);

 private:
  std::vector<Node> nodes_;
};

// ---- op builders -----------------------------------------------------------

// Elementwise binaries. Shapes must match, or broadcast: either operand may
// be a single element, or both have equal rank with singleton dims expanding.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var divide(Tape& t, Var a, Var b);

// Elementwise unaries.
Var exp(Tape& t, Var a);
Var log(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var neg(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var sqrt(Tape& t, Var a);
Var sin(Tape& t, Var a);
Var cos(Tape& t, Var a);
Var abs(Tape& t, Var a);
Var clamp(Tape& t, Var a, double lo, double hi);

// y = a * m + c, with scalar constants baked into the node.
Var affine(Tape& t, Var a, double m, double c);
inline Var scale(Tape& t, Var a, double m) { return affine(t, a, m, 0.0); }
inline Var offset(Tape& t, Var a, double c) { return affine(t, a, 1.0, c); }

Var matmul(Tape& t, Var a, Var b);
Var transpose2d(Tape& t, Var a);

Var softmax(Tape& t, Var a, int axis);
Var log_softmax(Tape& t, Var a, int axis);

Var sum_all(Tape& t, Var a);                            // -> shape {1}
Var sum_axis(Tape& t, Var a, int axis, bool keepdim);
Var mean_all(Tape& t, Var a);

Var reshape(Tape& t, Var a, std::vector<int64_t> shape);
Var slice(Tape& t, Var a, int axis, int64_t start, int64_t len);
Var concat(Tape& t, const std::vector<Var>& parts, int axis);

// Samples `map` [H x W x C] at N normalized positions [N x 2] (u,v in
// [0,1]^2; u maps to x = u*W - 0.5). Out-of-image taps read zero.
// Differentiable in both the map and the positions.
Var bilinear_sample(Tape& t, Var map, Var pos);

}  // namespace gausstr
