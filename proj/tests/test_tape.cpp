#include <cmath>

#include "doctest.h"
#include "gausstr/errors.hpp"
#include "gausstr/tape.hpp"
#include "op_suite.hpp"

using namespace gausstr;
using namespace gausstr::testing;

TEST_CASE("every op passes finite differences") {
  for (const OpCase& c : run_op_grad_suite(11, 2)) {
    INFO(c.name, " max rel err ", c.fd.max_rel);
    CHECK(c.fd.max_rel < 1e-6);
    CHECK(c.fd.checked > 0);
  }
}

TEST_CASE("backward accumulates over fan-out") {
  Tape t;
  const Var x = t.leaf(Tensor({2}, {3.0, -1.0}));
  const Var y = add(t, mul(t, x, x), x);  // x^2 + x, x used twice
  t.backward(sum_all(t, y));
  CHECK(t.grad(x).data[0] == doctest::Approx(7.0));   // 2*3 + 1
  CHECK(t.grad(x).data[1] == doctest::Approx(-1.0));  // 2*(-1) + 1
}

TEST_CASE("constants receive no gradient") {
  Tape t;
  const Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
  const Var c = t.constant(Tensor({2}, {5.0, 5.0}));
  t.backward(sum_all(t, mul(t, x, c)));
  CHECK_FALSE(t.needs_grad(c));
  CHECK(t.grad(x).data[0] == 5.0);
}

TEST_CASE("softmax rows sum to one and grads sum to zero") {
  Tape t;
  const Var x = t.leaf(Tensor({2, 3}, {0.3, -1.2, 2.0, 0.0, 0.5, -0.5}));
  const Var s = softmax(t, x, 1);
  const Tensor& sv = t.value(s);
  CHECK(sv.data[0] + sv.data[1] + sv.data[2] == doctest::Approx(1.0));
  // Pick one output element; its input-row gradient must sum to zero.
  t.backward(sum_all(t, slice(t, s, 1, 0, 1)));
  const Tensor& g = t.grad(x);
  CHECK(g.data[0] + g.data[1] + g.data[2] == doctest::Approx(0.0));
}

TEST_CASE("log_softmax matches log of softmax") {
  Tape t;
  const Tensor in({2, 4}, {1, -2, 0.5, 3, -1, -1, 2, 0});
  const Var a = log_softmax(t, t.constant(in), 1);
  const Var b = log(t, softmax(t, t.constant(in), 1));
  for (int64_t i = 0; i < 8; ++i) {
    CHECK(t.value(a).data[size_t(i)] ==
          doctest::Approx(t.value(b).data[size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("bilinear_sample hits grid cells exactly at centers") {
  // 2x2 single-channel map; u=(j+0.5)/W lands exactly on cell j.
  Tape t;
  const Var map = t.constant(Tensor({2, 2, 1}, {1, 2, 3, 4}));
  const Var pos = t.constant(Tensor({4, 2}, {0.25, 0.25, 0.75, 0.25,  //
                                             0.25, 0.75, 0.75, 0.75}));
  const Tensor& out = t.value(bilinear_sample(t, map, pos));
  CHECK(out.data[0] == 1.0);
  CHECK(out.data[1] == 2.0);
  CHECK(out.data[2] == 3.0);
  CHECK(out.data[3] == 4.0);
}

TEST_CASE("bilinear_sample zero-pads outside the image") {
  Tape t;
  const Var map = t.constant(Tensor({2, 2, 1}, {1, 2, 3, 4}));
  const Var pos = t.constant(Tensor({1, 2}, {-1.0, -1.0}));
  CHECK(t.value(bilinear_sample(t, map, pos)).data[0] == 0.0);
}

TEST_CASE("shape errors throw") {
  Tape t;
  const Var a = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Var b = t.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS(add(t, a, b));
  CHECK_THROWS(matmul(t, a, a));
  CHECK_THROWS(reshape(t, a, {4, 2}));
  CHECK_THROWS(t.backward(a));  // non-scalar loss
}

TEST_CASE("gradient accumulation is deterministic") {
  const auto run = [] {
    Tape t;
    const Var x = t.leaf(Tensor({4}, {0.1, 0.2, 0.3, 0.4}));
    Var acc = mul(t, x, x);
    for (int i = 0; i < 5; ++i) acc = add(t, acc, mul(t, x, exp(t, x)));
    t.backward(sum_all(t, acc));
    return t.grad(x);
  };
  const Tensor g1 = run(), g2 = run();
  for (size_t i = 0; i < 4; ++i) CHECK(g1.data[i] == g2.data[i]);
}
