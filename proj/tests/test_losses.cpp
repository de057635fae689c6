#include <cmath>
#include <vector>

#include "doctest.h"
#include "gausstr/errors.hpp"
#include "gausstr/losses.hpp"
#include "gausstr/rng.hpp"
#include "grad_check.hpp"

using namespace gausstr;
using namespace gausstr::testing;

namespace {

Tensor col(std::vector<double> v) {
  Tensor t = Tensor::zeros({int64_t(v.size()), 1});
  t.data = std::move(v);
  return t;
}

Tensor rows(int64_t p, int64_t c, const std::vector<double>& v) {
  Tensor t = Tensor::zeros({p, c});
  t.data = v;
  return t;
}

double scalar(Tape& t, Var v) { return t.value(v).data[0]; }

}  // namespace

TEST_CASE("silog is invariant to a global depth scale") {
  Rng rng(3);
  const int64_t p = 24;
  Tensor target = Tensor::zeros({p, 1});
  Tensor mask = Tensor::zeros({p, 1});
  Tensor pred = Tensor::zeros({p, 1});
  for (int64_t i = 0; i < p; ++i) {
    target.data[size_t(i)] = rng.uniform(0.5, 6.0);
    pred.data[size_t(i)] = rng.uniform(0.5, 6.0);
    mask.data[size_t(i)] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  }
  mask.data[0] = 1.0;

  Tape t0;
  const double base = scalar(t0, depth_loss(t0, t0.leaf(pred), target, mask,
                                            0.0).silog);
  for (double c : {0.1, 0.37, 2.0, 9.7}) {
    Tensor scaled = pred;
    for (double& v : scaled.data) v *= c;
    Tape t;
    const double got =
        scalar(t, depth_loss(t, t.leaf(scaled), target, mask, 0.0).silog);
    CHECK(std::abs(got - base) < 1e-12);
  }
}

TEST_CASE("depth loss reproduces the worked two-pixel example") {
  Tape t;
  const DepthLossVars d =
      depth_loss(t, t.leaf(col({2.0, 4.0})), col({3.0, 3.0}),
                 col({1.0, 1.0}), 0.2);
  CHECK(std::abs(scalar(t, d.total) - 0.3201) < 1e-4);
  CHECK(scalar(t, d.l1) == 1.0);
  CHECK(scalar(t, d.total) ==
        scalar(t, d.silog) + 0.2 * scalar(t, d.l1));

  // Closed form: d_i = log(pred_i / 3).
  const double d1 = std::log(2.0 / 3.0), d2 = std::log(4.0 / 3.0);
  const double silog =
      0.5 * (d1 * d1 + d2 * d2) - 0.25 * (d1 + d2) * (d1 + d2);
  CHECK(scalar(t, d.silog) == doctest::Approx(silog).epsilon(1e-12));
}

TEST_CASE("cosine loss hits its anchor values") {
  const Tensor mask = col({1.0, 1.0});

  Tape t0;  // identical rows -> 0
  const Tensor a = rows(2, 3, {1, 2, 2, -3, 0, 4});
  CHECK(std::abs(scalar(t0, cosine_feat_loss(t0, t0.leaf(a), a, mask))) <
        1e-9);

  Tape t1;  // orthogonal rows -> 1
  const Tensor p1 = rows(2, 3, {1, 0, 0, 0, 2, 0});
  const Tensor q1 = rows(2, 3, {0, 3, 0, 0, 0, -1});
  CHECK(scalar(t1, cosine_feat_loss(t1, t1.leaf(p1), q1, mask)) == 1.0);

  Tape t2;  // opposite rows -> 2
  Tensor neg = a;
  for (double& v : neg.data) v = -v;
  CHECK(scalar(t2, cosine_feat_loss(t2, t2.leaf(a), neg, mask)) ==
        doctest::Approx(2.0).epsilon(1e-9));

  Tape t3;  // zero-norm prediction row scores exactly 1
  const Tensor z = rows(1, 3, {0, 0, 0});
  const Tensor u = rows(1, 3, {0.6, 0.8, 0.0});
  CHECK(scalar(t3, cosine_feat_loss(t3, t3.leaf(z), u, col({1.0}))) == 1.0);
}

TEST_CASE("cosine loss ignores positive per-row scaling of the target") {
  Rng rng(11);
  const int64_t p = 10, c = 5;
  Tensor pred = Tensor::zeros({p, c});
  Tensor target = Tensor::zeros({p, c});
  Tensor mask = Tensor::zeros({p, 1});
  for (double& v : pred.data) v = rng.normal();
  for (double& v : target.data) v = rng.normal();
  for (int64_t i = 0; i < p; ++i) mask.data[size_t(i)] = i % 3 ? 1.0 : 0.0;

  Tape ta;
  const double base = scalar(ta, cosine_feat_loss(ta, ta.leaf(pred), target, mask));
  Tensor scaled = target;
  for (int64_t i = 0; i < p; ++i) {
    const double s = rng.uniform(0.2, 5.0);
    for (int64_t k = 0; k < c; ++k) scaled.data[size_t(i * c + k)] *= s;
  }
  Tape tb;
  const double got =
      scalar(tb, cosine_feat_loss(tb, tb.leaf(pred), scaled, mask));
  CHECK(std::abs(got - base) < 1e-9);
}

TEST_CASE("cross entropy hits ln n_c on uniform logits") {
  for (int nc : {2, 5, 7}) {
    Tensor logits = Tensor::full({6, nc}, 0.37);
    std::vector<int> labels = {0, 1, nc - 1, 0, nc / 2, 1};
    Tape t;
    const double got =
        scalar(t, ce_loss(t, t.leaf(logits), labels, col({1, 1, 1, 1, 1, 1})));
    CHECK(std::abs(got - std::log(double(nc))) < 1e-9);
  }
}

TEST_CASE("cross entropy skips masked and ignored rows") {
  Tensor logits = Tensor::zeros({3, 2});
  logits.data = {0.0, 0.0, 5.0, -5.0, 9.0, 9.0};
  Tape t;
  // Row 1 is masked out, row 2 ignored: only the uniform row remains.
  const double got =
      scalar(t, ce_loss(t, t.leaf(logits), {0, 1, 255}, col({1, 0, 1})));
  CHECK(got == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tape t2;  // nothing selected -> exact zero
  CHECK(scalar(t2, ce_loss(t2, t2.leaf(logits), {255, 0, 1},
                           col({1, 0, 0}))) == 0.0);

  Tape t3;
  CHECK_THROWS_AS(ce_loss(t3, t3.leaf(logits), {0, 2, 0}, col({1, 1, 1})),
                  DataError);
}

TEST_CASE("masked-out losses are constant zero with zero gradients") {
  const Tensor pred = rows(3, 2, {1, 2, 3, 4, 5, 6});
  const Tensor target = rows(3, 2, {0, 1, 1, 0, 1, 1});
  const Tensor zmask = col({0, 0, 0});

  Tape t;
  Var leaf = t.leaf(pred);
  Var f = cosine_feat_loss(t, leaf, target, zmask);
  CHECK(scalar(t, f) == 0.0);
  t.backward(f);
  for (double g : t.grad(leaf).data) CHECK(g == 0.0);

  Tape t2;
  Var dl = t2.leaf(col({2, 3, 4}));
  const DepthLossVars d = depth_loss(t2, dl, col({1, 2, 3}), col({0, 0, 0}), 0.5);
  CHECK(scalar(t2, d.total) == 0.0);
  CHECK(scalar(t2, d.silog) == 0.0);
  CHECK(scalar(t2, d.l1) == 0.0);
  t2.backward(d.total);
  for (double g : t2.grad(dl).data) CHECK(g == 0.0);
}

TEST_CASE("depth loss rejects non-positive masked targets") {
  Tape t;
  CHECK_THROWS_AS(depth_loss(t, t.leaf(col({1, 1})), col({2, 0}),
                             col({1, 1}), 0.2),
                  DataError);
  // The same zero is fine once masked out.
  Tape t2;
  depth_loss(t2, t2.leaf(col({1, 1})), col({2, 0}), col({1, 0}), 0.2);
}

TEST_CASE("loss gradients match finite differences end to end") {
  Rng rng(29);
  const int64_t p = 8, c = 4, nc = 3;

  Tensor pred = Tensor::zeros({p, c});
  Tensor target = Tensor::zeros({p, c});
  Tensor mask = Tensor::zeros({p, 1});
  for (double& v : pred.data) v = rng.normal();
  for (double& v : target.data) v = rng.normal();
  for (int64_t i = 0; i < p; ++i) mask.data[size_t(i)] = i % 4 ? 1.0 : 0.0;

  {
    const auto eval = [&]() {
      Tape t;
      return scalar(t, cosine_feat_loss(t, t.leaf(pred), target, mask));
    };
    Tape t;
    Var leaf = t.leaf(pred);
    t.backward(cosine_feat_loss(t, leaf, target, mask));
    const FdResult r = fd_check({&pred}, {t.grad(leaf)}, eval);
    CHECK(r.max_rel < 1e-6);
  }

  Tensor dpred = Tensor::zeros({p, 1});
  Tensor dtarget = Tensor::zeros({p, 1});
  for (int64_t i = 0; i < p; ++i) {
    dpred.data[size_t(i)] = rng.uniform(0.5, 4.0);
    dtarget.data[size_t(i)] = rng.uniform(0.5, 4.0);
    // keep |pred - target| off the l1 kink under the FD step
    if (std::abs(dpred.data[size_t(i)] - dtarget.data[size_t(i)]) < 0.05) {
      dpred.data[size_t(i)] += 0.1;
    }
  }
  {
    const auto eval = [&]() {
      Tape t;
      return scalar(t, depth_loss(t, t.leaf(dpred), dtarget, mask, 0.3).total);
    };
    Tape t;
    Var leaf = t.leaf(dpred);
    t.backward(depth_loss(t, leaf, dtarget, mask, 0.3).total);
    const FdResult r = fd_check({&dpred}, {t.grad(leaf)}, eval);
    CHECK(r.max_rel < 1e-6);
  }

  Tensor logits = Tensor::zeros({p, nc});
  for (double& v : logits.data) v = rng.normal();
  std::vector<int> labels;
  for (int64_t i = 0; i < p; ++i) {
    labels.push_back(i % 5 == 4 ? 255 : int(rng.uniform_int(nc)));
  }
  {
    const auto eval = [&]() {
      Tape t;
      return scalar(t, ce_loss(t, t.leaf(logits), labels, mask));
    };
    Tape t;
    Var leaf = t.leaf(logits);
    t.backward(ce_loss(t, leaf, labels, mask));
    const FdResult r = fd_check({&logits}, {t.grad(leaf)}, eval);
    CHECK(r.max_rel < 1e-6);
  }
}

TEST_CASE("pca recovers an orthonormal basis of the data span") {
  Rng rng(41);
  const int64_t m = 60, c = 6, cr = 2;

  // Noise-free rank-2 data: two fixed directions plus a mean offset.
  Tensor basis = Tensor::zeros({cr, c});
  basis.data = {1, 1, 0, 0, 0, 0, 0, 0, 1, -1, 0, 0};
  Tensor samples = Tensor::zeros({m, c});
  Tensor mean_true = Tensor::zeros({c});
  mean_true.data = {0.5, -1.0, 2.0, 0.0, 3.0, -0.5};
  for (int64_t i = 0; i < m; ++i) {
    const double a = 3.0 * rng.normal();
    const double b = rng.normal();
    for (int64_t k = 0; k < c; ++k) {
      samples.data[size_t(i * c + k)] = mean_true.data[size_t(k)] +
                                        a * basis.data[size_t(k)] +
                                        b * basis.data[size_t(c + k)];
    }
  }

  const PcaBasis pca = pca_fit(samples, cr);
  REQUIRE(pca.components.shape == std::vector<int64_t>{cr, c});

  // Rows orthonormal.
  for (int64_t i = 0; i < cr; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double dot = 0;
      for (int64_t k = 0; k < c; ++k) {
        dot += pca.components.data[size_t(i * c + k)] *
               pca.components.data[size_t(j * c + k)];
      }
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-9);
    }
  }
  // Sign rule: the largest-|entry| of each row is positive.
  for (int64_t i = 0; i < cr; ++i) {
    double best = 0;
    for (int64_t k = 0; k < c; ++k) {
      const double v = pca.components.data[size_t(i * c + k)];
      if (std::abs(v) > std::abs(best)) best = v;
    }
    CHECK(best > 0.0);
  }

  // Rank-2 data reconstructs exactly from 2 components.
  const Tensor proj = pca_project(samples, pca);
  REQUIRE(proj.shape == std::vector<int64_t>{m, cr});
  double var0 = 0, var1 = 0, max_err = 0;
  for (int64_t i = 0; i < m; ++i) {
    var0 += proj.data[size_t(i * cr)] * proj.data[size_t(i * cr)];
    var1 += proj.data[size_t(i * cr + 1)] * proj.data[size_t(i * cr + 1)];
    for (int64_t k = 0; k < c; ++k) {
      double rec = pca.mean.data[size_t(k)];
      for (int64_t r = 0; r < cr; ++r) {
        rec += proj.data[size_t(i * cr + r)] *
               pca.components.data[size_t(r * c + k)];
      }
      max_err = std::max(max_err,
                         std::abs(rec - samples.data[size_t(i * c + k)]));
    }
  }
  CHECK(max_err < 1e-9);
  CHECK(var0 > var1);  // eigenvalue-descending order
}

TEST_CASE("tensor and tape pca projections agree") {
  Rng rng(53);
  Tensor samples = Tensor::zeros({30, 5});
  for (double& v : samples.data) v = rng.normal();
  const PcaBasis pca = pca_fit(samples, 3);

  Tensor f = Tensor::zeros({7, 5});
  for (double& v : f.data) v = rng.normal();
  const Tensor direct = pca_project(f, pca);

  Tape t;
  const Tensor& taped = t.value(pca_project(t, t.leaf(f), pca));
  REQUIRE(taped.shape == direct.shape);
  for (size_t i = 0; i < direct.data.size(); ++i) {
    CHECK(taped.data[i] == doctest::Approx(direct.data[i]).epsilon(1e-12));
  }

  // 3-D maps project over the last axis.
  Tensor map = Tensor::zeros({2, 3, 5});
  for (double& v : map.data) v = rng.normal();
  const Tensor mp = pca_project(map, pca);
  CHECK(mp.shape == std::vector<int64_t>{2, 3, 3});
}

TEST_CASE("pca_fit validates its arguments") {
  Tensor samples = Tensor::zeros({4, 3});
  for (size_t i = 0; i < samples.data.size(); ++i) {
    samples.data[i] = double(i % 5) * 0.37;
  }
  CHECK_THROWS_AS(pca_fit(samples, 0), ConfigError);
  CHECK_THROWS_AS(pca_fit(samples, 4), ConfigError);
  CHECK_THROWS_AS(pca_fit(Tensor::zeros({2, 3}), 3), DataError);
}
