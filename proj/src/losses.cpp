#include "gausstr/losses.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "gausstr/errors.hpp"

namespace gausstr {

namespace {

// Mask helpers: accept [P] or [P, 1], return 0/1 column and the count.
Tensor as_mask_column(const Tensor& mask, int64_t rows, double* count) {
  if (mask.numel() != rows) throw DataError("mask size mismatch");
  Tensor m = Tensor::zeros({rows, 1});
  double c = 0;
  for (int64_t i = 0; i < rows; ++i) {
    const double v = mask.data[size_t(i)];
    if (v != 0.0 && v != 1.0) throw DataError("mask entries must be 0 or 1");
    m.data[size_t(i)] = v;
    c += v;
  }
  *count = c;
  return m;
}

}  // namespace

PcaBasis pca_fit(const Tensor& samples, int64_t c_r) {
  if (samples.ndim() != 2) throw DataError("pca_fit expects [M, C]");
  const int64_t M = samples.shape[0], C = samples.shape[1];
  if (c_r < 1 || c_r > C) throw ConfigError("reduced dim out of range");
  if (M < c_r) throw DataError("pca_fit: fewer samples than components");

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> X(samples.data.data(), M, C);
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  const Eigen::MatrixXd cov = Xc.adjoint() * Xc / double(M > 1 ? M - 1 : 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca eigensolver failed");

  PcaBasis b;
  b.mean = Tensor::zeros({C});
  for (int64_t c = 0; c < C; ++c) b.mean.data[size_t(c)] = mu[c];
  b.components = Tensor::zeros({c_r, C});
  for (int64_t k = 0; k < c_r; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(C - 1 - k);  // descending
    int64_t peak = 0;
    for (int64_t c = 1; c < C; ++c) {
      if (std::abs(v[c]) > std::abs(v[peak])) peak = c;
    }
    if (v[peak] < 0) v = -v;
    for (int64_t c = 0; c < C; ++c) {
      b.components.data[size_t(k * C + c)] = v[c];
    }
  }
  return b;
}

Tensor pca_project(const Tensor& f, const PcaBasis& basis) {
  const int64_t C = basis.full_dim(), R = basis.reduced_dim();
  if (f.ndim() < 1 || f.shape.back() != C) {
    throw DataError("pca_project: last axis must be " + std::to_string(C));
  }
  const int64_t rows = f.numel() / C;
  std::vector<int64_t> oshape = f.shape;
  oshape.back() = R;
  Tensor out = Tensor::zeros(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t k = 0; k < R; ++k) {
      double s = 0;
      for (int64_t c = 0; c < C; ++c) {
        s += (f.data[size_t(r * C + c)] - basis.mean.data[size_t(c)]) *
             basis.components.data[size_t(k * C + c)];
      }
      out.data[size_t(r * R + k)] = s;
    }
  }
  return out;
}

Var pca_project(Tape& t, Var f, const PcaBasis& basis) {
  const Tensor& fv = t.value(f);
  const int64_t C = basis.full_dim(), R = basis.reduced_dim();
  if (fv.ndim() != 2 || fv.shape[1] != C) {
    throw DataError("pca_project: expected [P, " + std::to_string(C) + "]");
  }
  Tensor mean_row({1, C}, basis.mean.data);
  Tensor vt = Tensor::zeros({C, R});
  for (int64_t k = 0; k < R; ++k) {
    for (int64_t c = 0; c < C; ++c) {
      vt.data[size_t(c * R + k)] = basis.components.data[size_t(k * C + c)];
    }
  }
  Var centered = sub(t, f, t.constant(std::move(mean_row)));
  return matmul(t, centered, t.constant(std::move(vt)));
}

Var cosine_feat_loss(Tape& t, Var pred, const Tensor& target,
                     const Tensor& mask) {
  const Tensor& pv = t.value(pred);
  if (pv.ndim() != 2) throw DataError("cosine loss expects [P, C]");
  if (!target.same_shape(pv)) throw DataError("feature target shape mismatch");
  const int64_t P = pv.shape[0];

  double count = 0;
  Tensor m = as_mask_column(mask, P, &count);
  if (count == 0) return t.constant(Tensor::scalar(0.0));

  Tensor tn2({P, 1});
  for (int64_t p = 0; p < P; ++p) {
    double s = 0;
    for (int64_t c = 0; c < pv.shape[1]; ++c) {
      const double v = target.data[size_t(p * pv.shape[1] + c)];
      s += v * v;
    }
    tn2.data[size_t(p)] = s;
  }

  Var tc = t.constant(target);
  Var dot = sum_axis(t, mul(t, pred, tc), 1, true);
  Var pn2 = sum_axis(t, mul(t, pred, pred), 1, true);
  // Epsilon inside the norm product: a zero-norm row gives cos = 0, loss 1.
  Var denom = sqrt(t, offset(t, mul(t, pn2, t.constant(std::move(tn2))), 1e-12));
  Var cosv = divide(t, dot, denom);
  Var masked = mul(t, affine(t, cosv, -1.0, 1.0), t.constant(std::move(m)));
  return scale(t, sum_all(t, masked), 1.0 / count);
}

DepthLossVars depth_loss(Tape& t, Var pred, const Tensor& target,
                         const Tensor& mask, double beta) {
  const Tensor& pv = t.value(pred);
  if (pv.ndim() != 2 || pv.shape[1] != 1) {
    throw DataError("depth loss expects [P, 1]");
  }
  const int64_t P = pv.shape[0];
  if (target.numel() != P) throw DataError("depth target size mismatch");

  double count = 0;
  Tensor m = as_mask_column(mask, P, &count);
  if (count == 0) {
    DepthLossVars z;
    z.silog = t.constant(Tensor::scalar(0.0));
    z.l1 = t.constant(Tensor::scalar(0.0));
    z.total = t.constant(Tensor::scalar(0.0));
    return z;
  }

  Tensor log_target({P, 1});
  Tensor target_col({P, 1});
  Tensor inv_m({P, 1});
  for (int64_t p = 0; p < P; ++p) {
    const double d = target.data[size_t(p)];
    const bool on = m.data[size_t(p)] != 0.0;
    if (on && !(d > 0)) throw DataError("non-positive depth under mask");
    target_col.data[size_t(p)] = d;
    log_target.data[size_t(p)] = on ? std::log(d) : 0.0;
    inv_m.data[size_t(p)] = on ? 0.0 : 1.0;
  }

  Var mc = t.constant(m);
  // Masked pixels read depth 1 so the log stays finite and gradient-free.
  Var dsafe = add(t, mul(t, pred, mc), t.constant(std::move(inv_m)));
  Var delta = mul(t, sub(t, t.constant(std::move(log_target)), log(t, dsafe)), mc);
  const double inv_t = 1.0 / count;
  Var m1 = scale(t, sum_all(t, delta), inv_t);
  Var silog =
      sub(t, scale(t, sum_all(t, mul(t, delta, delta)), inv_t), mul(t, m1, m1));
  Var l1 = scale(
      t,
      sum_all(t, mul(t, abs(t, sub(t, pred, t.constant(std::move(target_col)))),
                     mc)),
      inv_t);

  DepthLossVars out;
  out.silog = silog;
  out.l1 = l1;
  out.total = add(t, silog, scale(t, l1, beta));
  return out;
}

Var ce_loss(Tape& t, Var logits, const std::vector<int>& labels,
            const Tensor& mask, int ignore_index) {
  const Tensor& lv = t.value(logits);
  if (lv.ndim() != 2) throw DataError("ce loss expects [P, N_C]");
  const int64_t P = lv.shape[0], NC = lv.shape[1];
  if (int64_t(labels.size()) != P) throw DataError("label count mismatch");

  double count = 0;
  Tensor m = as_mask_column(mask, P, &count);
  Tensor pick = Tensor::zeros({P, NC});
  double used = 0;
  for (int64_t p = 0; p < P; ++p) {
    if (m.data[size_t(p)] == 0.0) continue;
    const int c = labels[size_t(p)];
    if (c == ignore_index) continue;
    if (c < 0 || c >= NC) throw DataError("class label out of range");
    pick.data[size_t(p * NC + c)] = 1.0;
    used += 1;
  }
  if (used == 0) return t.constant(Tensor::scalar(0.0));

  Var lp = log_softmax(t, logits, 1);
  return scale(t, sum_all(t, mul(t, lp, t.constant(std::move(pick)))),
               -1.0 / used);
}

}  // namespace gausstr
