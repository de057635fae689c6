#pragma once

#include "gausstr/tape.hpp"

namespace gausstr {

struct PcaBasis {
  Tensor components;  // [C_R, C], orthonormal rows
  Tensor mean;        // [C]

  int64_t reduced_dim() const { return components.shape[0]; }
  int64_t full_dim() const { return components.shape[1]; }
};

// Top-C_R eigenvectors of the centered sample covariance, eigenvalue
// descending, each row's largest-magnitude entry made positive.
PcaBasis pca_fit(const Tensor& samples, int64_t c_r);

// f' = (f - mean) V^T over the last axis.
Tensor pca_project(const Tensor& f, const PcaBasis& basis);
Var pca_project(Tape& t, Var f, const PcaBasis& basis);

// Mean over masked rows of 1 - cos(pred_p, target_p). The epsilon sits
// inside the norm product, so a zero-norm row scores exactly 1 (cos = 0).
// `pred` [P, C], `target` [P, C], `mask` [P, 1] of 0/1. Zero rows selected
// -> constant 0.
Var cosine_feat_loss(Tape& t, Var pred, const Tensor& target,
                     const Tensor& mask);

struct DepthLossVars {
  Var total;  // silog + beta * l1
  Var silog;
  Var l1;
};

// Scale-invariant log loss plus weighted L1 over masked pixels:
// silog = mean(d^2) - mean(d)^2 with d = log D - log D_hat. Masked pixels
// are substituted with depth 1 before the log so no NaN ever forms.
// `pred`/`target` [P, 1], `mask` [P, 1]; target must be positive where
// mask is 1, and the renderer guarantees pred > 0 on covered pixels.
DepthLossVars depth_loss(Tape& t, Var pred, const Tensor& target,
                         const Tensor& mask, double beta);

// Mean cross entropy between row logits and integer labels, skipping rows
// where mask is 0 or the label equals ignore_index.
Var ce_loss(Tape& t, Var logits, const std::vector<int>& labels,
            const Tensor& mask, int ignore_index = 255);

}  // namespace gausstr
