#include "gausstr/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gausstr/errors.hpp"
#include "gausstr/threading.hpp"

namespace gausstr {

namespace {

// Raw rotation formula without the unit-norm check geometry enforces. The
// render path treats quaternion components as free variables so finite
// differences stay well defined; Sigma = M M^T is PSD for any q.
Eigen::Matrix3d rotmat_raw(double w, double x, double y, double z) {
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

// One pixel, front to back over `cands` (already in global z order). Both
// renderers call this, so tiled and brute-force agree bit for bit.
void composite_pixel(int i, int j, const ProjectedGaussian* const* cands,
                     int ncand, const double* feat_rows, int64_t C,
                     const RenderSettings& rs, double* out_feat,
                     double* out_depth, double* out_trans, double* out_wsum,
                     int32_t* out_ncontrib) {
  const double px = j + 0.5;
  const double py = i + 0.5;
  double T = 1.0;
  double depth = 0.0;
  double wsum = 0.0;
  int32_t n = 0;
  for (int64_t c = 0; c < C; ++c) out_feat[c] = 0.0;
  for (int k = 0; k < ncand; ++k) {
    const ProjectedGaussian& pg = *cands[k];
    if (j < pg.x0 || j > pg.x1 || i < pg.y0 || i > pg.y1) continue;
    const double dx = px - pg.mu2d[0];
    const double dy = py - pg.mu2d[1];
    const double q = pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy +
                     pg.conic[2] * dy * dy;
    double a = pg.alpha * std::exp(-0.5 * q);
    if (a > rs.alpha_clip) a = rs.alpha_clip;
    const double w = a * T;
    const double* f = feat_rows + pg.index * C;
    for (int64_t c = 0; c < C; ++c) out_feat[c] += w * f[c];
    depth += w * pg.z;
    wsum += w;
    T *= 1.0 - a;
    ++n;
    if (T < rs.min_transmittance) break;
  }
  // Depth is the weight-averaged contributor z (the summed weight equals
  // 1 - T up to rounding), so a lone opaque Gaussian reads back its own
  // camera depth exactly even under the alpha clip.
  *out_depth = wsum > 0.0 ? depth / wsum : 0.0;
  *out_trans = T;
  *out_wsum = wsum;
  *out_ncontrib = n;
}

RenderedView render_sorted(const GaussianSet& set, const Camera& cam,
                           const RenderSettings& rs,
                           std::vector<ProjectedGaussian> sorted, bool tiled,
                           RenderCache* cache) {
  const int W = cam.width;
  const int H = cam.height;
  const int64_t C = set.feat_dim;
  if (W <= 0 || H <= 0) throw ConfigError("render target has empty size");

  RenderedView out;
  out.feat = Tensor::zeros({H, W, C});
  out.depth = Tensor::zeros({H, W});
  out.trans = Tensor::full({H, W}, 1.0);
  std::vector<int32_t> ncontrib(size_t(H) * W, 0);
  std::vector<double> wsum(size_t(H) * W, 0.0);

  const double* feat_rows = set.feat.data.data();
  double* of = out.feat.data.data();
  double* od = out.depth.data.data();
  double* ot = out.trans.data.data();

  if (!tiled) {
    std::vector<const ProjectedGaussian*> cands(sorted.size());
    for (size_t k = 0; k < sorted.size(); ++k) cands[k] = &sorted[k];
    parallel_for(H, [&](int64_t r0, int64_t r1) {
      for (int64_t i = r0; i < r1; ++i) {
        for (int j = 0; j < W; ++j) {
          const size_t p = size_t(i) * W + j;
          composite_pixel(int(i), j, cands.data(), int(cands.size()),
                          feat_rows, C, rs, of + p * C, od + p, ot + p,
                          &wsum[p], &ncontrib[p]);
        }
      }
    });
  } else {
    const int ts = rs.tile;
    const int tx = (W + ts - 1) / ts;
    const int ty = (H + ts - 1) / ts;
    std::vector<std::vector<const ProjectedGaussian*>> bins(size_t(tx) * ty);
    for (const ProjectedGaussian& pg : sorted) {
      for (int by = pg.y0 / ts; by <= pg.y1 / ts; ++by) {
        for (int bx = pg.x0 / ts; bx <= pg.x1 / ts; ++bx) {
          bins[size_t(by) * tx + bx].push_back(&pg);
        }
      }
    }
    parallel_for(int64_t(tx) * ty, [&](int64_t t0, int64_t t1) {
      for (int64_t t = t0; t < t1; ++t) {
        const auto& bin = bins[size_t(t)];
        const int by = int(t / tx);
        const int bx = int(t % tx);
        const int i1 = std::min((by + 1) * ts, H);
        const int j1 = std::min((bx + 1) * ts, W);
        for (int i = by * ts; i < i1; ++i) {
          for (int j = bx * ts; j < j1; ++j) {
            const size_t p = size_t(i) * W + j;
            composite_pixel(i, j, bin.data(), int(bin.size()), feat_rows, C,
                            rs, of + p * C, od + p, ot + p, &wsum[p],
                            &ncontrib[p]);
          }
        }
      }
    });
  }

  if (cache) {
    cache->width = W;
    cache->height = H;
    cache->sorted = std::move(sorted);
    cache->final_trans = out.trans.data;
    cache->depth = out.depth.data;
    cache->weight_sum = std::move(wsum);
    cache->n_contrib = std::move(ncontrib);
  }
  return out;
}

}  // namespace

bool project_gaussian(const Gaussian& g, int64_t index, const Camera& cam,
                      const RenderSettings& rs, ProjectedGaussian* out) {
  const Eigen::Matrix3d Wr = cam.rotation();
  const Eigen::Vector3d t = Wr * g.mu + cam.translation();
  if (!(t.z() > rs.z_near)) return false;
  const double zi = 1.0 / t.z();
  const double mx = cam.fx * t.x() * zi + cam.cx;
  const double my = cam.fy * t.y() * zi + cam.cy;

  const Eigen::Matrix3d R = rotmat_raw(g.rot.w, g.rot.x, g.rot.y, g.rot.z);
  const Eigen::Matrix3d M = R * g.scale.asDiagonal();
  const Eigen::Matrix3d sigma = M * M.transpose();

  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * zi, 0.0, -cam.fx * t.x() * zi * zi,  //
      0.0, cam.fy * zi, -cam.fy * t.y() * zi * zi;
  const Eigen::Matrix<double, 2, 3> P = J * Wr;
  Eigen::Matrix2d cov = P * sigma * P.transpose();
  cov(0, 0) += rs.blur;
  cov(1, 1) += rs.blur;

  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  if (!(det > 0.0) || !std::isfinite(det)) return false;
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lmax = mid + std::sqrt(std::max(mid * mid - det, 0.0));
  const double r = 3.0 * std::sqrt(lmax);

  // Pixel j center sits at j + 0.5; keep pixels within r of the center,
  // per axis. Conservative square support shared with the backward pass.
  double lo_x = std::ceil(mx - r - 0.5);
  double hi_x = std::floor(mx + r - 0.5);
  double lo_y = std::ceil(my - r - 0.5);
  double hi_y = std::floor(my + r - 0.5);
  if (lo_x < 0) lo_x = 0;
  if (lo_y < 0) lo_y = 0;
  if (hi_x > cam.width - 1) hi_x = cam.width - 1;
  if (hi_y > cam.height - 1) hi_y = cam.height - 1;
  if (lo_x > hi_x || lo_y > hi_y) return false;

  out->index = index;
  out->mu2d[0] = mx;
  out->mu2d[1] = my;
  out->z = t.z();
  const double idet = 1.0 / det;
  out->conic[0] = cov(1, 1) * idet;
  out->conic[1] = -cov(0, 1) * idet;
  out->conic[2] = cov(0, 0) * idet;
  out->alpha = g.alpha;
  out->radius = r;
  out->x0 = int(lo_x);
  out->x1 = int(hi_x);
  out->y0 = int(lo_y);
  out->y1 = int(hi_y);
  return true;
}

std::vector<ProjectedGaussian> project_and_sort(const GaussianSet& set,
                                                const Camera& cam,
                                                const RenderSettings& rs) {
  std::vector<ProjectedGaussian> v;
  const int64_t n = set.size();
  v.reserve(size_t(n));
  ProjectedGaussian pg;
  for (int64_t i = 0; i < n; ++i) {
    if (!set.active[size_t(i)]) continue;
    if (project_gaussian(set.get(i), i, cam, rs, &pg)) v.push_back(pg);
  }
  std::sort(v.begin(), v.end(),
            [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
              return a.z < b.z || (a.z == b.z && a.index < b.index);
            });
  return v;
}

RenderedView render(const GaussianSet& set, const Camera& cam,
                    const RenderSettings& rs, RenderCache* cache) {
  return render_sorted(set, cam, rs, project_and_sort(set, cam, rs), true,
                       cache);
}

RenderedView render_brute(const GaussianSet& set, const Camera& cam,
                          const RenderSettings& rs, RenderCache* cache) {
  return render_sorted(set, cam, rs, project_and_sort(set, cam, rs), false,
                       cache);
}

namespace {

// Reverse compositing for one pixel. Writes pixel-space gradients into the
// tile-local buffer, one (7 + C)-wide row per binned entry:
// [d_mu2d_x, d_mu2d_y, d_conic_a, d_conic_b, d_conic_c, d_alpha, d_z, d_f...].
// Depth is A / S with A = sum_i w_i z_i and S = sum_i w_i, so the depth
// gradient carries a numerator path (features with z in place of f, scaled
// by 1/S) and a denominator path (same structure with f identically 1).
void backward_pixel(int i, int j, const std::vector<int>& bin,
                    const std::vector<ProjectedGaussian>& sorted,
                    const double* feat_rows, int64_t C,
                    const RenderSettings& rs, int32_t need, double final_T,
                    double pix_depth, double pix_wsum, const double* gf,
                    double gd, std::vector<int>& scratch, double* buf) {
  if (need == 0) return;
  scratch.clear();
  for (size_t e = 0; e < bin.size() && int32_t(scratch.size()) < need; ++e) {
    const ProjectedGaussian& pg = sorted[size_t(bin[e])];
    if (j < pg.x0 || j > pg.x1 || i < pg.y0 || i > pg.y1) continue;
    scratch.push_back(int(e));
  }
  const double px = j + 0.5;
  const double py = i + 0.5;
  const int64_t stride = 7 + C;

  const double gA = pix_wsum > 0.0 ? gd / pix_wsum : 0.0;
  const double gS = pix_wsum > 0.0 ? -gd * pix_depth / pix_wsum : 0.0;

  double T_after = final_T;
  double suf_f = 0.0; // sum_{j>i} w_j (gf . f_j)
  double suf_d = 0.0; // sum_{j>i} w_j z_j
  double suf_w = 0.0; // sum_{j>i} w_j
  for (int s = int(scratch.size()) - 1; s >= 0; --s) {
    const int e = scratch[size_t(s)];
    const ProjectedGaussian& pg = sorted[size_t(bin[size_t(e)])];
    const double dx = px - pg.mu2d[0];
    const double dy = py - pg.mu2d[1];
    const double q = pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy +
                     pg.conic[2] * dy * dy;
    const double gexp = std::exp(-0.5 * q);
    const double a_raw = pg.alpha * gexp;
    const double a = a_raw > rs.alpha_clip ? rs.alpha_clip : a_raw;
    const double one_m = 1.0 - a;
    const double T_i = T_after / one_m;
    const double w = a * T_i;

    double* row = buf + int64_t(e) * stride;
    const double* f = feat_rows + pg.index * C;
    double dot_f = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      row[7 + c] += w * gf[c];
      dot_f += gf[c] * f[c];
    }
    row[6] += w * gA;

    const double dLda = T_i * (dot_f + gA * pg.z + gS) -
                        (suf_f + gA * suf_d + gS * suf_w) / one_m;
    suf_f += w * dot_f;
    suf_d += w * pg.z;
    suf_w += w;

    if (a_raw < rs.alpha_clip) { // past the clip, alpha' is constant
      row[5] += gexp * dLda;
      const double dLdq = -0.5 * gexp * pg.alpha * dLda;
      row[2] += dx * dx * dLdq;
      row[3] += 2.0 * dx * dy * dLdq;
      row[4] += dy * dy * dLdq;
      const double qx = pg.conic[0] * dx + pg.conic[1] * dy;
      const double qy = pg.conic[1] * dx + pg.conic[2] * dy;
      row[0] += -2.0 * qx * dLdq;
      row[1] += -2.0 * qy * dLdq;
    }
    T_after = T_i;
  }
}

}  // namespace

SplatGrads render_backward(const GaussianSet& set, const Camera& cam,
                           const RenderSettings& rs, const RenderCache& cache,
                           const Tensor& d_feat, const Tensor& d_depth) {
  const int W = cache.width;
  const int H = cache.height;
  const int64_t C = set.feat_dim;
  const int64_t N = set.size();
  if (d_feat.shape != std::vector<int64_t>{H, W, C} ||
      d_depth.shape != std::vector<int64_t>{H, W}) {
    throw DataError("render_backward: gradient shape mismatch");
  }

  SplatGrads g;
  g.mu = Tensor::zeros({N, 3});
  g.scale = Tensor::zeros({N, 3});
  g.rot = Tensor::zeros({N, 4});
  g.alpha = Tensor::zeros({N});
  g.feat = Tensor::zeros({N, C});

  const auto& sorted = cache.sorted;
  const int64_t M = int64_t(sorted.size());
  if (M == 0) return g;

  const int ts = rs.tile;
  const int tx = (W + ts - 1) / ts;
  const int ty = (H + ts - 1) / ts;
  std::vector<std::vector<int>> bins(size_t(tx) * ty);
  for (int64_t k = 0; k < M; ++k) {
    const ProjectedGaussian& pg = sorted[size_t(k)];
    for (int by = pg.y0 / ts; by <= pg.y1 / ts; ++by) {
      for (int bx = pg.x0 / ts; bx <= pg.x1 / ts; ++bx) {
        bins[size_t(by) * tx + bx].push_back(int(k));
      }
    }
  }

  const double* feat_rows = set.feat.data.data();
  const double* gfm = d_feat.data.data();
  const double* gdm = d_depth.data.data();
  const int64_t stride = 7 + C;

  // Phase 1: per-tile local accumulation, parallel, disjoint buffers.
  std::vector<std::vector<double>> local(size_t(tx) * ty);
  parallel_for(int64_t(tx) * ty, [&](int64_t t0, int64_t t1) {
    std::vector<int> scratch;
    for (int64_t t = t0; t < t1; ++t) {
      const auto& bin = bins[size_t(t)];
      if (bin.empty()) continue;
      auto& buf = local[size_t(t)];
      buf.assign(bin.size() * size_t(stride), 0.0);
      const int by = int(t / tx);
      const int bx = int(t % tx);
      const int i1 = std::min((by + 1) * ts, H);
      const int j1 = std::min((bx + 1) * ts, W);
      for (int i = by * ts; i < i1; ++i) {
        for (int j = bx * ts; j < j1; ++j) {
          const size_t p = size_t(i) * W + j;
          backward_pixel(i, j, bin, sorted, feat_rows, C, rs,
                         cache.n_contrib[p], cache.final_trans[p],
                         cache.depth[p], cache.weight_sum[p], gfm + p * C,
                         gdm[p], scratch, buf.data());
        }
      }
    }
  });

  // Phase 2: merge tile buffers in tile order, so accumulation order never
  // depends on thread count.
  std::vector<double> pix(size_t(M) * 7, 0.0);
  for (size_t t = 0; t < bins.size(); ++t) {
    const auto& bin = bins[t];
    const auto& buf = local[t];
    for (size_t e = 0; e < bin.size(); ++e) {
      const double* src = buf.data() + e * size_t(stride);
      double* dst = pix.data() + size_t(bin[e]) * 7;
      for (int c = 0; c < 7; ++c) dst[c] += src[c];
      double* fg = g.feat.data.data() + sorted[size_t(bin[e])].index * C;
      for (int64_t c = 0; c < C; ++c) fg[c] += src[7 + c];
    }
  }

  // Phase 3: chain pixel-space gradients to the 3D parameters. Each sorted
  // entry owns a distinct Gaussian row, so writes stay disjoint.
  const Eigen::Matrix3d Wr = cam.rotation();
  const Eigen::Vector3d tr = cam.translation();
  parallel_for(M, [&](int64_t k0, int64_t k1) {
    for (int64_t k = k0; k < k1; ++k) {
      const ProjectedGaussian& pg = sorted[size_t(k)];
      const double* acc = pix.data() + size_t(k) * 7;
      const Gaussian gg = set.get(pg.index);

      const Eigen::Vector3d t = Wr * gg.mu + tr;
      const double zi = 1.0 / t.z();
      const Eigen::Matrix3d R =
          rotmat_raw(gg.rot.w, gg.rot.x, gg.rot.y, gg.rot.z);
      const Eigen::Matrix3d M3 = R * gg.scale.asDiagonal();
      const Eigen::Matrix3d sigma = M3 * M3.transpose();
      Eigen::Matrix<double, 2, 3> J;
      J << cam.fx * zi, 0.0, -cam.fx * t.x() * zi * zi,  //
          0.0, cam.fy * zi, -cam.fy * t.y() * zi * zi;
      const Eigen::Matrix<double, 2, 3> P = J * Wr;
      Eigen::Matrix2d cov = P * sigma * P.transpose();
      cov(0, 0) += rs.blur;
      cov(1, 1) += rs.blur;
      const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
      Eigen::Matrix2d Q;
      Q << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
      Q /= det;

      // d(conic) -> d(cov2d) via d(A^-1) = -A^-1 dA A^-1.
      Eigen::Matrix2d GQ;
      GQ << acc[2], 0.5 * acc[3], 0.5 * acc[3], acc[4];
      const Eigen::Matrix2d Gc = -(Q * GQ * Q);

      const Eigen::Matrix3d Gsig = P.transpose() * Gc * P;
      const Eigen::Matrix<double, 2, 3> dP = 2.0 * Gc * P * sigma;
      const Eigen::Matrix<double, 2, 3> dJ = dP * Wr.transpose();

      // Camera-point gradient from the 2D mean, the Jacobian entries that
      // depend on t, and the blended depth.
      Eigen::Vector3d dt;
      dt.x() = acc[0] * cam.fx * zi + dJ(0, 2) * (-cam.fx * zi * zi);
      dt.y() = acc[1] * cam.fy * zi + dJ(1, 2) * (-cam.fy * zi * zi);
      dt.z() = acc[0] * (-cam.fx * t.x() * zi * zi) +
               acc[1] * (-cam.fy * t.y() * zi * zi) +
               dJ(0, 0) * (-cam.fx * zi * zi) +
               dJ(1, 1) * (-cam.fy * zi * zi) +
               dJ(0, 2) * (2.0 * cam.fx * t.x() * zi * zi * zi) +
               dJ(1, 2) * (2.0 * cam.fy * t.y() * zi * zi * zi) + acc[6];
      const Eigen::Vector3d dmu = Wr.transpose() * dt;

      // Sigma = M M^T, M = R diag(s).
      const Eigen::Matrix3d dM = 2.0 * Gsig * M3;
      Eigen::Vector3d ds;
      Eigen::Matrix3d dR;
      for (int col = 0; col < 3; ++col) {
        double acc_s = 0.0;
        for (int row = 0; row < 3; ++row) {
          acc_s += dM(row, col) * R(row, col);
          dR(row, col) = dM(row, col) * gg.scale[col];
        }
        ds[col] = acc_s;
      }

      const double qw = gg.rot.w, qx = gg.rot.x, qy = gg.rot.y, qz = gg.rot.z;
      const double dqw =
          2.0 * (dR(0, 1) * -qz + dR(0, 2) * qy + dR(1, 0) * qz +
                 dR(1, 2) * -qx + dR(2, 0) * -qy + dR(2, 1) * qx);
      const double dqx =
          2.0 * (dR(0, 1) * qy + dR(0, 2) * qz + dR(1, 0) * qy +
                 dR(1, 1) * -2.0 * qx + dR(1, 2) * -qw + dR(2, 0) * qz +
                 dR(2, 1) * qw + dR(2, 2) * -2.0 * qx);
      const double dqy =
          2.0 * (dR(0, 0) * -2.0 * qy + dR(0, 1) * qx + dR(0, 2) * qw +
                 dR(1, 0) * qx + dR(1, 2) * qz + dR(2, 0) * -qw +
                 dR(2, 1) * qz + dR(2, 2) * -2.0 * qy);
      const double dqz =
          2.0 * (dR(0, 0) * -2.0 * qz + dR(0, 1) * -qw + dR(0, 2) * qx +
                 dR(1, 0) * qw + dR(1, 1) * -2.0 * qz + dR(1, 2) * qy +
                 dR(2, 0) * qx + dR(2, 1) * qy);

      const int64_t idx = pg.index;
      for (int c = 0; c < 3; ++c) {
        g.mu.data[idx * 3 + c] = dmu[c];
        g.scale.data[idx * 3 + c] = ds[c];
      }
      g.rot.data[idx * 4] = dqw;
      g.rot.data[idx * 4 + 1] = dqx;
      g.rot.data[idx * 4 + 2] = dqy;
      g.rot.data[idx * 4 + 3] = dqz;
      g.alpha.data[idx] = acc[5];
    }
  });

  return g;
}

Var splat(Tape& tape, Var mu, Var scale, Var rot, Var alpha, Var feat,
          const std::vector<uint8_t>& active, const Camera& cam,
          const RenderSettings& rs, Tensor* trans_out) {
  const Tensor& mu_v = tape.value(mu);
  const Tensor& scale_v = tape.value(scale);
  const Tensor& rot_v = tape.value(rot);
  const Tensor& alpha_v = tape.value(alpha);
  const Tensor& feat_v = tape.value(feat);

  const int64_t N = mu_v.ndim() ? mu_v.shape[0] : 0;
  if (mu_v.shape != std::vector<int64_t>{N, 3} ||
      scale_v.shape != std::vector<int64_t>{N, 3} ||
      rot_v.shape != std::vector<int64_t>{N, 4} ||
      alpha_v.shape != std::vector<int64_t>{N} || feat_v.ndim() != 2 ||
      feat_v.shape[0] != N) {
    throw DataError("splat: parameter tensor shapes disagree");
  }
  if (int64_t(active.size()) != N) {
    throw DataError("splat: active mask length mismatch");
  }

  // Snapshot the parameters; the backward closure replays from this copy.
  auto snap = std::make_shared<GaussianSet>();
  snap->queries_per_view = int(N);
  snap->views = 1;
  snap->feat_dim = int(feat_v.shape[1]);
  snap->mu = mu_v;
  snap->scale = scale_v;
  snap->rot = rot_v;
  snap->alpha = alpha_v;
  snap->feat = feat_v;
  snap->view_index.assign(size_t(N), 0);
  snap->active = active;

  auto cache = std::make_shared<RenderCache>();
  const RenderedView view = render(*snap, cam, rs, cache.get());
  if (trans_out) *trans_out = view.trans;

  const int H = cam.height;
  const int W = cam.width;
  const int64_t C = snap->feat_dim;
  Tensor out = Tensor::zeros({H, W, C + 1});
  for (int64_t p = 0; p < int64_t(H) * W; ++p) {
    for (int64_t c = 0; c < C; ++c) {
      out.data[p * (C + 1) + c] = view.feat.data[p * C + c];
    }
    out.data[p * (C + 1) + C] = view.depth.data[p];
  }

  Camera cam_copy = cam;
  RenderSettings rs_copy = rs;
  return tape.make_node(
      std::move(out), {mu, scale, rot, alpha, feat},
      [snap, cache, cam_copy, rs_copy, H, W, C](Tape& t, const Node& node) {
        Tensor d_feat = Tensor::zeros({H, W, C});
        Tensor d_depth = Tensor::zeros({H, W});
        for (int64_t p = 0; p < int64_t(H) * W; ++p) {
          for (int64_t c = 0; c < C; ++c) {
            d_feat.data[p * C + c] = node.grad.data[p * (C + 1) + c];
          }
          d_depth.data[p] = node.grad.data[p * (C + 1) + C];
        }
        const SplatGrads sg = render_backward(*snap, cam_copy, rs_copy, *cache,
                                              d_feat, d_depth);
        t.accum_grad(node.inputs[0], sg.mu);
        t.accum_grad(node.inputs[1], sg.scale);
        t.accum_grad(node.inputs[2], sg.rot);
        t.accum_grad(node.inputs[3], sg.alpha);
        t.accum_grad(node.inputs[4], sg.feat);
      },
      "splat");
}

}  // namespace gausstr
