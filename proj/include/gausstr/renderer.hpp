#pragma once

#include <vector>

#include "gausstr/gaussians.hpp"
#include "gausstr/tape.hpp"

namespace gausstr {

struct RenderSettings {
  double blur = 0.3;               // px^2 added to cov2d diagonal
  double alpha_clip = 0.999;       // effective opacity ceiling
  double min_transmittance = 1e-4; // stop compositing below this
  double z_near = 0.05;            // meters
  int tile = 16;                   // px
};

// Screen-space footprint of one Gaussian after EWA projection.
struct ProjectedGaussian {
  int64_t index = 0;       // row in the source GaussianSet
  double mu2d[2] = {0, 0}; // px, continuous (pixel j center at j + 0.5)
  double z = 0;            // camera depth, meters
  double conic[3] = {0, 0, 0}; // inverse cov2d packed (a, b, c)
  double alpha = 0;
  double radius = 0;       // 3 sigma, px
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel index bounds
};

struct RenderedView {
  Tensor feat;  // [H, W, C]
  Tensor depth; // [H, W], alpha-weighted mean z (0 where nothing lands)
  Tensor trans; // [H, W], remaining transmittance in [0, 1]
};

// Everything the backward pass needs to replay compositing exactly.
struct RenderCache {
  int width = 0, height = 0;
  std::vector<ProjectedGaussian> sorted; // global z order, ties by index
  std::vector<double> final_trans;       // per pixel
  std::vector<double> depth;             // per pixel, as rendered
  std::vector<double> weight_sum;        // per pixel, sum of blend weights
  std::vector<int32_t> n_contrib;        // contributors composited per pixel
};

// Projects one Gaussian; false means culled (behind z_near, degenerate
// covariance, or its 3 sigma square contains no pixel center).
bool project_gaussian(const Gaussian& g, int64_t index, const Camera& cam,
                      const RenderSettings& rs, ProjectedGaussian* out);

// Projects every active Gaussian and sorts by (z, index) ascending.
std::vector<ProjectedGaussian> project_and_sort(const GaussianSet& set,
                                                const Camera& cam,
                                                const RenderSettings& rs);

// Tiled renderer (the real one). `cam` fixes the output resolution, so pass
// a scale_camera()-reduced camera to render below input size.
RenderedView render(const GaussianSet& set, const Camera& cam,
                    const RenderSettings& rs, RenderCache* cache = nullptr);

// Per-pixel loop over the full sorted list. Oracle for the tiled path;
// both share one compositing routine so results match bit for bit.
RenderedView render_brute(const GaussianSet& set, const Camera& cam,
                          const RenderSettings& rs,
                          RenderCache* cache = nullptr);

struct SplatGrads {
  Tensor mu;    // [N, 3]
  Tensor scale; // [N, 3]
  Tensor rot;   // [N, 4]
  Tensor alpha; // [N]
  Tensor feat;  // [N, C]
};

// Analytic gradients of (d_feat . F + d_depth . D) w.r.t. the Gaussian
// parameters, replayed back to front from the cache. Culled Gaussians get
// zeros. trans carries no gradient.
SplatGrads render_backward(const GaussianSet& set, const Camera& cam,
                           const RenderSettings& rs, const RenderCache& cache,
                           const Tensor& d_feat, const Tensor& d_depth);

// Tape bridge. Renders the set described by the five parameter tensors and
// returns one [H, W, C+1] node, depth in the last channel. `active` masks
// rows out of the render entirely (they receive zero gradient). If given,
// `trans_out` is filled with the non-differentiable transmittance map.
Var splat(Tape& tape, Var mu, Var scale, Var rot, Var alpha, Var feat,
          const std::vector<uint8_t>& active, const Camera& cam,
          const RenderSettings& rs, Tensor* trans_out = nullptr);

}  // namespace gausstr
