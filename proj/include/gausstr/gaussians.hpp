#pragma once

#include <string>
#include <vector>

#include "gausstr/geometry.hpp"
#include "gausstr/tensor.hpp"

namespace gausstr {

// One scene Gaussian: world mean (m), positive scales (m), unit rotation,
// opacity in [0,1], and a feature vector in place of spherical harmonics.
struct Gaussian {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  Quat rot;
  double alpha = 1.0;
  std::vector<double> feat;

  void validate() const;
};

struct RefineDeltas {
  Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();
  Quat d_rot{0, 0, 0, 0};                      // additive quaternion increment
  Eigen::Vector3d d_log_scale = Eigen::Vector3d::Zero();
};

// Scene-level set in struct-of-arrays form, N = queries_per_view * views.
struct GaussianSet {
  int queries_per_view = 0;
  int views = 0;
  int feat_dim = 0;
  Tensor mu;                      // [N, 3]
  Tensor scale;                   // [N, 3]
  Tensor rot;                     // [N, 4] (w, x, y, z)
  Tensor alpha;                   // [N]
  Tensor feat;                    // [N, C]
  std::vector<int> view_index;    // [N]
  std::vector<uint8_t> active;    // [N]; inactive renders with alpha 0

  int64_t size() const { return mu.ndim() ? mu.shape[0] : 0; }
  static GaussianSet empty(int queries_per_view, int views, int feat_dim);
  Gaussian get(int64_t i) const;
  void set(int64_t i, const Gaussian& g);
  void validate() const;
};

struct DepthInit {
  Eigen::Vector3d mu;
  Eigen::Vector3d scale0;
  Quat rot0;
  bool active = false;
};

// Unprojects a query pixel through the nearest depth-map sample. `depth_map`
// is [Hf x Wf] at the feature grid; `downsample` maps image px to that grid.
// Non-positive depth marks the query inactive.
DepthInit init_from_depth(const Eigen::Vector2d& mu2d, const Tensor& depth_map,
                          const Camera& cam, double s0_factor, int downsample);

// mu += d_mu; rot = normalize(rot + d_rot); scale = clamp(scale*exp(dS)).
Gaussian apply_refinement(const Gaussian& g, const RefineDeltas& d,
                          double s_min, double s_max);

// G(x) = exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)), evaluated via Cholesky solve.
double density_at(const Gaussian& g, const Eigen::Vector3d& x);

// GTSR blocks per property plus a JSON sidecar {N, V, C}.
void save_gaussians(const std::string& dir, const GaussianSet& set);
GaussianSet load_gaussians(const std::string& dir);

}  // namespace gausstr
