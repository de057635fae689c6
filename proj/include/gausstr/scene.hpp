#pragma once

#include <string>
#include <vector>

#include "gausstr/geometry.hpp"
#include "gausstr/occupancy.hpp"
#include "gausstr/rng.hpp"
#include "gausstr/tensor.hpp"

namespace gausstr {

struct BoxPrimitive {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
  int cls = 0;
};

// Stand-in world: boxes with class-tagged unit feature prototypes, a camera
// rig, and the evaluation grid. The last prototype row is the background
// (sky) class; boxes never carry it.
struct SyntheticScene {
  std::vector<BoxPrimitive> boxes;
  TextPrototypes prototypes;
  std::vector<Camera> cameras;
  GridSpec grid;
  double noise_sigma = 0.1;
  uint64_t seed = 0;

  int background_class() const { return prototypes.n_classes() - 1; }
  void validate() const;
};

struct SceneGenConfig {
  int views = 2;
  int image_size = 128;
  double fov_deg = 70.0;
  int box_classes = 2;      // classes beyond the ground slab
  int boxes = 4;            // boxes beyond the ground slab
  double extent_xy = 16.0;  // grid spans [-x/2, x/2]^2
  double extent_z = 3.2;    // grid spans [0, z]
  double voxel = 0.4;
  double camera_radius = 6.5;
  double camera_height = 1.8;
  double noise_sigma = 0.1;
  int feat_dim = 32;
};

// Deterministic per seed: ground slab (class 0) plus non-overlapping boxes
// resting on it, orthonormal prototypes, and a camera ring aimed at the
// scene center.
SyntheticScene generate_scene(const SceneGenConfig& cfg, uint64_t seed);

// Square pinhole at `pos` aimed at `target`, z-up world, image y down.
Camera look_at(const Eigen::Vector3d& pos, const Eigen::Vector3d& target,
               double fov_deg, int size);

struct OracleMaps {
  Tensor feat;                  // [H, W, C], unit rows + noise, renormalized
  Tensor depth;                 // [H, W], z-depth meters; 0 = sky
  std::vector<uint8_t> classes; // [H*W], background id for sky
};

// Per-pixel ray cast against the boxes at the camera's own resolution.
// Depth is the camera-space z of the first box hit (slab method); features
// are the hit class prototype with N(0, sigma^2) noise, renormalized. The
// noise stream is forked per pixel, so results are thread-count invariant.
OracleMaps oracle_render(const SyntheticScene& scene, const Camera& cam,
                         uint64_t view_salt);

// First intersection of ray origin + t * dir with the boxes; camera-space
// z-depth and class out. Returns false for a sky ray.
bool raycast_boxes(const std::vector<BoxPrimitive>& boxes,
                   const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   double t_min, double* t_hit, int* cls_hit);

// Voxel-center rule: a cell takes the class of the first box containing its
// center, else empty.
OccupancyGrid ground_truth_grid(const SyntheticScene& scene);

void save_scene(const std::string& path, const SyntheticScene& scene);
SyntheticScene load_scene(const std::string& path);

}  // namespace gausstr
