#pragma once

#include <string>
#include <vector>

#include "gausstr/gaussians.hpp"
#include "gausstr/tensor.hpp"

namespace gausstr {

// Axis-aligned voxel lattice. Extents must be whole multiples of the voxel
// size; cell (ix, iy, iz) spans min + voxel * [i, i+1) per axis.
struct GridSpec {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
  double voxel = 0.4;

  void validate() const;
  int nx() const { return int(std::llround((max.x() - min.x()) / voxel)); }
  int ny() const { return int(std::llround((max.y() - min.y()) / voxel)); }
  int nz() const { return int(std::llround((max.z() - min.z()) / voxel)); }
  int64_t cells() const { return int64_t(nx()) * ny() * nz(); }
  Eigen::Vector3d center(int ix, int iy, int iz) const {
    return min + voxel * Eigen::Vector3d(ix + 0.5, iy + 0.5, iz + 0.5);
  }
  // Voxel index containing p along one axis, unclamped.
  int index(double p, int axis) const {
    return int(std::floor((p - min[axis]) / voxel));
  }
  bool operator==(const GridSpec& o) const {
    return min == o.min && max == o.max && voxel == o.voxel;
  }
};

struct TextPrototypes {
  Tensor f_t;                      // [N_C, C], unit rows
  std::vector<std::string> names;  // length N_C

  int n_classes() const { return int(names.size()); }
  void validate() const;
};

struct OccupancyGrid {
  static constexpr uint8_t kEmpty = 255;

  GridSpec spec;
  int n_classes = 0;
  std::vector<uint8_t> classes;  // x-fastest: idx = (iz*ny + iy)*nx + ix

  static OccupancyGrid empty(const GridSpec& spec, int n_classes);
  uint8_t& at(int ix, int iy, int iz) {
    return classes[size_t((int64_t(iz) * spec.ny() + iy) * spec.nx() + ix)];
  }
  uint8_t at(int ix, int iy, int iz) const {
    return classes[size_t((int64_t(iz) * spec.ny() + iy) * spec.nx() + ix)];
  }
  int64_t occupied_count() const;
};

// Row-softmax of f . f_t^T, one row per input feature.
Tensor semantic_logits(const Tensor& f, const TextPrototypes& protos);

// Density-weighted semantic voxelization. Per voxel center x: weight
// w = sum_i alpha_i G_i(x) and feature f = weighted mean, restricted to
// Gaussians whose 3 sigma AABB covers the cell (the truncation is part of
// the definition, so the all-pairs reference path matches exactly). A cell
// is occupied when w >= tau_occ; its class is the best-matching prototype.
OccupancyGrid voxelize(const GaussianSet& set, const TextPrototypes& protos,
                       const GridSpec& spec, double tau_occ);

// All-pairs reference: every Gaussian tested against every cell. Same
// truncated density, same per-cell accumulation order, so it must agree
// with voxelize() cell for cell.
OccupancyGrid voxelize_brute(const GaussianSet& set,
                             const TextPrototypes& protos,
                             const GridSpec& spec, double tau_occ);

struct IouReport {
  double binary_iou = 0;
  double miou = 0;
  // Per class id; -1 marks classes absent from both grids (excluded).
  std::vector<double> per_class;
};

// Grids must share a spec. Per-class IoU over voxel labels; mIoU averages
// classes present in either grid; binary IoU ignores labels.
IouReport iou(const OccupancyGrid& pred, const OccupancyGrid& gt);

void save_gocc(const std::string& path, const OccupancyGrid& grid);
OccupancyGrid load_gocc(const std::string& path);

}  // namespace gausstr
