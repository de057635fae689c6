#pragma once

#include <Eigen/Dense>

namespace gausstr {

// Unit quaternion, stored (w, x, y, z). q and -q map to the same rotation.
struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const;
};

// Pinhole camera. E maps world to camera coordinates; depth values are
// camera-space z (z-depth), not ray length.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Eigen::Matrix4d E = Eigen::Matrix4d::Identity();
  int width = 0, height = 0;

  Eigen::Matrix3d K() const;
  Eigen::Matrix3d rotation() const { return E.block<3, 3>(0, 0); }
  Eigen::Vector3d translation() const { return E.block<3, 1>(0, 3); }
  // Rigid inverse (camera -> world).
  Eigen::Matrix4d Einv() const;

  // Throws std::invalid_argument on bad intrinsics or a non-rigid E.
  void validate() const;
};

struct Projection {
  Eigen::Vector2d px;
  double z = 0;
  bool behind = false;  // camera-space z <= z_near; caller culls
};

// mu3d = E^-1 K^-1 (d * [u, v, 1]); d must be positive z-depth.
Eigen::Vector3d unproject(const Eigen::Vector2d& px, double depth,
                          const Camera& cam);

// Inverse of unproject on its range. Points with z <= z_near come back
// flagged `behind`.
Projection project(const Eigen::Vector3d& world, const Camera& cam,
                   double z_near);

// Same pose, new pixel grid: intrinsics scale by new/old size per axis.
Camera scale_camera(const Camera& cam, int new_width, int new_height);

// Requires an (approximately) unit quaternion; throws on a zero one.
Eigen::Matrix3d quat_to_rotmat(const Quat& q);

// Rotation block -> unit quaternion with non-negative w.
Quat rotmat_to_quat(const Eigen::Matrix3d& R);

// Sigma = R diag(S) diag(S)^T R^T; S componentwise positive.
Eigen::Matrix3d assemble_covariance(const Eigen::Vector3d& scale,
                                    const Quat& q);

}  // namespace gausstr
