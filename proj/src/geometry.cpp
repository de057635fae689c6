#include "gausstr/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace gausstr {

Quat Quat::normalized() const {
  const double n = norm();
  if (n == 0.0) throw std::domain_error("cannot normalize zero quaternion");
  return Quat{w / n, x / n, y / n, z / n};
}

Eigen::Matrix3d Camera::K() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

Eigen::Matrix4d Camera::Einv() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d Rt = rotation().transpose();
  inv.block<3, 3>(0, 0) = Rt;
  inv.block<3, 1>(0, 3) = -Rt * translation();
  return inv;
}

void Camera::validate() const {
  if (fx <= 0 || fy <= 0)
    throw std::invalid_argument("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("camera: image dims must be positive");
  const Eigen::Matrix3d R = rotation();
  if ((R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >
      1e-9)
    throw std::invalid_argument("camera: extrinsic rotation not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("camera: extrinsic rotation has det != +1");
  if ((E.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0)
    throw std::invalid_argument("camera: E last row must be [0 0 0 1]");
}

Eigen::Vector3d unproject(const Eigen::Vector2d& px, double depth,
                          const Camera& cam) {
  if (depth <= 0) throw std::domain_error("unproject: depth must be positive");
  // K^-1 (d * [u, v, 1]) lands at camera-space z = d.
  const Eigen::Vector3d p_cam((depth * px.x() - depth * cam.cx) / cam.fx,
                              (depth * px.y() - depth * cam.cy) / cam.fy,
                              depth);
  return cam.rotation().transpose() * (p_cam - cam.translation());
}

Projection project(const Eigen::Vector3d& world, const Camera& cam,
                   double z_near) {
  const Eigen::Vector3d p = cam.rotation() * world + cam.translation();
  Projection out;
  out.z = p.z();
  if (p.z() <= z_near) {
    out.behind = true;
    return out;
  }
  out.px = Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx,
                           cam.fy * p.y() / p.z() + cam.cy);
  return out;
}

Camera scale_camera(const Camera& cam, int new_width, int new_height) {
  if (new_width <= 0 || new_height <= 0) {
    throw std::invalid_argument("scale_camera: target size must be positive");
  }
  const double sx = double(new_width) / cam.width;
  const double sy = double(new_height) / cam.height;
  Camera out = cam;
  out.fx = cam.fx * sx;
  out.cx = cam.cx * sx;
  out.fy = cam.fy * sy;
  out.cy = cam.cy * sy;
  out.width = new_width;
  out.height = new_height;
  return out;
}

Eigen::Matrix3d quat_to_rotmat(const Quat& q_in) {
  const double n = q_in.norm();
  if (n == 0.0) throw std::domain_error("quat_to_rotmat: zero quaternion");
  if (std::abs(n - 1.0) > 1e-6)
    throw std::domain_error("quat_to_rotmat: quaternion not normalized");
  const double w = q_in.w, x = q_in.x, y = q_in.y, z = q_in.z;
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Quat rotmat_to_quat(const Eigen::Matrix3d& R) {
  // Shepperd's method: pick the dominant diagonal combination.
  Quat q;
  const double tr = R.trace();
  if (tr > 0) {
    double s = std::sqrt(tr + 1.0) * 2;
    q.w = 0.25 * s;
    q.x = (R(2, 1) - R(1, 2)) / s;
    q.y = (R(0, 2) - R(2, 0)) / s;
    q.z = (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2;
    q.w = (R(2, 1) - R(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (R(0, 1) + R(1, 0)) / s;
    q.z = (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2;
    q.w = (R(0, 2) - R(2, 0)) / s;
    q.x = (R(0, 1) + R(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (R(1, 2) + R(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2;
    q.w = (R(1, 0) - R(0, 1)) / s;
    q.x = (R(0, 2) + R(2, 0)) / s;
    q.y = (R(1, 2) + R(2, 1)) / s;
    q.z = 0.25 * s;
  }
  q = q.normalized();
  if (q.w < 0) q = Quat{-q.w, -q.x, -q.y, -q.z};
  return q;
}

Eigen::Matrix3d assemble_covariance(const Eigen::Vector3d& scale,
                                    const Quat& q) {
  if (scale.minCoeff() <= 0)
    throw std::domain_error("assemble_covariance: non-positive scale");
  const Eigen::Matrix3d R = quat_to_rotmat(q.normalized());
  const Eigen::Matrix3d M = R * scale.asDiagonal();
  return M * M.transpose();
}

}  // namespace gausstr
