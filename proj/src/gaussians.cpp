#include "gausstr/gaussians.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gausstr/errors.hpp"
#include "nlohmann/json.hpp"

namespace gausstr {

void Gaussian::validate() const {
  if (!mu.allFinite() || !scale.allFinite() || !std::isfinite(alpha)) {
    throw NumericError("gaussian has non-finite parameters");
  }
  if (scale.minCoeff() <= 0.0) {
    throw NumericError("gaussian scale must be positive");
  }
  if (alpha < 0.0 || alpha > 1.0) {
    throw NumericError("gaussian opacity outside [0, 1]");
  }
  if (std::abs(rot.norm() - 1.0) > 1e-6) {
    throw NumericError("gaussian rotation quaternion is not unit");
  }
}

GaussianSet GaussianSet::empty(int queries_per_view, int views, int feat_dim) {
  GaussianSet s;
  s.queries_per_view = queries_per_view;
  s.views = views;
  s.feat_dim = feat_dim;
  const int64_t n = int64_t(queries_per_view) * views;
  s.mu = Tensor::zeros({n, 3});
  s.scale = Tensor::full({n, 3}, 1.0);
  s.rot = Tensor::zeros({n, 4});
  for (int64_t i = 0; i < n; ++i) s.rot.data[i * 4] = 1.0;  // identity quat
  s.alpha = Tensor::zeros({n});
  s.feat = Tensor::zeros({n, feat_dim});
  s.view_index.assign(size_t(n), 0);
  s.active.assign(size_t(n), 1);
  return s;
}

Gaussian GaussianSet::get(int64_t i) const {
  Gaussian g;
  g.mu = Eigen::Vector3d(mu.data[i * 3], mu.data[i * 3 + 1], mu.data[i * 3 + 2]);
  g.scale = Eigen::Vector3d(scale.data[i * 3], scale.data[i * 3 + 1],
                            scale.data[i * 3 + 2]);
  g.rot = Quat{rot.data[i * 4], rot.data[i * 4 + 1], rot.data[i * 4 + 2],
               rot.data[i * 4 + 3]};
  g.alpha = alpha.data[i];
  g.feat.assign(feat.data.begin() + i * feat_dim,
                feat.data.begin() + (i + 1) * feat_dim);
  return g;
}

void GaussianSet::set(int64_t i, const Gaussian& g) {
  for (int k = 0; k < 3; ++k) {
    mu.data[i * 3 + k] = g.mu[k];
    scale.data[i * 3 + k] = g.scale[k];
  }
  rot.data[i * 4] = g.rot.w;
  rot.data[i * 4 + 1] = g.rot.x;
  rot.data[i * 4 + 2] = g.rot.y;
  rot.data[i * 4 + 3] = g.rot.z;
  alpha.data[i] = g.alpha;
  if (int64_t(g.feat.size()) != feat_dim) {
    throw DataError("feature length mismatch in GaussianSet::set");
  }
  std::copy(g.feat.begin(), g.feat.end(), feat.data.begin() + i * feat_dim);
}

void GaussianSet::validate() const {
  const int64_t n = size();
  if (n != int64_t(queries_per_view) * views) {
    throw DataError("gaussian count does not match queries_per_view * views");
  }
  for (int64_t i = 0; i < n; ++i) {
    if (active[size_t(i)]) get(i).validate();
    if (view_index[size_t(i)] < 0 || view_index[size_t(i)] >= views) {
      throw DataError("gaussian view index out of range");
    }
  }
}

DepthInit init_from_depth(const Eigen::Vector2d& mu2d, const Tensor& depth_map,
                          const Camera& cam, double s0_factor, int downsample) {
  if (depth_map.ndim() != 2) throw DataError("depth map must be 2-D");
  const int64_t hf = depth_map.shape[0];
  const int64_t wf = depth_map.shape[1];
  int64_t fi = int64_t(std::floor(mu2d.y() / downsample));
  int64_t fj = int64_t(std::floor(mu2d.x() / downsample));
  fi = std::clamp<int64_t>(fi, 0, hf - 1);
  fj = std::clamp<int64_t>(fj, 0, wf - 1);
  const double d = depth_map.data[fi * wf + fj];

  DepthInit out;
  if (!(d > 0.0) || !std::isfinite(d)) {
    out.mu = Eigen::Vector3d::Zero();
    out.scale0 = Eigen::Vector3d::Ones();
    out.rot0 = Quat{};
    out.active = false;
    return out;
  }
  out.mu = unproject(mu2d, d, cam);
  out.scale0 = Eigen::Vector3d::Constant(s0_factor * d);
  // Start aligned with the camera body so splats face the image plane.
  out.rot0 = rotmat_to_quat(cam.rotation().transpose());
  out.active = true;
  return out;
}

Gaussian apply_refinement(const Gaussian& g, const RefineDeltas& d,
                          double s_min, double s_max) {
  Gaussian out = g;
  out.mu = g.mu + d.d_mu;
  Quat q{g.rot.w + d.d_rot.w, g.rot.x + d.d_rot.x, g.rot.y + d.d_rot.y,
         g.rot.z + d.d_rot.z};
  out.rot = q.normalized();
  for (int k = 0; k < 3; ++k) {
    const double s = g.scale[k] * std::exp(d.d_log_scale[k]);
    out.scale[k] = std::clamp(s, s_min, s_max);
  }
  return out;
}

double density_at(const Gaussian& g, const Eigen::Vector3d& x) {
  const Eigen::Matrix3d sigma = assemble_covariance(g.scale, g.rot);
  Eigen::LLT<Eigen::Matrix3d> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericError("covariance is not positive definite");
  }
  const Eigen::Vector3d diff = x - g.mu;
  const double quad = diff.dot(llt.solve(diff));
  return std::exp(-0.5 * quad);
}

namespace {

void write_views(const std::string& path, const std::vector<int>& vi,
                 const std::vector<uint8_t>& act) {
  Tensor t = Tensor::zeros({int64_t(vi.size()), 2});
  for (size_t i = 0; i < vi.size(); ++i) {
    t.data[i * 2] = vi[i];
    t.data[i * 2 + 1] = act[i];
  }
  write_gtsr(path, t, GtsrDtype::F64);
}

}  // namespace

void save_gaussians(const std::string& dir, const GaussianSet& set) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_gtsr(dir + "/mu.gtsr", set.mu, GtsrDtype::F64);
  write_gtsr(dir + "/scale.gtsr", set.scale, GtsrDtype::F64);
  write_gtsr(dir + "/rot.gtsr", set.rot, GtsrDtype::F64);
  write_gtsr(dir + "/alpha.gtsr", set.alpha, GtsrDtype::F64);
  write_gtsr(dir + "/feat.gtsr", set.feat, GtsrDtype::F64);
  write_views(dir + "/views.gtsr", set.view_index, set.active);

  nlohmann::json meta;
  meta["gaussians"] = set.size();
  meta["queries_per_view"] = set.queries_per_view;
  meta["views"] = set.views;
  meta["feat_dim"] = set.feat_dim;
  std::ofstream f(dir + "/gaussians.json");
  if (!f) throw DataError("cannot write " + dir + "/gaussians.json");
  f << meta.dump(2) << "\n";
}

GaussianSet load_gaussians(const std::string& dir) {
  std::ifstream f(dir + "/gaussians.json");
  if (!f) throw DataError("cannot read " + dir + "/gaussians.json");
  nlohmann::json meta = nlohmann::json::parse(f, nullptr, true);

  GaussianSet s;
  s.queries_per_view = meta.at("queries_per_view").get<int>();
  s.views = meta.at("views").get<int>();
  s.feat_dim = meta.at("feat_dim").get<int>();
  s.mu = read_gtsr(dir + "/mu.gtsr");
  s.scale = read_gtsr(dir + "/scale.gtsr");
  s.rot = read_gtsr(dir + "/rot.gtsr");
  s.alpha = read_gtsr(dir + "/alpha.gtsr");
  s.feat = read_gtsr(dir + "/feat.gtsr");

  const Tensor views = read_gtsr(dir + "/views.gtsr");
  const int64_t n = views.ndim() ? views.shape[0] : 0;
  s.view_index.resize(size_t(n));
  s.active.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    s.view_index[size_t(i)] = int(views.data[i * 2]);
    s.active[size_t(i)] = uint8_t(views.data[i * 2 + 1] != 0.0);
  }
  if (s.size() != n || s.size() != int64_t(s.queries_per_view) * s.views) {
    throw DataError("gaussian blocks disagree on count in " + dir);
  }
  return s;
}

}  // namespace gausstr
