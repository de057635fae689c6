#include "gausstr/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "gausstr/errors.hpp"
#include "gausstr/threading.hpp"
#include "nlohmann/json.hpp"

namespace gausstr {

void SyntheticScene::validate() const {
  prototypes.validate();
  grid.validate();
  for (const BoxPrimitive& b : boxes) {
    if ((b.max - b.min).minCoeff() <= 0) {
      throw DataError("box with non-positive extent");
    }
    if (b.cls < 0 || b.cls >= background_class()) {
      throw DataError("box class out of range");
    }
    for (int a = 0; a < 3; ++a) {
      if (b.min[a] < grid.min[a] - 1e-9 || b.max[a] > grid.max[a] + 1e-9) {
        throw DataError("box outside grid extents");
      }
    }
  }
  for (const Camera& c : cameras) c.validate();
}

Camera look_at(const Eigen::Vector3d& pos, const Eigen::Vector3d& target,
               double fov_deg, int size) {
  Eigen::Vector3d zc = (target - pos).normalized();
  Eigen::Vector3d up(0, 0, 1);
  if (std::abs(zc.dot(up)) > 1.0 - 1e-9) up = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d xc = zc.cross(up).normalized();
  const Eigen::Vector3d yc = zc.cross(xc);  // image-down in world space

  Camera cam;
  cam.width = size;
  cam.height = size;
  cam.fx = cam.fy = 0.5 * size / std::tan(0.5 * fov_deg * M_PI / 180.0);
  cam.cx = 0.5 * size;
  cam.cy = 0.5 * size;
  Eigen::Matrix3d W;
  W.row(0) = xc;
  W.row(1) = yc;
  W.row(2) = zc;
  cam.E.setIdentity();
  cam.E.block<3, 3>(0, 0) = W;
  cam.E.block<3, 1>(0, 3) = -W * pos;
  return cam;
}

namespace {

double snap(double v, double step) { return std::round(v / step) * step; }

bool overlaps_xy(const BoxPrimitive& a, const BoxPrimitive& b, double gap) {
  return a.min.x() < b.max.x() + gap && b.min.x() < a.max.x() + gap &&
         a.min.y() < b.max.y() + gap && b.min.y() < a.max.y() + gap;
}

}  // namespace

SyntheticScene generate_scene(const SceneGenConfig& cfg, uint64_t seed) {
  if (cfg.box_classes < 1) throw ConfigError("need at least one box class");
  const int n_c = cfg.box_classes + 2;  // ground + box classes + background
  if (n_c > cfg.feat_dim) {
    throw ConfigError("feature dim too small for orthonormal prototypes");
  }

  SyntheticScene s;
  s.seed = seed;
  s.noise_sigma = cfg.noise_sigma;
  s.grid.min = Eigen::Vector3d(-0.5 * cfg.extent_xy, -0.5 * cfg.extent_xy, 0);
  s.grid.max = Eigen::Vector3d(0.5 * cfg.extent_xy, 0.5 * cfg.extent_xy,
                               cfg.extent_z);
  s.grid.voxel = cfg.voxel;
  s.grid.validate();

  Rng rng(seed);

  // Orthonormal prototypes via QR of a random matrix.
  {
    Rng pr = rng.fork(1);
    Eigen::MatrixXd A(cfg.feat_dim, n_c);
    for (int i = 0; i < cfg.feat_dim; ++i) {
      for (int j = 0; j < n_c; ++j) A(i, j) = pr.normal();
    }
    const Eigen::MatrixXd Q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() *
        Eigen::MatrixXd::Identity(cfg.feat_dim, n_c);
    s.prototypes.f_t = Tensor::zeros({n_c, cfg.feat_dim});
    for (int c = 0; c < n_c; ++c) {
      const Eigen::VectorXd col = Q.col(c).normalized();
      for (int d = 0; d < cfg.feat_dim; ++d) {
        s.prototypes.f_t.data[size_t(c) * cfg.feat_dim + d] = col(d);
      }
    }
    s.prototypes.names.push_back("ground");
    for (int c = 1; c <= cfg.box_classes; ++c) {
      s.prototypes.names.push_back("block" + std::to_string(c));
    }
    s.prototypes.names.push_back("background");
  }

  // Ground slab fills the bottom voxel layer.
  BoxPrimitive ground;
  ground.min = s.grid.min;
  ground.max = Eigen::Vector3d(s.grid.max.x(), s.grid.max.y(),
                               s.grid.min.z() + cfg.voxel);
  ground.cls = 0;
  s.boxes.push_back(ground);

  // Boxes rest on the slab, snapped to the voxel lattice, non-overlapping.
  {
    Rng br = rng.fork(2);
    const double top = ground.max.z();
    for (int b = 0; b < cfg.boxes; ++b) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        BoxPrimitive box;
        box.cls = 1 + int(br.uniform_int(cfg.box_classes));
        const double sx = snap(br.uniform(0.8, 2.4), cfg.voxel);
        const double sy = snap(br.uniform(0.8, 2.4), cfg.voxel);
        const double sz = snap(br.uniform(0.8, 2.0), cfg.voxel);
        const double reach = 0.5 * cfg.extent_xy - 0.5 * std::max(sx, sy) -
                             cfg.voxel;
        const double cx = snap(br.uniform(-reach, reach), cfg.voxel);
        const double cy = snap(br.uniform(-reach, reach), cfg.voxel);
        box.min = Eigen::Vector3d(cx - 0.5 * sx, cy - 0.5 * sy, top);
        box.max = Eigen::Vector3d(cx + 0.5 * sx, cy + 0.5 * sy,
                                  std::min(top + sz, s.grid.max.z()));
        bool clash = false;
        for (size_t i = 1; i < s.boxes.size(); ++i) {
          if (overlaps_xy(box, s.boxes[i], 0.4)) {
            clash = true;
            break;
          }
        }
        if (!clash) {
          s.boxes.push_back(box);
          break;
        }
      }
    }
  }

  const Eigen::Vector3d target(0, 0, 0.6);
  for (int v = 0; v < cfg.views; ++v) {
    const double th = 2.0 * M_PI * v / cfg.views;
    const Eigen::Vector3d pos(cfg.camera_radius * std::cos(th),
                              cfg.camera_radius * std::sin(th),
                              cfg.camera_height);
    s.cameras.push_back(look_at(pos, target, cfg.fov_deg, cfg.image_size));
  }

  s.validate();
  return s;
}

bool raycast_boxes(const std::vector<BoxPrimitive>& boxes,
                   const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   double t_min, double* t_hit, int* cls_hit) {
  double best = std::numeric_limits<double>::infinity();
  int best_cls = -1;
  for (const BoxPrimitive& b : boxes) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(dir[a]) < 1e-12) {
        if (origin[a] < b.min[a] || origin[a] > b.max[a]) {
          miss = true;
          break;
        }
        continue;
      }
      const double inv = 1.0 / dir[a];
      double ta = (b.min[a] - origin[a]) * inv;
      double tb = (b.max[a] - origin[a]) * inv;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) {
        miss = true;
        break;
      }
    }
    // Entry points behind t_min (or rays starting inside) do not count.
    if (miss || t0 <= t_min) continue;
    if (t0 < best) {
      best = t0;
      best_cls = b.cls;
    }
  }
  if (best_cls < 0) return false;
  *t_hit = best;
  *cls_hit = best_cls;
  return true;
}

OracleMaps oracle_render(const SyntheticScene& scene, const Camera& cam,
                         uint64_t view_salt) {
  const int H = cam.height;
  const int W = cam.width;
  const int64_t C = scene.prototypes.f_t.shape[1];
  OracleMaps maps;
  maps.feat = Tensor::zeros({H, W, C});
  maps.depth = Tensor::zeros({H, W});
  maps.classes.assign(size_t(H) * W, uint8_t(scene.background_class()));

  const Eigen::Matrix3d Rcw = cam.rotation().transpose();
  const Eigen::Vector3d origin = -Rcw * cam.translation();
  const Rng view_rng = Rng(scene.seed).fork(0xFEA70000u + view_salt);
  const double* protos = scene.prototypes.f_t.data.data();

  parallel_for(H, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      for (int j = 0; j < W; ++j) {
        const size_t p = size_t(i) * W + j;
        const Eigen::Vector3d dir_cam((j + 0.5 - cam.cx) / cam.fx,
                                      (i + 0.5 - cam.cy) / cam.fy, 1.0);
        const Eigen::Vector3d dir = Rcw * dir_cam;  // unit camera z => t == z
        double t;
        int cls;
        if (raycast_boxes(scene.boxes, origin, dir, 1e-6, &t, &cls)) {
          maps.depth.data[p] = t;
          maps.classes[p] = uint8_t(cls);
        } else {
          cls = scene.background_class();
        }
        double* f = maps.feat.data.data() + p * C;
        const double* proto = protos + size_t(cls) * C;
        if (scene.noise_sigma == 0.0) {
          for (int64_t d = 0; d < C; ++d) f[d] = proto[d];
        } else {
          Rng pix = view_rng.fork(p);
          double nrm = 0.0;
          for (int64_t d = 0; d < C; ++d) {
            f[d] = proto[d] + scene.noise_sigma * pix.normal();
            nrm += f[d] * f[d];
          }
          nrm = std::sqrt(nrm);
          if (nrm > 0) {
            for (int64_t d = 0; d < C; ++d) f[d] /= nrm;
          }
        }
      }
    }
  });
  return maps;
}

OccupancyGrid ground_truth_grid(const SyntheticScene& scene) {
  OccupancyGrid g =
      OccupancyGrid::empty(scene.grid, scene.prototypes.n_classes());
  const int nx = scene.grid.nx(), ny = scene.grid.ny(), nz = scene.grid.nz();
  for (int iz = 0; iz < nz; ++iz) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        const Eigen::Vector3d c = scene.grid.center(ix, iy, iz);
        for (const BoxPrimitive& b : scene.boxes) {
          if (c.x() >= b.min.x() && c.x() <= b.max.x() && c.y() >= b.min.y() &&
              c.y() <= b.max.y() && c.z() >= b.min.z() && c.z() <= b.max.z()) {
            g.at(ix, iy, iz) = uint8_t(b.cls);
            break;
          }
        }
      }
    }
  }
  return g;
}

namespace {

nlohmann::json vec3_json(const Eigen::Vector3d& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

Eigen::Vector3d vec3_from(const nlohmann::json& j) {
  return Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(),
                         j.at(2).get<double>());
}

}  // namespace

void save_scene(const std::string& path, const SyntheticScene& scene) {
  nlohmann::json j;
  j["seed"] = scene.seed;
  j["noise_sigma"] = scene.noise_sigma;
  j["grid"] = {{"min", vec3_json(scene.grid.min)},
               {"max", vec3_json(scene.grid.max)},
               {"voxel", scene.grid.voxel}};
  j["boxes"] = nlohmann::json::array();
  for (const BoxPrimitive& b : scene.boxes) {
    j["boxes"].push_back({{"min", vec3_json(b.min)},
                          {"max", vec3_json(b.max)},
                          {"cls", b.cls}});
  }
  j["class_names"] = scene.prototypes.names;
  j["prototypes"] = nlohmann::json::array();
  const int64_t c_dim = scene.prototypes.f_t.shape[1];
  for (int c = 0; c < scene.prototypes.n_classes(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (int64_t d = 0; d < c_dim; ++d) {
      row.push_back(scene.prototypes.f_t.data[size_t(c) * c_dim + d]);
    }
    j["prototypes"].push_back(row);
  }
  j["cameras"] = nlohmann::json::array();
  for (const Camera& cam : scene.cameras) {
    nlohmann::json e = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) e.push_back(cam.E(r, c));
    }
    j["cameras"].push_back({{"fx", cam.fx},
                            {"fy", cam.fy},
                            {"cx", cam.cx},
                            {"cy", cam.cy},
                            {"width", cam.width},
                            {"height", cam.height},
                            {"E", e}});
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << "\n";
}

SyntheticScene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad scene file " + path + ": " + e.what());
  }

  SyntheticScene s;
  try {
    s.seed = j.at("seed").get<uint64_t>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.grid.min = vec3_from(j.at("grid").at("min"));
    s.grid.max = vec3_from(j.at("grid").at("max"));
    s.grid.voxel = j.at("grid").at("voxel").get<double>();
    for (const auto& jb : j.at("boxes")) {
      BoxPrimitive b;
      b.min = vec3_from(jb.at("min"));
      b.max = vec3_from(jb.at("max"));
      b.cls = jb.at("cls").get<int>();
      s.boxes.push_back(b);
    }
    s.prototypes.names = j.at("class_names").get<std::vector<std::string>>();
    const auto& rows = j.at("prototypes");
    const int n_c = int(rows.size());
    const int64_t c_dim = n_c ? int64_t(rows.at(0).size()) : 0;
    s.prototypes.f_t = Tensor::zeros({n_c, c_dim});
    for (int c = 0; c < n_c; ++c) {
      for (int64_t d = 0; d < c_dim; ++d) {
        s.prototypes.f_t.data[size_t(c) * c_dim + d] =
            rows.at(size_t(c)).at(size_t(d)).get<double>();
      }
    }
    for (const auto& jc : j.at("cameras")) {
      Camera cam;
      cam.fx = jc.at("fx").get<double>();
      cam.fy = jc.at("fy").get<double>();
      cam.cx = jc.at("cx").get<double>();
      cam.cy = jc.at("cy").get<double>();
      cam.width = jc.at("width").get<int>();
      cam.height = jc.at("height").get<int>();
      const auto& e = jc.at("E");
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          cam.E(r, c) = e.at(size_t(r * 4 + c)).get<double>();
        }
      }
      s.cameras.push_back(cam);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad scene file " + path + ": " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace gausstr
