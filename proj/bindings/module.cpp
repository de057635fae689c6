#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "gausstr/errors.hpp"
#include "gausstr/losses.hpp"
#include "gausstr/network.hpp"
#include "gausstr/occupancy.hpp"
#include "gausstr/renderer.hpp"
#include "gausstr/scene.hpp"
#include "gausstr/threading.hpp"
#include "gausstr/trainer.hpp"

namespace py = pybind11;
using namespace gausstr;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DArray& a) {
  std::vector<int64_t> shape(size_t(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = a.shape(i);
  Tensor t = Tensor::zeros(std::move(shape));
  std::memcpy(t.data.data(), a.data(), t.data.size() * sizeof(double));
  return t;
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::memcpy(a.mutable_data(), t.data.data(),
              t.data.size() * sizeof(double));
  return a;
}

py::array_t<uint8_t> grid_array(const OccupancyGrid& g) {
  py::array_t<uint8_t> a(
      {py::ssize_t(g.spec.nz()), py::ssize_t(g.spec.ny()),
       py::ssize_t(g.spec.nx())});
  std::memcpy(a.mutable_data(), g.classes.data(), g.classes.size());
  return a;
}

GridSpec make_spec(const Eigen::Vector3d& gmin, const Eigen::Vector3d& gmax,
                   double voxel) {
  GridSpec spec;
  spec.min = gmin;
  spec.max = gmax;
  spec.voxel = voxel;
  spec.validate();
  return spec;
}

// Column-count checks happen in validate(); this only assembles the SoA.
GaussianSet make_set(const DArray& mu, const DArray& scale, const DArray& rot,
                     const DArray& alpha, const DArray& feat,
                     const py::array_t<bool>& active) {
  if (mu.ndim() != 2 || mu.shape(1) != 3) {
    throw DataError("mu must be [N, 3]");
  }
  const int n = int(mu.shape(0));
  if (scale.ndim() != 2 || scale.shape(0) != n || scale.shape(1) != 3 ||
      rot.ndim() != 2 || rot.shape(0) != n || rot.shape(1) != 4 ||
      alpha.ndim() != 1 || alpha.shape(0) != n || feat.ndim() != 2 ||
      feat.shape(0) != n) {
    throw DataError("expected scale [N, 3], rot [N, 4], alpha [N], feat [N, C]");
  }
  const int c = int(feat.shape(1));
  GaussianSet set = GaussianSet::empty(n, 1, c);
  set.mu = to_tensor(mu);
  set.scale = to_tensor(scale);
  set.rot = to_tensor(rot);
  set.alpha = to_tensor(alpha);
  set.feat = to_tensor(feat);
  if (active.ndim() == 1 && active.shape(0) == n) {
    auto r = active.unchecked<1>();
    for (int i = 0; i < n; ++i) set.active[size_t(i)] = r(i) ? 1 : 0;
  }
  set.validate();
  return set;
}

TextPrototypes make_protos(const DArray& f_t,
                           const std::vector<std::string>& names) {
  TextPrototypes p;
  p.f_t = to_tensor(f_t);
  p.names = names;
  p.validate();
  return p;
}

py::dict report_dict(const LossReport& r) {
  py::dict d;
  d["total"] = r.total;
  d["feat"] = r.feat;
  d["depth"] = r.depth;
  d["silog"] = r.silog;
  d["l1"] = r.l1;
  d["seg"] = r.seg;
  return d;
}

// Owns the scene copy, the network, and the session together so python
// lifetime management cannot dangle the references TrainSession keeps.
class PyTrainer {
 public:
  PyTrainer(const SyntheticScene& scene, const NetConfig& nc,
            const TrainConfig& tc)
      : scene_(scene), net_(nc, tc.seed), sess_(net_, scene_, tc) {}

  py::dict step() { return report_dict(sess_.step()); }

  py::dict train(int steps) {
    LossReport last;
    for (int s = 0; s < steps; ++s) last = sess_.step();
    return report_dict(last);
  }

  py::dict predict() {
    const GaussianSet set =
        net_.predict(sess_.views(), scene_.grid.min, scene_.grid.max);
    py::dict d;
    d["mu"] = to_array(set.mu);
    d["scale"] = to_array(set.scale);
    d["rot"] = to_array(set.rot);
    d["alpha"] = to_array(set.alpha);
    d["feat"] = to_array(set.feat);
    py::array_t<bool> act(py::ssize_t(set.active.size()));
    for (size_t i = 0; i < set.active.size(); ++i) {
      act.mutable_data()[i] = set.active[i] != 0;
    }
    d["active"] = act;
    return d;
  }

  py::array_t<uint8_t> voxelize_prediction(double tau) {
    const GaussianSet set =
        net_.predict(sess_.views(), scene_.grid.min, scene_.grid.max);
    return grid_array(voxelize(set, scene_.prototypes, scene_.grid, tau));
  }

  py::dict evaluate(double tau) {
    const GaussianSet set =
        net_.predict(sess_.views(), scene_.grid.min, scene_.grid.max);
    const OccupancyGrid pred =
        voxelize(set, scene_.prototypes, scene_.grid, tau);
    const IouReport r = iou(pred, ground_truth_grid(scene_));
    py::dict d;
    d["binary_iou"] = r.binary_iou;
    d["miou"] = r.miou;
    d["per_class"] = r.per_class;
    return d;
  }

 private:
  SyntheticScene scene_;
  GaussTrNet net_;
  TrainSession sess_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feed-forward 3D gaussian occupancy engine";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);

  m.def("set_threads", &set_thread_count,
        "Worker thread count; 0 restores the hardware default",
        py::arg("n"));

  py::class_<Camera>(m, "Camera")
      .def_readonly("fx", &Camera::fx)
      .def_readonly("fy", &Camera::fy)
      .def_readonly("cx", &Camera::cx)
      .def_readonly("cy", &Camera::cy)
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def_property_readonly(
          "extrinsics", [](const Camera& c) { return Eigen::Matrix4d(c.E); });

  m.def("look_at", &look_at, "Square pinhole at pos aimed at target",
        py::arg("pos"), py::arg("target"), py::arg("fov_deg"),
        py::arg("size"));
  m.def(
      "unproject",
      [](const Eigen::Vector2d& px, double depth, const Camera& cam) {
        return unproject(px, depth, cam);
      },
      py::arg("px"), py::arg("depth"), py::arg("camera"));
  m.def(
      "project",
      [](const Eigen::Vector3d& world, const Camera& cam, double z_near) {
        const Projection p = project(world, cam, z_near);
        return py::make_tuple(p.px, p.z, p.behind);
      },
      "Returns (px, z, behind)", py::arg("world"), py::arg("camera"),
      py::arg("z_near") = 0.05);
  m.def(
      "assemble_covariance",
      [](const Eigen::Vector3d& scale, const Eigen::Vector4d& q) {
        return Eigen::Matrix3d(
            assemble_covariance(scale, Quat{q[0], q[1], q[2], q[3]}));
      },
      "Sigma from scales and a (w, x, y, z) quaternion", py::arg("scale"),
      py::arg("quat"));

  py::class_<SyntheticScene>(m, "Scene")
      .def_property_readonly("seed",
                             [](const SyntheticScene& s) { return s.seed; })
      .def_property_readonly(
          "class_names",
          [](const SyntheticScene& s) { return s.prototypes.names; })
      .def_property_readonly(
          "prototypes",
          [](const SyntheticScene& s) { return to_array(s.prototypes.f_t); })
      .def_property_readonly(
          "n_cameras",
          [](const SyntheticScene& s) { return int(s.cameras.size()); })
      .def("camera",
           [](const SyntheticScene& s, int i) {
             return s.cameras.at(size_t(i));
           })
      .def("grid",
           [](const SyntheticScene& s) {
             py::dict d;
             d["min"] = Eigen::Vector3d(s.grid.min);
             d["max"] = Eigen::Vector3d(s.grid.max);
             d["voxel"] = s.grid.voxel;
             d["shape"] = py::make_tuple(s.grid.nz(), s.grid.ny(),
                                         s.grid.nx());
             return d;
           })
      .def(
          "oracle_render",
          [](const SyntheticScene& s, int view, int downsample) {
            const Camera& full = s.cameras.at(size_t(view));
            const Camera cam = downsample > 1
                                   ? scale_camera(full,
                                                  full.width / downsample,
                                                  full.height / downsample)
                                   : full;
            const OracleMaps maps = oracle_render(s, cam, uint64_t(view));
            py::dict d;
            d["feat"] = to_array(maps.feat);
            d["depth"] = to_array(maps.depth);
            return d;
          },
          py::arg("view"), py::arg("downsample") = 1)
      .def("ground_truth", [](const SyntheticScene& s) {
        return grid_array(ground_truth_grid(s));
      });

  m.def(
      "generate_scene",
      [](uint64_t seed, int views, int image_size, double fov_deg,
         int box_classes, int boxes, double extent_xy, double extent_z,
         double voxel, double camera_radius, double camera_height,
         double noise_sigma, int feat_dim) {
        SceneGenConfig cfg;
        cfg.views = views;
        cfg.image_size = image_size;
        cfg.fov_deg = fov_deg;
        cfg.box_classes = box_classes;
        cfg.boxes = boxes;
        cfg.extent_xy = extent_xy;
        cfg.extent_z = extent_z;
        cfg.voxel = voxel;
        cfg.camera_radius = camera_radius;
        cfg.camera_height = camera_height;
        cfg.noise_sigma = noise_sigma;
        cfg.feat_dim = feat_dim;
        return generate_scene(cfg, seed);
      },
      py::arg("seed") = 0, py::arg("views") = 2, py::arg("image_size") = 64,
      py::arg("fov_deg") = 70.0, py::arg("box_classes") = 1,
      py::arg("boxes") = 2, py::arg("extent_xy") = 8.0,
      py::arg("extent_z") = 3.2, py::arg("voxel") = 0.4,
      py::arg("camera_radius") = 6.5, py::arg("camera_height") = 1.8,
      py::arg("noise_sigma") = 0.05, py::arg("feat_dim") = 32);

  m.def(
      "render",
      [](const DArray& mu, const DArray& scale, const DArray& rot,
         const DArray& alpha, const DArray& feat,
         const py::array_t<bool>& active, const Camera& cam) {
        const GaussianSet set = make_set(mu, scale, rot, alpha, feat, active);
        const RenderedView v = render(set, cam, RenderSettings{});
        py::dict d;
        d["feat"] = to_array(v.feat);
        d["depth"] = to_array(v.depth);
        d["trans"] = to_array(v.trans);
        return d;
      },
      "Tile-based alpha compositing of a gaussian set", py::arg("mu"),
      py::arg("scale"), py::arg("rot"), py::arg("alpha"), py::arg("feat"),
      py::arg("active"), py::arg("camera"));

  m.def(
      "voxelize",
      [](const DArray& mu, const DArray& scale, const DArray& rot,
         const DArray& alpha, const DArray& feat,
         const py::array_t<bool>& active, const DArray& prototypes,
         const std::vector<std::string>& names, const Eigen::Vector3d& gmin,
         const Eigen::Vector3d& gmax, double voxel, double tau) {
        const GaussianSet set = make_set(mu, scale, rot, alpha, feat, active);
        return grid_array(voxelize(set, make_protos(prototypes, names),
                                   make_spec(gmin, gmax, voxel), tau));
      },
      "Class grid [nz, ny, nx], 255 = empty", py::arg("mu"), py::arg("scale"),
      py::arg("rot"), py::arg("alpha"), py::arg("feat"), py::arg("active"),
      py::arg("prototypes"), py::arg("names"), py::arg("grid_min"),
      py::arg("grid_max"), py::arg("voxel"), py::arg("tau"));

  m.def(
      "iou_report",
      [](const py::array_t<uint8_t>& pred, const py::array_t<uint8_t>& gt,
         const Eigen::Vector3d& gmin, const Eigen::Vector3d& gmax,
         double voxel, int n_classes) {
        const GridSpec spec = make_spec(gmin, gmax, voxel);
        const auto fill = [&](const py::array_t<uint8_t>& a) {
          OccupancyGrid g = OccupancyGrid::empty(spec, n_classes);
          if (size_t(a.size()) != g.classes.size()) {
            throw DataError("class grid does not match the spec");
          }
          std::memcpy(g.classes.data(), a.data(), g.classes.size());
          return g;
        };
        const IouReport r = iou(fill(pred), fill(gt));
        py::dict d;
        d["binary_iou"] = r.binary_iou;
        d["miou"] = r.miou;
        d["per_class"] = r.per_class;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("grid_min"),
      py::arg("grid_max"), py::arg("voxel"), py::arg("n_classes"));

  m.def(
      "depth_loss_value",
      [](const DArray& pred, const DArray& target, const DArray& mask,
         double beta) {
        Tape t;
        const DepthLossVars dl =
            depth_loss(t, t.leaf(to_tensor(pred)), to_tensor(target),
                       to_tensor(mask), beta);
        py::dict d;
        d["total"] = t.value(dl.total)[0];
        d["silog"] = t.value(dl.silog)[0];
        d["l1"] = t.value(dl.l1)[0];
        return d;
      },
      py::arg("pred"), py::arg("target"), py::arg("mask"),
      py::arg("beta") = 0.2);
  m.def(
      "cosine_loss_value",
      [](const DArray& pred, const DArray& target, const DArray& mask) {
        Tape t;
        return t.value(cosine_feat_loss(t, t.leaf(to_tensor(pred)),
                                        to_tensor(target), to_tensor(mask)))[0];
      },
      py::arg("pred"), py::arg("target"), py::arg("mask"));
  m.def(
      "ce_loss_value",
      [](const DArray& logits, const std::vector<int>& labels,
         const DArray& mask, int ignore_index) {
        Tape t;
        return t.value(ce_loss(t, t.leaf(to_tensor(logits)), labels,
                               to_tensor(mask), ignore_index))[0];
      },
      py::arg("logits"), py::arg("labels"), py::arg("mask"),
      py::arg("ignore_index") = 255);
  m.def(
      "pca_fit",
      [](const DArray& samples, int64_t c_r) {
        const PcaBasis b = pca_fit(to_tensor(samples), c_r);
        return py::make_tuple(to_array(b.components), to_array(b.mean));
      },
      "Returns (components [C_R, C], mean [C])", py::arg("samples"),
      py::arg("c_r"));
  m.def(
      "pca_project",
      [](const DArray& x, const DArray& components, const DArray& mean) {
        PcaBasis b;
        b.components = to_tensor(components);
        b.mean = to_tensor(mean);
        return to_array(pca_project(to_tensor(x), b));
      },
      py::arg("x"), py::arg("components"), py::arg("mean"));

  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init([](const SyntheticScene& scene, int queries_per_view,
                       int layers, int dim, int heads, int points, int levels,
                       double dmu_max, double s_min, double s_max,
                       int downsample, double lr, double beta_depth,
                       bool seg_aug, int seg_hidden, int64_t c_r,
                       uint64_t seed) {
             NetConfig nc;
             nc.views = int(scene.cameras.size());
             nc.queries_per_view = queries_per_view;
             nc.layers = layers;
             nc.dim = dim;
             nc.heads = heads;
             nc.points = points;
             nc.levels = levels;
             nc.dmu_max = dmu_max;
             nc.s_min = s_min;
             nc.s_max = s_max;
             nc.downsample = downsample;
             TrainConfig tc;
             tc.adam.lr = lr;
             tc.beta_depth = beta_depth;
             tc.seg_aug = seg_aug;
             tc.seg_hidden = seg_hidden;
             tc.c_r = c_r;
             tc.seed = seed;
             return new PyTrainer(scene, nc, tc);
           }),
           py::arg("scene"), py::arg("queries_per_view") = 32,
           py::arg("layers") = 2, py::arg("dim") = 32, py::arg("heads") = 4,
           py::arg("points") = 4, py::arg("levels") = 2,
           py::arg("dmu_max") = 0.2, py::arg("s_min") = 0.22,
           py::arg("s_max") = 0.28, py::arg("downsample") = 16,
           py::arg("lr") = 2e-4, py::arg("beta_depth") = 0.2,
           py::arg("seg_aug") = false, py::arg("seg_hidden") = 64,
           py::arg("c_r") = 32, py::arg("seed") = 0)
      .def("step", &PyTrainer::step)
      .def("train", &PyTrainer::train, py::arg("steps"))
      .def("predict", &PyTrainer::predict)
      .def("voxelize_prediction", &PyTrainer::voxelize_prediction,
           py::arg("tau") = 0.06)
      .def("evaluate", &PyTrainer::evaluate, py::arg("tau") = 0.06);
}
