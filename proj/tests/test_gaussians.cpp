#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gausstr/errors.hpp"
#include "gausstr/gaussians.hpp"
#include "gausstr/rng.hpp"

using namespace gausstr;

namespace {

Camera test_camera() {
  Camera cam;
  cam.width = 64;
  cam.height = 64;
  cam.fx = cam.fy = 45.0;
  cam.cx = cam.cy = 32.0;
  cam.E = Eigen::Matrix4d::Identity();
  return cam;
}

}  // namespace

TEST_CASE("validate rejects bad gaussians") {
  Gaussian g;
  g.feat = {1.0, 0.0};
  g.validate();

  Gaussian bad = g;
  bad.scale.x() = 0;
  CHECK_THROWS_AS(bad.validate(), NumericError);
  bad = g;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), NumericError);
  bad = g;
  bad.rot = Quat{0.5, 0, 0, 0};
  CHECK_THROWS_AS(bad.validate(), NumericError);
  bad = g;
  bad.mu.x() = std::nan("");
  CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("set round-trips gaussians through SoA storage") {
  GaussianSet set = GaussianSet::empty(2, 1, 3);
  Gaussian g;
  g.mu = {1, 2, 3};
  g.scale = {0.1, 0.2, 0.3};
  g.rot = Quat{0, 1, 0, 0};
  g.alpha = 0.7;
  g.feat = {4, 5, 6};
  set.set(1, g);
  const Gaussian back = set.get(1);
  CHECK(back.mu == g.mu);
  CHECK(back.scale == g.scale);
  CHECK(back.rot.x == 1.0);
  CHECK(back.alpha == 0.7);
  CHECK(back.feat == g.feat);
}

TEST_CASE("init_from_depth unprojects through the feature grid") {
  const Camera cam = test_camera();
  // 4x4 depth grid for a 64px image: downsample 16.
  Tensor depth = Tensor::full({4, 4}, 2.0);
  depth.at({1, 2}) = 5.0;

  // Pixel (40, 24) falls in grid cell (row 1, col 2).
  const DepthInit di =
      init_from_depth({40.0, 24.0}, depth, cam, 0.05, 16);
  REQUIRE(di.active);
  const Eigen::Vector3d want = unproject({40.0, 24.0}, 5.0, cam);
  CHECK((di.mu - want).norm() < 1e-12);
  CHECK(di.scale0.x() == doctest::Approx(0.25));  // 0.05 * 5
  CHECK(di.scale0.y() == doctest::Approx(0.25));
  // Identity extrinsics: camera-aligned initial rotation is the identity.
  CHECK(di.rot0.w == doctest::Approx(1.0));

  // Zero depth (sky) marks the query inactive.
  const DepthInit sky = init_from_depth({8.0, 8.0}, Tensor::zeros({4, 4}),
                                        cam, 0.05, 16);
  CHECK_FALSE(sky.active);
}

TEST_CASE("apply_refinement composes deltas") {
  Gaussian g;
  g.mu = {1, 1, 1};
  g.scale = {0.2, 0.2, 0.2};
  g.rot = Quat{1, 0, 0, 0};
  g.alpha = 0.5;
  g.feat = {1.0};

  RefineDeltas d;
  d.d_mu = {0.5, -0.5, 0};
  d.d_rot = Quat{0, 0, 0, 1};  // drags the quaternion off identity
  d.d_log_scale = {std::log(2.0), 0, std::log(100.0)};

  const Gaussian out = apply_refinement(g, d, 0.02, 1.5);
  CHECK(out.mu == Eigen::Vector3d(1.5, 0.5, 1));
  CHECK(out.scale.x() == doctest::Approx(0.4));
  CHECK(out.scale.y() == doctest::Approx(0.2));
  CHECK(out.scale.z() == doctest::Approx(1.5));  // clamped at s_max
  CHECK(out.rot.norm() == doctest::Approx(1.0));
  CHECK(out.rot.w == doctest::Approx(std::sqrt(0.5)));
  CHECK(out.rot.z == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("density_at matches the closed form on a diagonal gaussian") {
  Gaussian g;
  g.mu = {1, 2, 3};
  g.scale = {1, 2, 0.5};
  g.rot = Quat{1, 0, 0, 0};
  g.feat = {0.0};

  CHECK(density_at(g, g.mu) == doctest::Approx(1.0));
  const Eigen::Vector3d x(2, 1, 3.25);
  const double q = 1.0 / 1.0 + 1.0 / 4.0 + 0.0625 / 0.25;
  CHECK(density_at(g, x) == doctest::Approx(std::exp(-0.5 * q)).epsilon(1e-12));

  // Rotation invariance: rotating frame and point together changes nothing.
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Quat q2{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    q2 = q2.normalized();
    const Eigen::Matrix3d R = quat_to_rotmat(q2);
    Gaussian rg = g;
    rg.rot = q2;
    rg.mu = Eigen::Vector3d::Zero();
    const Eigen::Vector3d p(0.3, -0.2, 0.4);
    Gaussian ag = g;
    ag.mu = Eigen::Vector3d::Zero();
    CHECK(density_at(rg, R * p) ==
          doctest::Approx(density_at(ag, p)).epsilon(1e-10));
  }
}

TEST_CASE("gaussian set save/load round-trip") {
  GaussianSet set = GaussianSet::empty(2, 2, 3);
  Rng rng(12);
  for (int64_t i = 0; i < set.size(); ++i) {
    Gaussian g;
    g.mu = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 4)};
    g.scale = {rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.rot = q.normalized();
    g.alpha = rng.uniform(0.1, 0.9);
    g.feat = {rng.normal(), rng.normal(), rng.normal()};
    set.set(i, g);
  }
  set.active = {1, 0, 1, 1};
  set.view_index = {0, 0, 1, 1};
  set.validate();

  const std::string dir =
      std::filesystem::temp_directory_path() / "gausstr_test_set";
  std::filesystem::create_directories(dir);
  save_gaussians(dir, set);
  const GaussianSet back = load_gaussians(dir);
  CHECK(back.queries_per_view == 2);
  CHECK(back.views == 2);
  CHECK(back.feat_dim == 3);
  CHECK(back.active == set.active);
  CHECK(back.view_index == set.view_index);
  for (size_t i = 0; i < set.mu.data.size(); ++i) {
    CHECK(back.mu.data[i] == set.mu.data[i]);
  }
  for (size_t i = 0; i < set.rot.data.size(); ++i) {
    CHECK(back.rot.data[i] == set.rot.data[i]);
  }
}
