#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gausstr/renderer.hpp"
#include "render_scenes.hpp"

using namespace gausstr;
using namespace gausstr::testing;

namespace {

Camera axis_camera() {
  Camera cam;
  cam.width = 64;
  cam.height = 64;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 32.0;
  return cam;
}

Gaussian iso_gaussian(const Eigen::Vector3d& mu, double s, double alpha,
                      std::vector<double> feat) {
  Gaussian g;
  g.mu = mu;
  g.scale = Eigen::Vector3d(s, s, s);
  g.alpha = alpha;
  g.feat = std::move(feat);
  return g;
}

}  // namespace

TEST_CASE("projection matches the closed form on the optical axis") {
  const Camera cam = axis_camera();
  const RenderSettings rs;
  const Gaussian g = iso_gaussian({0, 0, 2}, 0.1, 0.7, {1.0});

  ProjectedGaussian pg;
  REQUIRE(project_gaussian(g, 3, cam, rs, &pg));
  CHECK(pg.index == 3);
  CHECK(pg.mu2d[0] == 32.0);
  CHECK(pg.mu2d[1] == 32.0);
  CHECK(pg.z == 2.0);
  CHECK(pg.alpha == 0.7);

  // cov2d = diag((fx s / z)^2 + blur) for an isotropic gaussian on-axis.
  const double var = 100.0 * 0.1 / 2.0 * (100.0 * 0.1 / 2.0) + rs.blur;
  CHECK(pg.conic[0] == doctest::Approx(1.0 / var).epsilon(1e-12));
  CHECK(pg.conic[2] == doctest::Approx(1.0 / var).epsilon(1e-12));
  CHECK(std::abs(pg.conic[1]) < 1e-15);
  CHECK(pg.radius == doctest::Approx(3.0 * std::sqrt(var)).epsilon(1e-12));
  CHECK(pg.x0 == int(std::ceil(32.0 - pg.radius - 0.5)));
  CHECK(pg.x1 == int(std::floor(32.0 + pg.radius - 0.5)));
  CHECK(pg.y0 == pg.x0);
  CHECK(pg.y1 == pg.x1);
}

TEST_CASE("projection culls behind-camera and off-screen gaussians") {
  const Camera cam = axis_camera();
  const RenderSettings rs;
  ProjectedGaussian pg;

  CHECK_FALSE(
      project_gaussian(iso_gaussian({0, 0, -1}, 0.1, 0.5, {1.0}), 0, cam, rs, &pg));
  CHECK_FALSE(project_gaussian(iso_gaussian({0, 0, rs.z_near - 0.01}, 0.1, 0.5, {1.0}),
                               0, cam, rs, &pg));
  CHECK_FALSE(
      project_gaussian(iso_gaussian({100, 0, 2}, 0.1, 0.5, {1.0}), 0, cam, rs, &pg));
}

TEST_CASE("rotated anisotropic covariance lands on the right axes") {
  const Camera cam = axis_camera();
  const RenderSettings rs;
  Gaussian g = iso_gaussian({0, 0, 2}, 0.1, 0.5, {1.0});
  g.scale = Eigen::Vector3d(0.1, 0.2, 0.1);
  const double h = std::sqrt(0.5);
  g.rot = Quat{h, 0, 0, h};  // quarter turn about z swaps x and y spreads

  ProjectedGaussian pg;
  REQUIRE(project_gaussian(g, 0, cam, rs, &pg));
  const double vx = 2500.0 * 0.04 + rs.blur;
  const double vy = 2500.0 * 0.01 + rs.blur;
  CHECK(pg.conic[0] == doctest::Approx(1.0 / vx).epsilon(1e-9));
  CHECK(pg.conic[2] == doctest::Approx(1.0 / vy).epsilon(1e-9));
  CHECK(std::abs(pg.conic[1]) < 1e-12);
}

TEST_CASE("stacked half-opacity gaussians blend to the hand value") {
  Camera cam;
  cam.width = cam.height = 3;
  cam.fx = cam.fy = 30.0;
  cam.cx = cam.cy = 1.5;  // center of pixel (1, 1)
  const RenderSettings rs;

  GaussianSet set = GaussianSet::empty(3, 1, 1);
  set.set(0, iso_gaussian({0, 0, 1}, 0.2, 0.5, {1.0}));
  set.set(1, iso_gaussian({0, 0, 2}, 0.2, 0.5, {2.0}));
  set.set(2, iso_gaussian({0, 0, 3}, 0.2, 0.5, {4.0}));

  RenderCache cache;
  const RenderedView v = render(set, cam, rs, &cache);
  const size_t p = 4;  // pixel (1, 1)

  // Weights 1/2, 1/4, 1/8 exactly: w = alpha' prod (1 - alpha').
  CHECK(v.feat.data[p] == 1.5);
  CHECK(v.trans.data[p] == 0.125);
  CHECK(cache.weight_sum[p] == 0.875);
  CHECK(v.depth.data[p] == 1.375 / 0.875);  // weighted mean of 1, 2, 3
  CHECK(cache.n_contrib[p] == 3);
}

TEST_CASE("equal-depth ties composite in index order") {
  Camera cam;
  cam.width = cam.height = 3;
  cam.fx = cam.fy = 30.0;
  cam.cx = cam.cy = 1.5;
  const RenderSettings rs;

  GaussianSet set = GaussianSet::empty(2, 1, 1);
  set.set(0, iso_gaussian({0, 0, 2}, 0.2, 0.5, {1.0}));
  set.set(1, iso_gaussian({0, 0, 2}, 0.2, 0.5, {3.0}));

  const RenderedView v = render(set, cam, rs);
  CHECK(v.feat.data[4] == 0.5 * 1.0 + 0.25 * 3.0);
}

TEST_CASE("single opaque gaussian reads back its camera depth") {
  Camera cam = axis_camera();
  cam.cx = cam.cy = 32.5;  // projects the peak onto the center of (32, 32)
  const RenderSettings rs;
  GaussianSet set = GaussianSet::empty(1, 1, 1);
  set.set(0, iso_gaussian({0, 0, 2.7}, 0.15, 1.0, {2.0}));

  const RenderedView v = render(set, cam, rs);
  int covered = 0;
  double min_trans = 1.0;
  for (size_t p = 0; p < v.trans.data.size(); ++p) {
    min_trans = std::min(min_trans, v.trans.data[p]);
    if (v.trans.data[p] < 1.0) {
      ++covered;
      CHECK(std::abs(v.depth.data[p] - 2.7) <= 1e-9);
    } else {
      CHECK(v.depth.data[p] == 0.0);
    }
  }
  CHECK(covered > 0);
  // The alpha clip caps effective opacity at 0.999 even for alpha = 1.
  CHECK(min_trans == doctest::Approx(0.001).epsilon(1e-9));
}

TEST_CASE("blended depth stays inside the contributor z range") {
  Rng rng(404);
  const Camera cam = random_view_camera(rng);
  const GaussianSet set = random_cloud(rng, cam, 25, 3);
  const RenderSettings rs;

  const auto sorted = project_and_sort(set, cam, rs);
  REQUIRE(!sorted.empty());
  double zmin = sorted.front().z, zmax = zmin;
  for (const auto& pg : sorted) {
    zmin = std::min(zmin, pg.z);
    zmax = std::max(zmax, pg.z);
  }

  const RenderedView v = render(set, cam, rs);
  for (size_t p = 0; p < v.trans.data.size(); ++p) {
    CHECK(v.trans.data[p] >= 0.0);
    CHECK(v.trans.data[p] <= 1.0);
    if (v.trans.data[p] < 1.0) {
      CHECK(v.depth.data[p] >= zmin - 1e-12);
      CHECK(v.depth.data[p] <= zmax + 1e-12);
    } else {
      CHECK(v.depth.data[p] == 0.0);
    }
  }
}

TEST_CASE("tiled and brute-force renders agree bit for bit") {
  for (uint64_t seed = 0; seed < 12; ++seed) {
    CAPTURE(seed);
    CHECK(tiled_matches_brute(seed, 40));
  }
}

TEST_CASE("inactive and empty sets render to background") {
  const Camera cam = axis_camera();
  const RenderSettings rs;

  GaussianSet set = GaussianSet::empty(2, 1, 2);
  set.set(0, iso_gaussian({0, 0, 2}, 0.2, 0.8, {1.0, 2.0}));
  set.set(1, iso_gaussian({0.1, 0, 3}, 0.2, 0.8, {3.0, 4.0}));
  set.active = {0, 0};

  const RenderedView v = render(set, cam, rs);
  for (double x : v.feat.data) CHECK(x == 0.0);
  for (double x : v.depth.data) CHECK(x == 0.0);
  for (double x : v.trans.data) CHECK(x == 1.0);

  const RenderedView e = render(GaussianSet::empty(0, 1, 2), cam, rs);
  for (double x : e.trans.data) CHECK(x == 1.0);
}

TEST_CASE("compositing stops once transmittance is exhausted") {
  Camera cam;
  cam.width = cam.height = 3;
  cam.fx = cam.fy = 30.0;
  cam.cx = cam.cy = 1.5;
  const RenderSettings rs;

  GaussianSet set = GaussianSet::empty(8, 1, 1);
  for (int i = 0; i < 8; ++i) {
    set.set(i, iso_gaussian({0, 0, 1.0 + i}, 0.3, 0.9, {1.0}));
  }
  RenderCache cache;
  const RenderedView v = render(set, cam, rs, &cache);
  CHECK(cache.n_contrib[4] >= 4);
  CHECK(cache.n_contrib[4] < 8);
  CHECK(v.trans.data[4] < rs.min_transmittance);
  CHECK(tiled_matches_brute(77, 30));  // break parity is shared code
}

TEST_CASE("splat gradients match central differences") {
  for (uint64_t seed : {21u, 22u}) {
    CAPTURE(seed);
    const FdResult r = splat_fd_case(seed);
    CHECK(r.checked == 4 * (3 + 3 + 4 + 1 + 2));
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("culled and inactive gaussians get zero gradient") {
  const Camera cam = axis_camera();
  const RenderSettings rs;

  Tensor mu = Tensor::zeros({3, 3});
  Tensor sc = Tensor::full({3, 3}, 0.2);
  Tensor rot = Tensor::zeros({3, 4});
  Tensor al = Tensor::full({3}, 0.6);
  Tensor ft = Tensor::full({3, 1}, 1.0);
  for (int i = 0; i < 3; ++i) rot.data[size_t(i * 4)] = 1.0;
  mu.data[2] = 2.0;   // row 0: in front
  mu.data[5] = -2.0;  // row 1: behind the camera
  mu.data[8] = 2.5;   // row 2: in front but inactive
  const std::vector<uint8_t> active = {1, 1, 0};

  Tape t;
  Var vm = t.leaf(mu);
  Var va = t.leaf(al);
  Var o = splat(t, vm, t.leaf(sc), t.leaf(rot), va, t.leaf(ft), active, cam, rs);
  t.backward(sum_all(t, o));

  const Tensor& gm = t.grad(vm);
  const Tensor& ga = t.grad(va);
  CHECK(ga.data[0] != 0.0);
  for (int c = 0; c < 3; ++c) CHECK(gm.data[size_t(3 + c)] == 0.0);
  CHECK(ga.data[1] == 0.0);
  for (int c = 0; c < 3; ++c) CHECK(gm.data[size_t(6 + c)] == 0.0);
  CHECK(ga.data[2] == 0.0);
}
