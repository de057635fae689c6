#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gausstr/errors.hpp"
#include "gausstr/occupancy.hpp"
#include "gausstr/rng.hpp"
#include "gausstr/threading.hpp"
#include "render_scenes.hpp"

using namespace gausstr;
using namespace gausstr::testing;

namespace {

GridSpec cube_spec(double half_xy = 3.2, double height = 6.4,
                   double voxel = 0.4) {
  GridSpec s;
  s.min = Eigen::Vector3d(-half_xy, -half_xy, 0.0);
  s.max = Eigen::Vector3d(half_xy, half_xy, height);
  s.voxel = voxel;
  return s;
}

TextPrototypes axis_protos(int k, int c) {
  TextPrototypes p;
  p.f_t = Tensor::zeros({k, c});
  for (int j = 0; j < k; ++j) {
    p.f_t.data[size_t(j * c + j)] = 1.0;
    p.names.push_back("class" + std::to_string(j));
  }
  return p;
}

// Random set straddling the grid: some members outside, some inactive.
GaussianSet random_voxel_set(Rng& rng, const GridSpec& spec, int n, int c) {
  GaussianSet set = GaussianSet::empty(n, 1, c);
  for (int i = 0; i < n; ++i) {
    Gaussian g;
    for (int a = 0; a < 3; ++a) {
      const double lo = spec.min[a] - 1.0, hi = spec.max[a] + 1.0;
      g.mu[a] = rng.uniform(lo, hi);
      g.scale[a] = std::exp(rng.uniform(std::log(0.05), std::log(0.8)));
    }
    g.rot = random_quat(rng);
    g.alpha = rng.uniform(0.05, 1.0);
    g.feat.resize(size_t(c));
    for (double& v : g.feat) v = rng.normal();
    set.set(i, g);
    set.active[size_t(i)] = rng.uniform() < 0.85 ? 1 : 0;
  }
  return set;
}

}  // namespace

TEST_CASE("grid spec indexing and centers follow the documented layout") {
  const GridSpec s = cube_spec(2.0, 1.6, 0.4);
  CHECK(s.nx() == 10);
  CHECK(s.ny() == 10);
  CHECK(s.nz() == 4);
  CHECK(s.cells() == 400);
  CHECK((s.center(0, 0, 0) - Eigen::Vector3d(-1.8, -1.8, 0.2)).norm() <
        1e-15);
  CHECK((s.center(9, 0, 3) - Eigen::Vector3d(1.8, -1.8, 1.4)).norm() < 1e-15);
  CHECK(s.index(-2.0, 0) == 0);
  CHECK(s.index(-1.61, 0) == 0);
  CHECK(s.index(-1.59, 0) == 1);
  CHECK(s.index(-2.1, 0) == -1);  // unclamped below the grid
  s.validate();

  GridSpec bad = s;
  bad.voxel = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.max.x() = 2.1;  // not a whole number of voxels
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.max.z() = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(s == cube_spec(2.0, 1.6, 0.4));
  CHECK_FALSE(s == bad);
}

TEST_CASE("occupancy grids start empty") {
  OccupancyGrid g = OccupancyGrid::empty(cube_spec(2.0, 1.6, 0.4), 3);
  CHECK(int64_t(g.classes.size()) == 400);
  CHECK(g.occupied_count() == 0);
  for (uint8_t c : g.classes) CHECK(c == OccupancyGrid::kEmpty);
  g.at(1, 2, 3) = 0;
  g.at(9, 9, 0) = 2;
  CHECK(g.occupied_count() == 2);
  CHECK(g.classes[size_t((int64_t(3) * 10 + 2) * 10 + 1)] == 0);
}

TEST_CASE("semantic logits are a row softmax of prototype similarity") {
  const TextPrototypes protos = axis_protos(2, 2);
  Tensor f = Tensor::zeros({2, 2});
  f.data = {2.0, 0.0, -1.0, 3.0};
  const Tensor out = semantic_logits(f, protos);
  REQUIRE(out.shape == std::vector<int64_t>{2, 2});
  const double e2 = std::exp(2.0);
  CHECK(out.data[0] == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-12));
  CHECK(out.data[0] + out.data[1] == doctest::Approx(1.0).epsilon(1e-12));
  const double e4 = std::exp(-4.0);
  CHECK(out.data[2] == doctest::Approx(e4 / (e4 + 1.0)).epsilon(1e-12));

  CHECK_THROWS_AS(semantic_logits(Tensor::zeros({2, 3}), protos), DataError);
}

TEST_CASE("a single gaussian occupies the cells its density clears") {
  const GridSpec spec = cube_spec(1.0, 2.0, 0.5);  // 4 x 4 x 4
  const TextPrototypes protos = axis_protos(3, 4);

  GaussianSet set = GaussianSet::empty(1, 1, 4);
  Gaussian g;
  g.mu = spec.center(1, 1, 1);
  g.scale = Eigen::Vector3d(0.2, 0.2, 0.2);
  g.alpha = 0.9;
  g.feat = {0.0, 1.0, 0.0, 0.0};  // prototype 1
  set.set(0, g);
  set.active[0] = 1;

  // Density at the face-adjacent center (one voxel away): exp(-0.5 (0.5/0.2)^2).
  const double face = 0.9 * std::exp(-3.125);
  CHECK(density_at(g, spec.center(2, 1, 1)) ==
        doctest::Approx(std::exp(-3.125)).epsilon(1e-12));

  const OccupancyGrid own = voxelize(set, protos, spec, 0.5);
  CHECK(own.occupied_count() == 1);
  CHECK(own.at(1, 1, 1) == 1);

  const OccupancyGrid faces = voxelize(set, protos, spec, face - 1e-9);
  CHECK(faces.occupied_count() == 7);  // the cell plus its 6 face neighbors
  CHECK(faces.at(2, 1, 1) == 1);
  CHECK(faces.at(0, 1, 1) == 1);
  CHECK(faces.at(1, 1, 2) == 1);
  CHECK(faces.at(2, 2, 1) == OccupancyGrid::kEmpty);  // edge neighbor misses
}

TEST_CASE("class assignment picks the best prototype of the blended feature") {
  const GridSpec spec = cube_spec(1.0, 2.0, 0.5);
  const TextPrototypes protos = axis_protos(3, 4);
  GaussianSet set = GaussianSet::empty(2, 1, 4);
  for (int i = 0; i < 2; ++i) {
    Gaussian g;
    g.mu = spec.center(1, 1, 1);
    g.scale = Eigen::Vector3d(0.3, 0.3, 0.3);
    g.alpha = i == 0 ? 0.7 : 0.2;  // the heavier one wins the mean
    g.feat = {0, 0, 0, 0};
    g.feat[size_t(i)] = 1.0;
    set.set(i, g);
    set.active[size_t(i)] = 1;
  }
  const OccupancyGrid grid = voxelize(set, protos, spec, 0.5);
  CHECK(grid.at(1, 1, 1) == 0);
}

TEST_CASE("accelerated and all-pairs voxelizers agree cell for cell") {
  const GridSpec spec = cube_spec();  // 16 x 16 x 16
  for (uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(seed * 100 + 9);
    const int n = 1 + int(rng.uniform_int(40));
    const int c = 2 + int(rng.uniform_int(5));
    const GaussianSet set = random_voxel_set(rng, spec, n, c);
    const TextPrototypes protos = axis_protos(3, c);
    const double tau = rng.uniform(0.05, 1.0);

    const OccupancyGrid fast = voxelize(set, protos, spec, tau);
    const OccupancyGrid brute = voxelize_brute(set, protos, spec, tau);
    REQUIRE(fast.classes.size() == brute.classes.size());
    CHECK(std::memcmp(fast.classes.data(), brute.classes.data(),
                      fast.classes.size()) == 0);

    set_thread_count(3);
    const OccupancyGrid threaded = voxelize(set, protos, spec, tau);
    set_thread_count(0);
    CHECK(std::memcmp(fast.classes.data(), threaded.classes.data(),
                      fast.classes.size()) == 0);
  }

  const GaussianSet none = GaussianSet::empty(0, 1, 3);
  CHECK(voxelize(none, axis_protos(2, 3), spec, 0.5).occupied_count() == 0);
}

TEST_CASE("raising the occupancy threshold only removes cells") {
  const GridSpec spec = cube_spec();
  Rng rng(314);
  const GaussianSet set = random_voxel_set(rng, spec, 30, 4);
  const TextPrototypes protos = axis_protos(3, 4);
  const OccupancyGrid lo = voxelize(set, protos, spec, 0.05);
  const OccupancyGrid mid = voxelize(set, protos, spec, 0.3);
  const OccupancyGrid hi = voxelize(set, protos, spec, 0.9);
  CHECK(lo.occupied_count() >= mid.occupied_count());
  CHECK(mid.occupied_count() >= hi.occupied_count());
  CHECK(lo.occupied_count() > 0);
  for (size_t p = 0; p < lo.classes.size(); ++p) {
    if (mid.classes[p] != OccupancyGrid::kEmpty) {
      CHECK(lo.classes[p] == mid.classes[p]);  // same blend, same winner
    }
    if (hi.classes[p] != OccupancyGrid::kEmpty) {
      CHECK(mid.classes[p] == hi.classes[p]);
    }
  }
}

TEST_CASE("iou matches hand-scored grids") {
  const GridSpec s = cube_spec(0.4, 0.4, 0.4);  // 2 x 2 x 1 = 4 cells
  OccupancyGrid gt = OccupancyGrid::empty(s, 3);
  OccupancyGrid pred = OccupancyGrid::empty(s, 3);
  const uint8_t E = OccupancyGrid::kEmpty;

  // gt: [0, 0, 1, empty], pred: [0, 1, 1, 1]
  gt.classes = {0, 0, 1, E};
  pred.classes = {0, 1, 1, 1};
  const IouReport r = iou(pred, gt);
  CHECK(r.binary_iou == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.per_class[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.per_class[2] == -1.0);  // absent from both
  CHECK(r.miou == doctest::Approx(5.0 / 12.0).epsilon(1e-12));

  const IouReport perfect = iou(gt, gt);
  CHECK(perfect.binary_iou == 1.0);
  CHECK(perfect.miou == 1.0);

  OccupancyGrid blank = OccupancyGrid::empty(s, 3);
  const IouReport vac = iou(blank, blank);
  CHECK(vac.binary_iou == 1.0);
  CHECK(vac.miou == 1.0);

  OccupancyGrid other = OccupancyGrid::empty(cube_spec(0.8, 0.4, 0.4), 3);
  CHECK_THROWS_AS(iou(pred, other), DataError);
}

TEST_CASE("gocc files round trip exactly") {
  Rng rng(99);
  OccupancyGrid g = OccupancyGrid::empty(cube_spec(1.2, 0.8, 0.4), 5);
  for (uint8_t& c : g.classes) {
    c = rng.uniform() < 0.4 ? uint8_t(rng.uniform_int(5))
                            : OccupancyGrid::kEmpty;
  }
  const std::string path = "roundtrip.gocc";
  save_gocc(path, g);
  const OccupancyGrid back = load_gocc(path);
  CHECK(back.spec == g.spec);
  CHECK(back.n_classes == 5);
  REQUIRE(back.classes.size() == g.classes.size());
  CHECK(std::memcmp(back.classes.data(), g.classes.data(),
                    g.classes.size()) == 0);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_gocc("does_not_exist.gocc"), DataError);

  std::ofstream junk("junk.gocc", std::ios::binary);
  junk << "definitely not a grid";
  junk.close();
  CHECK_THROWS_AS(load_gocc("junk.gocc"), DataError);
  std::filesystem::remove("junk.gocc");

  std::ofstream bad("badver.gocc", std::ios::binary);
  bad.write("GOCC", 4);
  const uint32_t v2 = 2;
  bad.write(reinterpret_cast<const char*>(&v2), 4);
  bad.close();
  CHECK_THROWS_AS(load_gocc("badver.gocc"), DataError);
  std::filesystem::remove("badver.gocc");

  save_gocc("trunc.gocc", g);
  std::filesystem::resize_file("trunc.gocc", 40);
  CHECK_THROWS_AS(load_gocc("trunc.gocc"), DataError);
  std::filesystem::remove("trunc.gocc");
}

TEST_CASE("voxelize validates the feature width") {
  const GaussianSet set = GaussianSet::empty(1, 1, 5);
  CHECK_THROWS_AS(voxelize(set, axis_protos(2, 6), cube_spec(), 0.5),
                  DataError);
}
