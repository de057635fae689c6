#include "gausstr/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gausstr/errors.hpp"
#include "gausstr/threading.hpp"

namespace gausstr {

void GridSpec::validate() const {
  if (voxel <= 0) throw ConfigError("voxel size must be positive");
  for (int a = 0; a < 3; ++a) {
    const double span = max[a] - min[a];
    if (span <= 0) throw ConfigError("grid extent must be positive");
    const double cells = span / voxel;
    if (std::abs(cells - std::round(cells)) > 1e-6) {
      throw ConfigError("grid extent is not a whole number of voxels");
    }
  }
}

void TextPrototypes::validate() const {
  if (f_t.ndim() != 2 || f_t.shape[0] != int64_t(names.size())) {
    throw DataError("prototype rows do not match class names");
  }
  const int64_t c = f_t.shape[1];
  for (int64_t r = 0; r < f_t.shape[0]; ++r) {
    double n = 0;
    for (int64_t d = 0; d < c; ++d) {
      n += f_t.data[r * c + d] * f_t.data[r * c + d];
    }
    if (std::abs(std::sqrt(n) - 1.0) > 1e-9) {
      throw DataError("prototype row is not unit norm");
    }
  }
}

OccupancyGrid OccupancyGrid::empty(const GridSpec& spec, int n_classes) {
  spec.validate();
  OccupancyGrid g;
  g.spec = spec;
  g.n_classes = n_classes;
  g.classes.assign(size_t(spec.cells()), kEmpty);
  return g;
}

int64_t OccupancyGrid::occupied_count() const {
  return std::count_if(classes.begin(), classes.end(),
                       [](uint8_t c) { return c != kEmpty; });
}

Tensor semantic_logits(const Tensor& f, const TextPrototypes& protos) {
  if (f.ndim() != 2 || f.shape[1] != protos.f_t.shape[1]) {
    throw DataError("semantic_logits: feature dim does not match prototypes");
  }
  const int64_t n = f.shape[0];
  const int64_t c = f.shape[1];
  const int64_t k = protos.f_t.shape[0];
  Tensor out = Tensor::zeros({n, k});
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) {
      double s = 0;
      for (int64_t d = 0; d < c; ++d) {
        s += f.data[i * c + d] * protos.f_t.data[j * c + d];
      }
      out.data[i * k + j] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (int64_t j = 0; j < k; ++j) {
      out.data[i * k + j] = std::exp(out.data[i * k + j] - mx);
      z += out.data[i * k + j];
    }
    for (int64_t j = 0; j < k; ++j) out.data[i * k + j] /= z;
  }
  return out;
}

namespace {

struct VoxelGaussian {
  Eigen::Vector3d mu;
  Eigen::Matrix3d inv_sigma;
  double alpha;
  const double* feat;
  int i0[3], i1[3];  // inclusive voxel index bounds of the 3 sigma AABB
  bool skip;
};

std::vector<VoxelGaussian> prepare(const GaussianSet& set,
                                   const GridSpec& spec) {
  const int64_t n = set.size();
  const int dims[3] = {spec.nx(), spec.ny(), spec.nz()};
  std::vector<VoxelGaussian> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    VoxelGaussian& v = out[size_t(i)];
    v.skip = !set.active[size_t(i)];
    if (v.skip) continue;
    const Gaussian g = set.get(i);
    v.mu = g.mu;
    const Eigen::Matrix3d sigma = assemble_covariance(g.scale, g.rot);
    v.inv_sigma = sigma.inverse();
    v.alpha = g.alpha;
    v.feat = set.feat.data.data() + i * set.feat_dim;
    for (int a = 0; a < 3; ++a) {
      const double r = 3.0 * std::sqrt(sigma(a, a));
      v.i0[a] = std::max(spec.index(g.mu[a] - r, a), 0);
      v.i1[a] = std::min(spec.index(g.mu[a] + r, a), dims[a] - 1);
      if (v.i0[a] > v.i1[a]) v.skip = true;
    }
  }
  return out;
}

void classify(const std::vector<double>& weight,
              const std::vector<double>& featsum, int64_t c_dim,
              const TextPrototypes& protos, double tau_occ,
              OccupancyGrid* grid) {
  const int64_t cells = int64_t(grid->classes.size());
  const int64_t k = protos.f_t.shape[0];
  parallel_for(cells, [&](int64_t b0, int64_t b1) {
    for (int64_t p = b0; p < b1; ++p) {
      if (!(weight[size_t(p)] >= tau_occ)) continue;
      const double inv_w = 1.0 / weight[size_t(p)];
      int best = 0;
      double best_s = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < k; ++j) {
        double s = 0;
        for (int64_t d = 0; d < c_dim; ++d) {
          s += featsum[size_t(p * c_dim + d)] * inv_w *
               protos.f_t.data[j * c_dim + d];
        }
        if (s > best_s) {
          best_s = s;
          best = int(j);
        }
      }
      grid->classes[size_t(p)] = uint8_t(best);
    }
  });
}

}  // namespace

// Accelerated path: parallel over z slabs; within a slab, Gaussians are
// visited in index order and scattered over their AABB cells, so every
// cell accumulates in ascending Gaussian order, exactly like the
// all-pairs path. Cells are owned by one slab each, writes are disjoint.
OccupancyGrid voxelize(const GaussianSet& set, const TextPrototypes& protos,
                       const GridSpec& spec, double tau_occ) {
  if (set.feat_dim != protos.f_t.shape[1]) {
    throw DataError("voxelize: feature dim does not match prototypes");
  }
  OccupancyGrid grid = OccupancyGrid::empty(spec, protos.n_classes());
  const int64_t n = set.size();
  if (n == 0) return grid;

  const int nx = spec.nx(), ny = spec.ny(), nz = spec.nz();
  const int64_t c_dim = set.feat_dim;
  const std::vector<VoxelGaussian> vg = prepare(set, spec);

  std::vector<double> weight(size_t(spec.cells()), 0.0);
  std::vector<double> featsum(size_t(spec.cells() * c_dim), 0.0);

  parallel_for(nz, [&](int64_t z0, int64_t z1) {
    for (const VoxelGaussian& v : vg) {
      if (v.skip) continue;
      const int iz0 = std::max(v.i0[2], int(z0));
      const int iz1 = std::min(v.i1[2], int(z1) - 1);
      for (int iz = iz0; iz <= iz1; ++iz) {
        for (int iy = v.i0[1]; iy <= v.i1[1]; ++iy) {
          for (int ix = v.i0[0]; ix <= v.i1[0]; ++ix) {
            const Eigen::Vector3d d = spec.center(ix, iy, iz) - v.mu;
            const double w = v.alpha * std::exp(-0.5 * d.dot(v.inv_sigma * d));
            const size_t p = size_t((int64_t(iz) * ny + iy) * nx + ix);
            weight[p] += w;
            for (int64_t c = 0; c < c_dim; ++c) {
              featsum[p * size_t(c_dim) + size_t(c)] += w * v.feat[c];
            }
          }
        }
      }
    }
  });

  classify(weight, featsum, c_dim, protos, tau_occ, &grid);
  return grid;
}

OccupancyGrid voxelize_brute(const GaussianSet& set,
                             const TextPrototypes& protos,
                             const GridSpec& spec, double tau_occ) {
  if (set.feat_dim != protos.f_t.shape[1]) {
    throw DataError("voxelize: feature dim does not match prototypes");
  }
  OccupancyGrid grid = OccupancyGrid::empty(spec, protos.n_classes());
  const int64_t n = set.size();
  if (n == 0) return grid;

  const int nx = spec.nx(), ny = spec.ny(), nz = spec.nz();
  const int64_t c_dim = set.feat_dim;
  const std::vector<VoxelGaussian> vg = prepare(set, spec);

  std::vector<double> weight(size_t(spec.cells()), 0.0);
  std::vector<double> featsum(size_t(spec.cells() * c_dim), 0.0);

  for (int iz = 0; iz < nz; ++iz) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        const size_t p = size_t((int64_t(iz) * ny + iy) * nx + ix);
        for (const VoxelGaussian& v : vg) {
          if (v.skip) continue;
          // Same truncated support as the accelerated path.
          if (ix < v.i0[0] || ix > v.i1[0] || iy < v.i0[1] || iy > v.i1[1] ||
              iz < v.i0[2] || iz > v.i1[2]) {
            continue;
          }
          const Eigen::Vector3d d = spec.center(ix, iy, iz) - v.mu;
          const double w = v.alpha * std::exp(-0.5 * d.dot(v.inv_sigma * d));
          weight[p] += w;
          for (int64_t c = 0; c < c_dim; ++c) {
            featsum[p * size_t(c_dim) + size_t(c)] += w * v.feat[c];
          }
        }
      }
    }
  }

  classify(weight, featsum, c_dim, protos, tau_occ, &grid);
  return grid;
}

IouReport iou(const OccupancyGrid& pred, const OccupancyGrid& gt) {
  if (!(pred.spec == gt.spec)) {
    throw DataError("iou: grid specs differ");
  }
  const int n_c = std::max(pred.n_classes, gt.n_classes);
  IouReport rep;
  rep.per_class.assign(size_t(n_c), -1.0);

  int64_t bi = 0, bu = 0;
  std::vector<int64_t> inter(size_t(n_c), 0), uni(size_t(n_c), 0);
  for (size_t p = 0; p < pred.classes.size(); ++p) {
    const uint8_t a = pred.classes[p];
    const uint8_t b = gt.classes[p];
    const bool oa = a != OccupancyGrid::kEmpty;
    const bool ob = b != OccupancyGrid::kEmpty;
    if (oa && ob) ++bi;
    if (oa || ob) ++bu;
    if (oa && ob && a == b) {
      ++inter[a];
      ++uni[a];
    } else {
      if (oa) ++uni[a];
      if (ob) ++uni[b];
    }
  }
  rep.binary_iou = bu ? double(bi) / double(bu) : 1.0;

  double sum = 0;
  int present = 0;
  for (int c = 0; c < n_c; ++c) {
    if (uni[size_t(c)] == 0) continue;  // absent from both grids
    rep.per_class[size_t(c)] = double(inter[size_t(c)]) / double(uni[size_t(c)]);
    sum += rep.per_class[size_t(c)];
    ++present;
  }
  rep.miou = present ? sum / present : 1.0;
  return rep;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void save_gocc(const std::string& path, const OccupancyGrid& grid) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write("GOCC", 4);
  put_u32(f, 1);
  for (int a = 0; a < 3; ++a) put_f64(f, grid.spec.min[a]);
  for (int a = 0; a < 3; ++a) put_f64(f, grid.spec.max[a]);
  put_f64(f, grid.spec.voxel);
  put_u32(f, uint32_t(grid.n_classes));
  f.write(reinterpret_cast<const char*>(grid.classes.data()),
          std::streamsize(grid.classes.size()));
  if (!f) throw DataError("short write to " + path);
}

OccupancyGrid load_gocc(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "GOCC", 4) != 0) {
    throw DataError(path + " is not an occupancy grid file");
  }
  const uint32_t version = get_u32(f);
  if (version != 1) {
    throw DataError(path + ": unsupported version " + std::to_string(version));
  }
  OccupancyGrid g;
  for (int a = 0; a < 3; ++a) g.spec.min[a] = get_f64(f);
  for (int a = 0; a < 3; ++a) g.spec.max[a] = get_f64(f);
  g.spec.voxel = get_f64(f);
  g.n_classes = int(get_u32(f));
  if (!f) throw DataError(path + ": truncated header");
  g.spec.validate();
  g.classes.assign(size_t(g.spec.cells()), OccupancyGrid::kEmpty);
  f.read(reinterpret_cast<char*>(g.classes.data()),
         std::streamsize(g.classes.size()));
  if (!f) throw DataError(path + ": truncated payload");
  return g;
}

}  // namespace gausstr
