#include "gausstr/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gausstr/errors.hpp"
#include "gausstr/losses.hpp"

namespace gausstr {

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.shape[2] != 3) {
    throw DataError("write_ppm expects [H, W, 3]");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const int64_t H = rgb.shape[0], W = rgb.shape[1];
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(size_t(W) * 3);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W * 3; ++x) {
      const double v = std::clamp(rgb.data[size_t(y * W * 3 + x)], 0.0, 1.0);
      row[size_t(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            std::streamsize(row.size()));
  }
  if (!f) throw DataError("short write to " + path);
}

void write_pgm16(const std::string& path, const Tensor& depth_m) {
  if (depth_m.ndim() != 2) throw DataError("write_pgm16 expects [H, W]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const int64_t H = depth_m.shape[0], W = depth_m.shape[1];
  f << "P5\n" << W << " " << H << "\n65535\n";
  std::vector<unsigned char> row(size_t(W) * 2);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      const double mm = depth_m.data[size_t(y * W + x)] * 1000.0;
      const long q = std::clamp(std::lround(mm), 0L, 65535L);
      row[size_t(x * 2)] = static_cast<unsigned char>(q >> 8);
      row[size_t(x * 2 + 1)] = static_cast<unsigned char>(q & 0xFF);
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            std::streamsize(row.size()));
  }
  if (!f) throw DataError("short write to " + path);
}

Tensor pca_color(const Tensor& feat) {
  if (feat.ndim() != 3) throw DataError("pca_color expects [H, W, C]");
  const int64_t H = feat.shape[0], W = feat.shape[1], C = feat.shape[2];
  const int64_t P = H * W;
  const int64_t comps = std::min<int64_t>(3, std::min(C, P));
  const PcaBasis basis = pca_fit(Tensor({P, C}, feat.data), comps);
  const Tensor proj = pca_project(Tensor({P, C}, feat.data), basis);

  Tensor out = Tensor::zeros({H, W, 3});
  for (int64_t k = 0; k < 3; ++k) {
    const int64_t src = std::min(k, comps - 1);
    double lo = proj.data[size_t(src)], hi = lo;
    for (int64_t p = 0; p < P; ++p) {
      const double v = proj.data[size_t(p * comps + src)];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double span = hi - lo;
    for (int64_t p = 0; p < P; ++p) {
      const double v = proj.data[size_t(p * comps + src)];
      out.data[size_t(p * 3 + k)] = span > 0 ? (v - lo) / span : 0.0;
    }
  }
  return out;
}

}  // namespace gausstr
