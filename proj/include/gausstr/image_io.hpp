#pragma once

#include <string>

#include "gausstr/tensor.hpp"

namespace gausstr {

// P6 PPM, 8-bit; input [H, W, 3] clamped to [0, 1].
void write_ppm(const std::string& path, const Tensor& rgb);

// P5 PGM, 16-bit big-endian samples; meters quantized to millimeters,
// saturating at 65.535 m. Input [H, W].
void write_pgm16(const std::string& path, const Tensor& depth_m);

// Feature map [H, W, C] -> [H, W, 3] preview: 3-component PCA over the
// pixels, each channel min-max scaled to [0, 1].
Tensor pca_color(const Tensor& feat);

}  // namespace gausstr
