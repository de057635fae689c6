#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace gausstr {

// Dense row-major tensor of 64-bit floats. All compute happens in f64;
// f32 exists only as an on-disk storage option.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s);
  Tensor(std::vector<int64_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<int64_t> s);
  static Tensor full(std::vector<int64_t> s, double value);
  static Tensor scalar(double value);

  int64_t numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int axis) const;

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // Flat offset of a multi-index, row-major.
  int64_t offset(const std::vector<int64_t>& idx) const;
  double at(std::initializer_list<int64_t> idx) const;
  double& at(std::initializer_list<int64_t> idx);

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Row-major strides for a shape.
std::vector<int64_t> row_strides(const std::vector<int64_t>& shape);

// Binary tensor file, magic "GTSR": u32 version=1, u32 dtype (0=f32, 1=f64),
// u32 ndim, ndim x u64 dims, little-endian payload.
enum class GtsrDtype : uint32_t { F32 = 0, F64 = 1 };

void write_gtsr(const std::string& path, const Tensor& t,
                GtsrDtype dtype = GtsrDtype::F64);
Tensor read_gtsr(const std::string& path);

}  // namespace gausstr
