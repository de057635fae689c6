#include "gausstr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gausstr/errors.hpp"

namespace gausstr {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<int64_t> row_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

Tensor::Tensor(std::vector<int64_t> s)
    : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor data size does not match shape " +
                                shape_to_string(shape));
}

Tensor Tensor::zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<int64_t> s, double value) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += ndim();
  if (axis < 0 || axis >= ndim())
    throw std::invalid_argument("axis out of range");
  return shape[static_cast<size_t>(axis)];
}

int64_t Tensor::offset(const std::vector<int64_t>& idx) const {
  if (idx.size() != shape.size())
    throw std::invalid_argument("index rank mismatch");
  int64_t off = 0;
  int64_t stride = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    off += idx[static_cast<size_t>(i)] * stride;
    stride *= shape[static_cast<size_t>(i)];
  }
  return off;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data[static_cast<size_t>(offset(std::vector<int64_t>(idx)))];
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return data[static_cast<size_t>(offset(std::vector<int64_t>(idx)))];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

uint64_t f64_bits(double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  return u;
}

double bits_f64(uint64_t u) {
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

uint32_t f32_bits(float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  return u;
}

float bits_f32(uint32_t u) {
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

void write_gtsr(const std::string& path, const Tensor& t, GtsrDtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  os.write("GTSR", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(dtype));
  put_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape) put_u64(os, static_cast<uint64_t>(d));
  if (dtype == GtsrDtype::F64) {
    for (double v : t.data) put_u64(os, f64_bits(v));
  } else {
    for (double v : t.data) put_u32(os, f32_bits(static_cast<float>(v)));
  }
  if (!os) throw DataError("write failed: " + path);
}

Tensor read_gtsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GTSR", 4) != 0)
    throw DataError("bad GTSR magic in " + path);
  uint32_t version = get_u32(is);
  if (version != 1) throw DataError("unsupported GTSR version in " + path);
  uint32_t dtype = get_u32(is);
  if (dtype > 1) throw DataError("unsupported GTSR dtype in " + path);
  uint32_t ndim = get_u32(is);
  if (ndim > 16) throw DataError("implausible GTSR ndim in " + path);
  std::vector<int64_t> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i)
    shape[i] = static_cast<int64_t>(get_u64(is));
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (dtype == static_cast<uint32_t>(GtsrDtype::F64))
      t[i] = bits_f64(get_u64(is));
    else
      t[i] = static_cast<double>(bits_f32(get_u32(is)));
  }
  if (!is) throw DataError("truncated GTSR file: " + path);
  return t;
}

}  // namespace gausstr
