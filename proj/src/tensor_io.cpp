#include "tff/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "tff/util.hpp"

namespace tff {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) |
         ((uint32_t)b[3] << 24);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, (uint32_t)(v & 0xffffffffULL));
  put_u32(os, (uint32_t)(v >> 32));
}

uint64_t get_u64(std::istream& is) {
  const uint64_t lo = get_u32(is);
  const uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

Shape read_header(std::istream& is, const std::string& path, uint32_t expected_dtype) {
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "TNSR", 4) != 0)
    throw std::runtime_error("bad tensor magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kTensorFormatVersion)
    throw std::runtime_error("unsupported tensor format version in " + path);
  const uint32_t dtype = get_u32(is);
  if (dtype != expected_dtype)
    throw std::runtime_error("unexpected tensor dtype in " + path);
  const uint32_t rank = get_u32(is);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = (int)get_u32(is);
  return shape;
}

void write_header(std::ostream& os, uint32_t dtype, const Shape& shape) {
  os.write("TNSR", 4);
  put_u32(os, kTensorFormatVersion);
  put_u32(os, dtype);
  put_u32(os, (uint32_t)shape.size());
  for (int d : shape) put_u32(os, (uint32_t)d);
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
  auto os = open_out(path);
  write_header(os, 0, t.shape());
  for (double v : t.data()) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
  auto is = open_in(path);
  Shape shape = read_header(is, path, 0);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) {
    const uint64_t bits = get_u64(is);
    std::memcpy(&v, &bits, 8);
  }
  if (!is) throw std::runtime_error("read failed: " + path);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void write_tensor_i32(const std::string& path, const Shape& shape,
                      const std::vector<int32_t>& values) {
  check_arg(shape_numel(shape) == (int64_t)values.size(),
            "write_tensor_i32: shape/value count mismatch");
  auto os = open_out(path);
  write_header(os, 1, shape);
  for (int32_t v : values) put_u32(os, (uint32_t)v);
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::pair<Shape, std::vector<int32_t>> read_tensor_i32(const std::string& path) {
  auto is = open_in(path);
  Shape shape = read_header(is, path, 1);
  std::vector<int32_t> data(shape_numel(shape));
  for (auto& v : data) v = (int32_t)get_u32(is);
  if (!is) throw std::runtime_error("read failed: " + path);
  return {std::move(shape), std::move(data)};
}

}  // namespace tff
