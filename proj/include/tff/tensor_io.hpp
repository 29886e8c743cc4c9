#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tff/tensor.hpp"

namespace tff {

// Binary tensor file: "TNSR" magic, u32 format version, u32 dtype
// (0 = f64, 1 = i32), u32 rank, u32 dims, raw payload; everything
// little-endian. Round-trips are bit-exact.

inline constexpr uint32_t kTensorFormatVersion = 1;

void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

void write_tensor_i32(const std::string& path, const Shape& shape,
                      const std::vector<int32_t>& values);
std::pair<Shape, std::vector<int32_t>> read_tensor_i32(const std::string& path);

}  // namespace tff
