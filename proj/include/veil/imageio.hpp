#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil::img {

// 8-bit image I/O. Tensors are (H,W,3) in [0,1]; values quantize to
// round(v * 255) on save. PNG or binary PPM (P6) chosen by extension on
// write and by magic bytes on read.
Tensor read_image(const std::string& path);
void write_image(const std::string& path, const Tensor& image);

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& image);

// In-memory PNG codec (wire format for the verification service).
std::vector<std::uint8_t> encode_png(const Tensor& image);
Tensor decode_png(const std::uint8_t* bytes, std::size_t len);

// Quantize to the 8-bit grid without touching disk.
Tensor quantize8(const Tensor& image);

// Lossless float32 sidecar for bit-exact round trips (any shape; values are
// stored as little-endian float32).
void write_f32(const std::string& path, const Tensor& t);
Tensor read_f32(const std::string& path);

}  // namespace veil::img
