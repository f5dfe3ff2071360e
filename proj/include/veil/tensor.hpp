#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "veil/error.hpp"

namespace veil {

// Dense row-major tensor of 64-bit floats. Rank-3 image tensors are laid out
// (H, W, C) with index ((y * W) + x) * C + c.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // (H, W, C) accessors; only valid for rank-3 tensors.
  double& at(int y, int x, int c);
  double at(int y, int x, int c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

// Elementwise helpers used across attack/pipeline code.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double linf_norm(const Tensor& a);

// clip(x, lo, hi) elementwise.
Tensor clip(const Tensor& x, double lo, double hi);

// Throws ShapeError unless shapes match.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

// Throws Error if any entry is NaN/Inf.
void require_finite(const Tensor& a, const char* where);

bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace veil
