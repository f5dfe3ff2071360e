#include "veil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace veil {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("nonpositive dimension in shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor data size does not match shape");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  std::int64_t n = shape_numel(shape);
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

double& Tensor::at(int y, int x, int c) {
  const int w = shape[1], ch = shape[2];
  return data[static_cast<std::size_t>((static_cast<std::int64_t>(y) * w + x) * ch + c)];
}

double Tensor::at(int y, int x, int c) const {
  const int w = shape[1], ch = shape[2];
  return data[static_cast<std::size_t>((static_cast<std::int64_t>(y) * w + x) * ch + c)];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "tensor add");
  Tensor r = a;
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
  return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "tensor sub");
  Tensor r = a;
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
  return r;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor r = a;
  for (double& v : r.data) v *= s;
  return r;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double linf_norm(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

Tensor clip(const Tensor& x, double lo, double hi) {
  Tensor r = x;
  for (double& v : r.data) v = std::clamp(v, lo, hi);
  return r;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
}

void require_finite(const Tensor& a, const char* where) {
  if (!a.all_finite()) throw Error(std::string(where) + ": non-finite tensor entries");
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace veil
