#pragma once

#include <span>

namespace veil::nn::kernels {

// Dense/conv2d compute kernels. The primary versions parallelize with OpenMP
// over independent output elements only; each element's accumulation runs in
// a fixed serial order, so results are bit-identical to the serial reference
// at any thread count. kernels::serial holds the plain-loop reference used by
// the unit tests and the benchmark.

struct Conv2dDims {
  int in_h = 0, in_w = 0, in_c = 0;
  int out_c = 0;
  int kernel = 0;
  int stride = 1;

  int out_h() const { return (in_h - kernel) / stride + 1; }
  int out_w() const { return (in_w - kernel) / stride + 1; }
};

// y[o] = b[o] + sum_i w[o*in_dim + i] * x[i]
void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> y, int out_dim, int in_dim);

// dx[i] = sum_o w[o*in_dim + i] * u[o]
void dense_backward_input(std::span<const double> w, std::span<const double> u,
                          std::span<double> dx, int out_dim, int in_dim);

// dw[o*in_dim + i] += u[o] * x[i]; db[o] += u[o]
void dense_backward_params(std::span<const double> x, std::span<const double> u,
                           std::span<double> dw, std::span<double> db, int out_dim, int in_dim);

// Valid padding, square kernel. Input (H,W,C) row-major, weights
// [out_c][in_c][ky][kx], output (out_h,out_w,out_c).
void conv2d_forward(const Conv2dDims& d, std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y);

// Gather form: dx[iy,ix,ci] = sum over contributing output pixels.
void conv2d_backward_input(const Conv2dDims& d, std::span<const double> w,
                           std::span<const double> u, std::span<double> dx);

// dw/db accumulate (+=).
void conv2d_backward_params(const Conv2dDims& d, std::span<const double> x,
                            std::span<const double> u, std::span<double> dw,
                            std::span<double> db);

namespace serial {

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> y, int out_dim, int in_dim);
void dense_backward_input(std::span<const double> w, std::span<const double> u,
                          std::span<double> dx, int out_dim, int in_dim);
void dense_backward_params(std::span<const double> x, std::span<const double> u,
                           std::span<double> dw, std::span<double> db, int out_dim, int in_dim);
void conv2d_forward(const Conv2dDims& d, std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y);
void conv2d_backward_input(const Conv2dDims& d, std::span<const double> w,
                           std::span<const double> u, std::span<double> dx);
void conv2d_backward_params(const Conv2dDims& d, std::span<const double> x,
                            std::span<const double> u, std::span<double> dw,
                            std::span<double> db);

}  // namespace serial

}  // namespace veil::nn::kernels
