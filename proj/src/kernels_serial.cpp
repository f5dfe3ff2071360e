#include "veil/kernels.hpp"

// Plain-loop reference kernels. Same accumulation order per output element as
// the OpenMP versions, so outputs must match bit-for-bit.

namespace veil::nn::kernels::serial {

void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> y, int out_dim, int in_dim) {
  for (int o = 0; o < out_dim; ++o) {
    double acc = b[static_cast<std::size_t>(o)];
    const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(o)] = acc;
  }
}

void dense_backward_input(std::span<const double> w, std::span<const double> u,
                          std::span<double> dx, int out_dim, int in_dim) {
  for (int i = 0; i < in_dim; ++i) {
    double acc = 0.0;
    for (int o = 0; o < out_dim; ++o)
      acc += w[static_cast<std::size_t>(o) * in_dim + i] * u[static_cast<std::size_t>(o)];
    dx[static_cast<std::size_t>(i)] = acc;
  }
}

void dense_backward_params(std::span<const double> x, std::span<const double> u,
                           std::span<double> dw, std::span<double> db, int out_dim, int in_dim) {
  for (int o = 0; o < out_dim; ++o) {
    const double uo = u[static_cast<std::size_t>(o)];
    double* row = dw.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) row[i] += uo * x[static_cast<std::size_t>(i)];
    db[static_cast<std::size_t>(o)] += uo;
  }
}

void conv2d_forward(const Conv2dDims& d, std::span<const double> w, std::span<const double> b,
                    std::span<const double> x, std::span<double> y) {
  const int oh = d.out_h(), ow = d.out_w();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int oc = 0; oc < d.out_c; ++oc) {
        double acc = b[static_cast<std::size_t>(oc)];
        for (int ci = 0; ci < d.in_c; ++ci) {
          for (int ky = 0; ky < d.kernel; ++ky) {
            const int iy = oy * d.stride + ky;
            for (int kx = 0; kx < d.kernel; ++kx) {
              const int ix = ox * d.stride + kx;
              const double wv =
                  w[((static_cast<std::size_t>(oc) * d.in_c + ci) * d.kernel + ky) * d.kernel +
                    kx];
              acc += wv * x[(static_cast<std::size_t>(iy) * d.in_w + ix) * d.in_c + ci];
            }
          }
        }
        y[(static_cast<std::size_t>(oy) * ow + ox) * d.out_c + oc] = acc;
      }
    }
  }
}

void conv2d_backward_input(const Conv2dDims& d, std::span<const double> w,
                           std::span<const double> u, std::span<double> dx) {
  const int oh = d.out_h(), ow = d.out_w();
  for (int iy = 0; iy < d.in_h; ++iy) {
    for (int ix = 0; ix < d.in_w; ++ix) {
      for (int ci = 0; ci < d.in_c; ++ci) {
        double acc = 0.0;
        for (int ky = 0; ky < d.kernel; ++ky) {
          const int ny = iy - ky;
          if (ny < 0 || ny % d.stride != 0) continue;
          const int oy = ny / d.stride;
          if (oy >= oh) continue;
          for (int kx = 0; kx < d.kernel; ++kx) {
            const int nx = ix - kx;
            if (nx < 0 || nx % d.stride != 0) continue;
            const int ox = nx / d.stride;
            if (ox >= ow) continue;
            for (int oc = 0; oc < d.out_c; ++oc) {
              const double wv =
                  w[((static_cast<std::size_t>(oc) * d.in_c + ci) * d.kernel + ky) * d.kernel +
                    kx];
              acc += wv * u[(static_cast<std::size_t>(oy) * ow + ox) * d.out_c + oc];
            }
          }
        }
        dx[(static_cast<std::size_t>(iy) * d.in_w + ix) * d.in_c + ci] = acc;
      }
    }
  }
}

void conv2d_backward_params(const Conv2dDims& d, std::span<const double> x,
                            std::span<const double> u, std::span<double> dw,
                            std::span<double> db) {
  const int oh = d.out_h(), ow = d.out_w();
  for (int oc = 0; oc < d.out_c; ++oc) {
    for (int ci = 0; ci < d.in_c; ++ci) {
      for (int ky = 0; ky < d.kernel; ++ky) {
        for (int kx = 0; kx < d.kernel; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              acc += u[(static_cast<std::size_t>(oy) * ow + ox) * d.out_c + oc] *
                     x[(static_cast<std::size_t>(oy * d.stride + ky) * d.in_w +
                        (ox * d.stride + kx)) *
                           d.in_c +
                       ci];
            }
          }
          dw[((static_cast<std::size_t>(oc) * d.in_c + ci) * d.kernel + ky) * d.kernel + kx] +=
              acc;
        }
      }
    }
    double bacc = 0.0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        bacc += u[(static_cast<std::size_t>(oy) * ow + ox) * d.out_c + oc];
    db[static_cast<std::size_t>(oc)] += bacc;
  }
}

}  // namespace veil::nn::kernels::serial
