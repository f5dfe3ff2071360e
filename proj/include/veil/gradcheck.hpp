#pragma once

#include <functional>
#include <span>

#include "veil/tensor.hpp"

namespace veil::nn {

// Central finite-difference estimate of d fn / dx, same shape as x.
// Verification oracle; deliberately independent of the analytic backward path.
Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                         double h);

// Same, over a flat parameter vector.
std::vector<double> finite_difference_flat(
    const std::function<double(std::span<const double>)>& fn, std::span<const double> theta,
    double h);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

}  // namespace veil::nn
