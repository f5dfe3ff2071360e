#include "veil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace veil::nn {

Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                         double h) {
  if (h <= 0.0) throw ArgumentError("finite_difference: h must be > 0");
  Tensor grad = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < probe.data.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double fp = fn(probe);
    probe.data[i] = orig - h;
    const double fm = fn(probe);
    probe.data[i] = orig;
    grad.data[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_difference_flat(
    const std::function<double(std::span<const double>)>& fn, std::span<const double> theta,
    double h) {
  if (h <= 0.0) throw ArgumentError("finite_difference_flat: h must be > 0");
  std::vector<double> probe(theta.begin(), theta.end());
  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = fn(probe);
    probe[i] = orig - h;
    const double fm = fn(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace veil::nn
