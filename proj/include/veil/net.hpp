#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "veil/tensor.hpp"

namespace veil::nn {

enum class LayerKind { Dense, Conv2d, Relu, Flatten, L2Normalize };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int units = 0;         // dense: output features
  int out_channels = 0;  // conv2d
  int kernel = 0;        // conv2d, square
  int stride = 1;        // conv2d

  static LayerSpec dense(int units) { return {LayerKind::Dense, units, 0, 0, 1}; }
  static LayerSpec conv2d(int out_channels, int kernel, int stride = 1) {
    return {LayerKind::Conv2d, 0, out_channels, kernel, stride};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, 1}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 1}; }
  static LayerSpec l2normalize() { return {LayerKind::L2Normalize, 0, 0, 0, 1}; }
};

struct LayerPlan {
  LayerSpec spec;
  std::vector<int> in_shape;
  std::vector<int> out_shape;
  std::int64_t weight_offset = -1;
  std::int64_t weight_count = 0;
  std::int64_t bias_offset = -1;
  std::int64_t bias_count = 0;
};

// Small feed-forward/convolutional metric-embedding network with analytic
// gradients w.r.t. inputs and parameters. Parameters live in one flat
// double array; a frozen network is safe for concurrent read-only use.
class EmbeddingNetwork {
 public:
  EmbeddingNetwork() = default;
  EmbeddingNetwork(std::vector<int> input_shape, std::vector<LayerSpec> layers);

  const std::vector<int>& input_shape() const { return input_shape_; }
  int embedding_dim() const { return embedding_dim_; }
  std::int64_t parameter_count() const { return static_cast<std::int64_t>(params_.size()); }
  const std::vector<LayerPlan>& plan() const { return plan_; }

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  // Deterministic uniform init scaled by fan-in/fan-out.
  void init_parameters(std::uint64_t seed);

  // f_theta(x). Preconditions: x.shape == input_shape, entries finite.
  Tensor forward(const Tensor& x) const;

  // d(upstream . f(x)) / dx, same shape as x.
  Tensor input_gradient(const Tensor& x, const Tensor& upstream) const;

  // Sum over the batch of d(upstream_i . f(x_i)) / dtheta.
  std::vector<double> parameter_gradient(
      const std::vector<std::pair<Tensor, Tensor>>& batch) const;

 private:
  struct Trace {
    std::vector<Tensor> acts;  // acts[0] = x, acts.back() = embedding
  };
  Tensor forward_impl(const Tensor& x, Trace* trace) const;
  // Backward through all layers; returns dx, accumulates into param_grad
  // when non-null.
  Tensor backward_impl(const Trace& trace, const Tensor& upstream,
                       std::vector<double>* param_grad) const;

  std::vector<int> input_shape_;
  std::vector<LayerPlan> plan_;
  std::vector<double> params_;
  int embedding_dim_ = 0;
};

}  // namespace veil::nn
