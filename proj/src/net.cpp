#include "veil/net.hpp"

#include <cmath>
#include <random>

#include "veil/kernels.hpp"

namespace veil::nn {

namespace {

constexpr double kL2NormEps = 1e-12;

kernels::Conv2dDims conv_dims(const LayerPlan& p) {
  kernels::Conv2dDims d;
  d.in_h = p.in_shape[0];
  d.in_w = p.in_shape[1];
  d.in_c = p.in_shape[2];
  d.out_c = p.spec.out_channels;
  d.kernel = p.spec.kernel;
  d.stride = p.spec.stride;
  return d;
}

}  // namespace

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::L2Normalize: return "l2normalize";
  }
  throw ArgumentError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "relu") return LayerKind::Relu;
  if (name == "flatten") return LayerKind::Flatten;
  if (name == "l2normalize") return LayerKind::L2Normalize;
  throw ArgumentError("unknown layer kind: " + name);
}

EmbeddingNetwork::EmbeddingNetwork(std::vector<int> input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)) {
  if (layers.empty()) throw ArgumentError("network needs at least one layer");
  shape_numel(input_shape_);

  std::vector<int> cur = input_shape_;
  std::int64_t offset = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& spec = layers[li];
    LayerPlan p;
    p.spec = spec;
    p.in_shape = cur;
    switch (spec.kind) {
      case LayerKind::Dense: {
        if (cur.size() != 1) throw ShapeError("dense layer expects a flat input");
        if (spec.units <= 0) throw ArgumentError("dense layer needs units > 0");
        p.weight_offset = offset;
        p.weight_count = static_cast<std::int64_t>(spec.units) * cur[0];
        offset += p.weight_count;
        p.bias_offset = offset;
        p.bias_count = spec.units;
        offset += p.bias_count;
        p.out_shape = {spec.units};
        break;
      }
      case LayerKind::Conv2d: {
        if (cur.size() != 3) throw ShapeError("conv2d layer expects an (H,W,C) input");
        if (spec.out_channels <= 0 || spec.kernel <= 0 || spec.stride <= 0)
          throw ArgumentError("conv2d layer needs out_channels, kernel, stride > 0");
        if (cur[0] < spec.kernel || cur[1] < spec.kernel)
          throw ShapeError("conv2d kernel larger than input");
        p.weight_offset = offset;
        p.weight_count =
            static_cast<std::int64_t>(spec.out_channels) * cur[2] * spec.kernel * spec.kernel;
        offset += p.weight_count;
        p.bias_offset = offset;
        p.bias_count = spec.out_channels;
        offset += p.bias_count;
        const int oh = (cur[0] - spec.kernel) / spec.stride + 1;
        const int ow = (cur[1] - spec.kernel) / spec.stride + 1;
        p.out_shape = {oh, ow, spec.out_channels};
        break;
      }
      case LayerKind::Relu:
        p.out_shape = cur;
        break;
      case LayerKind::Flatten:
        p.out_shape = {static_cast<int>(shape_numel(cur))};
        break;
      case LayerKind::L2Normalize:
        if (cur.size() != 1) throw ShapeError("l2normalize expects a flat input");
        if (li + 1 != layers.size())
          throw ArgumentError("l2normalize may only appear as the last layer");
        p.out_shape = cur;
        break;
    }
    cur = p.out_shape;
    plan_.push_back(std::move(p));
  }
  if (cur.size() != 1) throw ShapeError("network output must be a flat embedding");
  embedding_dim_ = cur[0];
  params_.assign(static_cast<std::size_t>(offset), 0.0);
}

void EmbeddingNetwork::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const LayerPlan& p : plan_) {
    if (p.weight_count == 0) continue;
    double fan_in = 0, fan_out = 0;
    if (p.spec.kind == LayerKind::Dense) {
      fan_in = p.in_shape[0];
      fan_out = p.spec.units;
    } else {
      fan_in = static_cast<double>(p.in_shape[2]) * p.spec.kernel * p.spec.kernel;
      fan_out = static_cast<double>(p.spec.out_channels) * p.spec.kernel * p.spec.kernel;
    }
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (std::int64_t i = 0; i < p.weight_count; ++i)
      params_[static_cast<std::size_t>(p.weight_offset + i)] = dist(rng);
    for (std::int64_t i = 0; i < p.bias_count; ++i)
      params_[static_cast<std::size_t>(p.bias_offset + i)] = 0.0;
  }
}

Tensor EmbeddingNetwork::forward(const Tensor& x) const { return forward_impl(x, nullptr); }

Tensor EmbeddingNetwork::forward_impl(const Tensor& x, Trace* trace) const {
  if (x.shape != input_shape_)
    throw ShapeError("forward: input shape " + x.shape_str() + " does not match network");
  require_finite(x, "forward input");

  Tensor cur = x;
  if (trace) trace->acts.push_back(cur);
  for (const LayerPlan& p : plan_) {
    Tensor out = Tensor::zeros(p.out_shape);
    switch (p.spec.kind) {
      case LayerKind::Dense: {
        const int in_dim = p.in_shape[0], out_dim = p.spec.units;
        kernels::dense_forward(
            std::span<const double>(params_.data() + p.weight_offset,
                                    static_cast<std::size_t>(p.weight_count)),
            std::span<const double>(params_.data() + p.bias_offset,
                                    static_cast<std::size_t>(p.bias_count)),
            cur.data, out.data, out_dim, in_dim);
        break;
      }
      case LayerKind::Conv2d: {
        kernels::conv2d_forward(
            conv_dims(p),
            std::span<const double>(params_.data() + p.weight_offset,
                                    static_cast<std::size_t>(p.weight_count)),
            std::span<const double>(params_.data() + p.bias_offset,
                                    static_cast<std::size_t>(p.bias_count)),
            cur.data, out.data);
        break;
      }
      case LayerKind::Relu:
        for (std::size_t i = 0; i < cur.data.size(); ++i)
          out.data[i] = cur.data[i] > 0.0 ? cur.data[i] : 0.0;
        break;
      case LayerKind::Flatten:
        out.data = cur.data;
        break;
      case LayerKind::L2Normalize: {
        double sq = 0.0;
        for (double v : cur.data) sq += v * v;
        const double inv = 1.0 / std::sqrt(sq + kL2NormEps);
        for (std::size_t i = 0; i < cur.data.size(); ++i) out.data[i] = cur.data[i] * inv;
        break;
      }
    }
    cur = std::move(out);
    if (trace) trace->acts.push_back(cur);
  }
  require_finite(cur, "forward output");
  return cur;
}

Tensor EmbeddingNetwork::backward_impl(const Trace& trace, const Tensor& upstream,
                                       std::vector<double>* param_grad) const {
  Tensor grad = upstream;
  for (std::size_t ri = plan_.size(); ri-- > 0;) {
    const LayerPlan& p = plan_[ri];
    const Tensor& in = trace.acts[ri];
    Tensor din = Tensor::zeros(p.in_shape);
    switch (p.spec.kind) {
      case LayerKind::Dense: {
        const int in_dim = p.in_shape[0], out_dim = p.spec.units;
        kernels::dense_backward_input(
            std::span<const double>(params_.data() + p.weight_offset,
                                    static_cast<std::size_t>(p.weight_count)),
            grad.data, din.data, out_dim, in_dim);
        if (param_grad) {
          kernels::dense_backward_params(
              in.data, grad.data,
              std::span<double>(param_grad->data() + p.weight_offset,
                                static_cast<std::size_t>(p.weight_count)),
              std::span<double>(param_grad->data() + p.bias_offset,
                                static_cast<std::size_t>(p.bias_count)),
              out_dim, in_dim);
        }
        break;
      }
      case LayerKind::Conv2d: {
        const auto d = conv_dims(p);
        kernels::conv2d_backward_input(
            d,
            std::span<const double>(params_.data() + p.weight_offset,
                                    static_cast<std::size_t>(p.weight_count)),
            grad.data, din.data);
        if (param_grad) {
          kernels::conv2d_backward_params(
              d, in.data, grad.data,
              std::span<double>(param_grad->data() + p.weight_offset,
                                static_cast<std::size_t>(p.weight_count)),
              std::span<double>(param_grad->data() + p.bias_offset,
                                static_cast<std::size_t>(p.bias_count)));
        }
        break;
      }
      case LayerKind::Relu:
        // Subgradient at exactly 0 is 0.
        for (std::size_t i = 0; i < din.data.size(); ++i)
          din.data[i] = in.data[i] > 0.0 ? grad.data[i] : 0.0;
        break;
      case LayerKind::Flatten:
        din.data = grad.data;
        break;
      case LayerKind::L2Normalize: {
        // y = z * (|z|^2 + eps)^{-1/2}; dy_i/dz_j = s^{-1} I - z_i z_j s^{-3}.
        double sq = 0.0;
        for (double v : in.data) sq += v * v;
        const double s = std::sqrt(sq + kL2NormEps);
        double zu = 0.0;
        for (std::size_t i = 0; i < in.data.size(); ++i) zu += in.data[i] * grad.data[i];
        const double inv = 1.0 / s;
        const double inv3 = zu / (s * s * s);
        for (std::size_t i = 0; i < din.data.size(); ++i)
          din.data[i] = grad.data[i] * inv - in.data[i] * inv3;
        break;
      }
    }
    grad = std::move(din);
  }
  return grad;
}

Tensor EmbeddingNetwork::input_gradient(const Tensor& x, const Tensor& upstream) const {
  if (static_cast<int>(upstream.numel()) != embedding_dim_)
    throw ShapeError("input_gradient: upstream length must equal embedding dim");
  Trace trace;
  forward_impl(x, &trace);
  return backward_impl(trace, upstream, nullptr);
}

std::vector<double> EmbeddingNetwork::parameter_gradient(
    const std::vector<std::pair<Tensor, Tensor>>& batch) const {
  if (batch.empty()) throw ArgumentError("parameter_gradient: empty batch");
  std::vector<double> total(params_.size(), 0.0);
  std::vector<double> per_example(params_.size(), 0.0);
  for (const auto& [x, upstream] : batch) {
    if (static_cast<int>(upstream.numel()) != embedding_dim_)
      throw ShapeError("parameter_gradient: upstream length must equal embedding dim");
    std::fill(per_example.begin(), per_example.end(), 0.0);
    Trace trace;
    forward_impl(x, &trace);
    backward_impl(trace, upstream, &per_example);
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += per_example[i];
  }
  return total;
}

}  // namespace veil::nn
