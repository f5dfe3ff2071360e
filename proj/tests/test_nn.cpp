#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "veil/gradcheck.hpp"
#include "veil/kernels.hpp"
#include "veil/net.hpp"
#include "veil/weights_io.hpp"

using veil::Tensor;
using veil::nn::EmbeddingNetwork;
using veil::nn::LayerSpec;

namespace {

// Straight-line duplicate evaluator, independent of the kernel path. Walks
// the layer plan with its own loops so a bug in kernels.cpp cannot hide.
std::vector<double> naive_forward(const EmbeddingNetwork& net, const Tensor& x,
                                  std::vector<std::vector<double>>* acts = nullptr) {
  std::vector<double> cur = x.data;
  if (acts) acts->push_back(cur);
  const std::vector<double>& theta = net.parameters();
  for (const auto& p : net.plan()) {
    std::vector<double> out;
    switch (p.spec.kind) {
      case veil::nn::LayerKind::Dense: {
        const int in_dim = p.in_shape[0];
        out.assign(static_cast<std::size_t>(p.spec.units), 0.0);
        for (int o = 0; o < p.spec.units; ++o) {
          double acc = theta[static_cast<std::size_t>(p.bias_offset + o)];
          for (int i = 0; i < in_dim; ++i)
            acc += theta[static_cast<std::size_t>(p.weight_offset + o * in_dim + i)] *
                   cur[static_cast<std::size_t>(i)];
          out[static_cast<std::size_t>(o)] = acc;
        }
        break;
      }
      case veil::nn::LayerKind::Conv2d: {
        const int ih = p.in_shape[0], iw = p.in_shape[1], ic = p.in_shape[2];
        const int oh = p.out_shape[0], ow = p.out_shape[1], oc = p.spec.out_channels;
        const int k = p.spec.kernel, s = p.spec.stride;
        out.assign(static_cast<std::size_t>(oh) * ow * oc, 0.0);
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            for (int co = 0; co < oc; ++co) {
              double acc = theta[static_cast<std::size_t>(p.bias_offset + co)];
              for (int ci = 0; ci < ic; ++ci)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx)
                    acc += theta[static_cast<std::size_t>(
                               p.weight_offset + ((co * ic + ci) * k + ky) * k + kx)] *
                           cur[static_cast<std::size_t>(((oy * s + ky) * iw + (ox * s + kx)) * ic +
                                                        ci)];
              out[static_cast<std::size_t>((oy * ow + ox) * oc + co)] = acc;
            }
        break;
      }
      case veil::nn::LayerKind::Relu:
        out = cur;
        for (double& v : out) v = v > 0.0 ? v : 0.0;
        break;
      case veil::nn::LayerKind::Flatten:
        out = cur;
        break;
      case veil::nn::LayerKind::L2Normalize: {
        double sq = 0.0;
        for (double v : cur) sq += v * v;
        const double inv = 1.0 / std::sqrt(sq + 1e-12);
        out = cur;
        for (double& v : out) v *= inv;
        break;
      }
    }
    cur = std::move(out);
    if (acts) acts->push_back(cur);
  }
  return cur;
}

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = 0.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Draws avoid relu pre-activations within `margin` of zero and collapsed
// l2normalize inputs, where finite differences are meaningless.
bool safe_for_fd(const EmbeddingNetwork& net, const Tensor& x, double margin = 1e-3) {
  std::vector<std::vector<double>> acts;
  naive_forward(net, x, &acts);
  for (std::size_t li = 0; li < net.plan().size(); ++li) {
    const auto& p = net.plan()[li];
    if (p.spec.kind == veil::nn::LayerKind::Relu) {
      for (double v : acts[li])
        if (std::abs(v) < margin) return false;
    }
    if (p.spec.kind == veil::nn::LayerKind::L2Normalize) {
      double sq = 0.0;
      for (double v : acts[li]) sq += v * v;
      if (std::sqrt(sq) < 1e-2) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("forward: identity dense layer") {
  EmbeddingNetwork net({2}, {LayerSpec::dense(2)});
  net.parameters() = {1, 0, 0, 1, 0, 0};  // W = I, b = 0
  const Tensor x({2}, {0.3, 0.7});
  const Tensor y = net.forward(x);
  CHECK(y.data[0] == doctest::Approx(0.3));
  CHECK(y.data[1] == doctest::Approx(0.7));
}

TEST_CASE("forward: dense + relu hand arithmetic") {
  EmbeddingNetwork net({2}, {LayerSpec::dense(1), LayerSpec::relu()});
  net.parameters() = {1, 1, 0.5};  // W = [1 1], b = 0.5
  const Tensor x({2}, {0.2, 0.3});
  CHECK(net.forward(x).data[0] == doctest::Approx(1.0));
}

TEST_CASE("forward: matches the straight-line duplicate evaluator") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingNetwork net({6, 6, 3}, {LayerSpec::conv2d(4, 3, 1), LayerSpec::relu(),
                                     LayerSpec::flatten(), LayerSpec::dense(5)});
    net.init_parameters(rng());
    const Tensor x = random_tensor({6, 6, 3}, rng);
    const Tensor got = net.forward(x);
    const std::vector<double> want = naive_forward(net, x);
    REQUIRE(got.data.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(got.data[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward: l2normalize output has unit norm") {
  std::mt19937_64 rng(7);
  EmbeddingNetwork net({4}, {LayerSpec::dense(3), LayerSpec::l2normalize()});
  net.init_parameters(3);
  const Tensor x = random_tensor({4}, rng, 0.2, 1.0);
  CHECK(veil::l2_norm(net.forward(x)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("forward: deterministic bit-for-bit") {
  std::mt19937_64 rng(11);
  EmbeddingNetwork net({5, 5, 3},
                       {LayerSpec::conv2d(2, 3), LayerSpec::flatten(), LayerSpec::dense(4)});
  net.init_parameters(5);
  const Tensor x = random_tensor({5, 5, 3}, rng);
  CHECK(veil::bit_equal(net.forward(x), net.forward(x)));
}

TEST_CASE("forward: shape mismatch raises") {
  EmbeddingNetwork net({2}, {LayerSpec::dense(2)});
  CHECK_THROWS_AS(net.forward(Tensor({3}, {1, 2, 3})), veil::ShapeError);
}

TEST_CASE("network validation") {
  // l2normalize only as the last layer
  CHECK_THROWS_AS(EmbeddingNetwork({3}, {LayerSpec::l2normalize(), LayerSpec::dense(2)}),
                  veil::ArgumentError);
  // dense on (H,W,C) input without flatten
  CHECK_THROWS_AS(EmbeddingNetwork({3, 3, 1}, {LayerSpec::dense(2)}), veil::ShapeError);
  // kernel larger than input
  CHECK_THROWS_AS(EmbeddingNetwork({3, 3, 1}, {LayerSpec::conv2d(2, 5)}), veil::ShapeError);
  // parameter count bookkeeping
  EmbeddingNetwork net({4, 4, 2},
                       {LayerSpec::conv2d(3, 3), LayerSpec::flatten(), LayerSpec::dense(2)});
  CHECK(net.parameter_count() == (3 * 2 * 3 * 3 + 3) + (2 * 2 * 3 * 2 + 2));
}

TEST_CASE("input_gradient: identity dense picks out upstream") {
  EmbeddingNetwork net({2}, {LayerSpec::dense(2)});
  net.parameters() = {1, 0, 0, 1, 0, 0};
  const Tensor x({2}, {0.4, 0.6});
  const Tensor g = net.input_gradient(x, Tensor({2}, {1, 0}));
  CHECK(g.data[0] == doctest::Approx(1.0));
  CHECK(g.data[1] == doctest::Approx(0.0));
}

TEST_CASE("input_gradient: dead relu unit blocks gradient") {
  EmbeddingNetwork net({1}, {LayerSpec::dense(1), LayerSpec::relu()});
  net.parameters() = {1.0, -5.0};  // pre-activation stays negative on [0,1]
  const Tensor g = net.input_gradient(Tensor({1}, {0.5}), Tensor({1}, {1.0}));
  CHECK(g.data[0] == 0.0);
}

TEST_CASE("input_gradient: linear in the upstream vector") {
  std::mt19937_64 rng(23);
  EmbeddingNetwork net({4}, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3)});
  net.init_parameters(9);
  const Tensor x = random_tensor({4}, rng);
  const Tensor u1 = random_tensor({3}, rng, -1, 1);
  const Tensor u2 = random_tensor({3}, rng, -1, 1);
  const Tensor lhs = net.input_gradient(x, u1 + u2);
  const Tensor rhs = net.input_gradient(x, u1) + net.input_gradient(x, u2);
  for (std::size_t i = 0; i < lhs.data.size(); ++i)
    CHECK(std::abs(lhs.data[i] - rhs.data[i]) <= 1e-10);
}

TEST_CASE("input_gradient: finite differences across every layer kind") {
  std::mt19937_64 rng(101);
  const std::vector<std::vector<LayerSpec>> archs = {
      {LayerSpec::dense(5)},
      {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(4)},
      {LayerSpec::dense(6), LayerSpec::l2normalize()},
      {LayerSpec::conv2d(3, 3, 1), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(4)},
      {LayerSpec::conv2d(2, 3, 2), LayerSpec::flatten(), LayerSpec::dense(5),
       LayerSpec::l2normalize()},
  };
  int done = 0;
  while (done < 100) {
    const auto& arch = archs[static_cast<std::size_t>(done) % archs.size()];
    const bool conv = arch.front().kind == veil::nn::LayerKind::Conv2d;
    const std::vector<int> in_shape = conv ? std::vector<int>{5, 5, 2} : std::vector<int>{6};
    EmbeddingNetwork net(in_shape, arch);
    net.init_parameters(rng());
    const Tensor x = random_tensor(in_shape, rng);
    if (!safe_for_fd(net, x)) continue;
    const Tensor u = random_tensor({net.embedding_dim()}, rng, -1, 1);
    const Tensor analytic = net.input_gradient(x, u);
    const Tensor fd = veil::nn::finite_difference(
        [&](const Tensor& p) { return veil::dot(u, net.forward(p)); }, x, 1e-5);
    CHECK(veil::nn::max_relative_error(analytic.data, fd.data, 1e-6) <= 1e-4);
    ++done;
  }
}

TEST_CASE("parameter_gradient: zero upstream gives zero gradient") {
  EmbeddingNetwork net({3}, {LayerSpec::dense(2)});
  net.init_parameters(1);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3}, rng);
  const auto grad = net.parameter_gradient({{x, Tensor::zeros({2})}});
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("parameter_gradient: batch additivity") {
  std::mt19937_64 rng(31);
  EmbeddingNetwork net({4}, {LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(3)});
  net.init_parameters(8);
  const Tensor x1 = random_tensor({4}, rng);
  const Tensor x2 = random_tensor({4}, rng);
  const Tensor u1 = random_tensor({3}, rng, -1, 1);
  const Tensor u2 = random_tensor({3}, rng, -1, 1);
  const auto g1 = net.parameter_gradient({{x1, u1}});
  const auto g2 = net.parameter_gradient({{x2, u2}});
  const auto both = net.parameter_gradient({{x1, u1}, {x2, u2}});
  for (std::size_t i = 0; i < both.size(); ++i)
    CHECK(both[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("parameter_gradient: empty batch raises") {
  EmbeddingNetwork net({2}, {LayerSpec::dense(2)});
  CHECK_THROWS_AS(net.parameter_gradient({}), veil::ArgumentError);
}

TEST_CASE("parameter_gradient: finite differences over theta") {
  std::mt19937_64 rng(55);
  // conv(2,3) on 4x4x3 -> 2x2x2 -> flatten 8 -> dense 3: 56 + 27 params
  EmbeddingNetwork small({4, 4, 3}, {LayerSpec::conv2d(2, 3), LayerSpec::relu(),
                                     LayerSpec::flatten(), LayerSpec::dense(3)});
  REQUIRE(small.parameter_count() <= 200);
  int done = 0;
  while (done < 3) {
    small.init_parameters(rng());
    const Tensor x = random_tensor({4, 4, 3}, rng);
    if (!safe_for_fd(small, x)) continue;
    const Tensor u = random_tensor({3}, rng, -1, 1);
    const auto analytic = small.parameter_gradient({{x, u}});
    std::vector<double> theta(small.parameters());
    const auto fd = veil::nn::finite_difference_flat(
        [&](std::span<const double> t) {
          EmbeddingNetwork probe = small;
          probe.parameters().assign(t.begin(), t.end());
          return veil::dot(u, probe.forward(x));
        },
        theta, 1e-5);
    CHECK(veil::nn::max_relative_error(analytic, fd, 1e-6) <= 1e-4);
    ++done;
  }
}

TEST_CASE("finite_difference oracle sanity") {
  const Tensor x({2}, {1.0, 2.0});
  const Tensor g = veil::nn::finite_difference(
      [](const Tensor& p) { return veil::dot(p, p); }, x, 1e-5);
  CHECK(g.data[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g.data[1] == doctest::Approx(4.0).epsilon(1e-6));

  const Tensor c = veil::nn::finite_difference([](const Tensor&) { return 3.5; }, x, 1e-5);
  CHECK(c.data[0] == 0.0);
  CHECK(c.data[1] == 0.0);

  const Tensor b({2}, {3.0, 5.0});
  const Tensor gb = veil::nn::finite_difference(
      [](const Tensor& p) { return p.data[0] * p.data[1]; }, b, 1e-5);
  CHECK(gb.data[0] == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(gb.data[1] == doctest::Approx(3.0).epsilon(1e-6));

  CHECK_THROWS_AS(
      veil::nn::finite_difference([](const Tensor&) { return 0.0; }, x, 0.0),
      veil::ArgumentError);
}

TEST_CASE("kernels: OpenMP and serial paths agree bit-for-bit") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-1, 1);
  auto rvec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
  };
  for (int trial = 0; trial < 10; ++trial) {
    const int out_dim = 3 + static_cast<int>(rng() % 8);
    const int in_dim = 5 + static_cast<int>(rng() % 16);
    const auto w = rvec(static_cast<std::size_t>(out_dim) * in_dim);
    const auto b = rvec(static_cast<std::size_t>(out_dim));
    const auto x = rvec(static_cast<std::size_t>(in_dim));
    std::vector<double> yp(static_cast<std::size_t>(out_dim)), ys(yp);
    veil::nn::kernels::dense_forward(w, b, x, yp, out_dim, in_dim);
    veil::nn::kernels::serial::dense_forward(w, b, x, ys, out_dim, in_dim);
    CHECK(yp == ys);

    veil::nn::kernels::Conv2dDims d;
    d.in_h = 5 + static_cast<int>(rng() % 4);
    d.in_w = 5 + static_cast<int>(rng() % 4);
    d.in_c = 1 + static_cast<int>(rng() % 3);
    d.out_c = 1 + static_cast<int>(rng() % 4);
    d.kernel = 3;
    d.stride = 1 + static_cast<int>(rng() % 2);
    const auto cw = rvec(static_cast<std::size_t>(d.out_c) * d.in_c * 9);
    const auto cb = rvec(static_cast<std::size_t>(d.out_c));
    const auto cx = rvec(static_cast<std::size_t>(d.in_h) * d.in_w * d.in_c);
    const std::size_t on = static_cast<std::size_t>(d.out_h()) * d.out_w() * d.out_c;
    std::vector<double> cyp(on), cys(on);
    veil::nn::kernels::conv2d_forward(d, cw, cb, cx, cyp);
    veil::nn::kernels::serial::conv2d_forward(d, cw, cb, cx, cys);
    CHECK(cyp == cys);

    const auto cu = rvec(on);
    std::vector<double> dxp(cx.size()), dxs(cx.size());
    veil::nn::kernels::conv2d_backward_input(d, cw, cu, dxp);
    veil::nn::kernels::serial::conv2d_backward_input(d, cw, cu, dxs);
    CHECK(dxp == dxs);

    std::vector<double> dwp(cw.size(), 0.0), dbp(cb.size(), 0.0);
    std::vector<double> dws(cw.size(), 0.0), dbs(cb.size(), 0.0);
    veil::nn::kernels::conv2d_backward_params(d, cx, cu, dwp, dbp);
    veil::nn::kernels::serial::conv2d_backward_params(d, cx, cu, dws, dbs);
    CHECK(dwp == dws);
    CHECK(dbp == dbs);
  }
}

TEST_CASE("weights file: header + float32 blob round trip") {
  EmbeddingNetwork net({4, 4, 3}, {LayerSpec::conv2d(2, 3), LayerSpec::relu(),
                                   LayerSpec::flatten(), LayerSpec::dense(3),
                                   LayerSpec::l2normalize()});
  net.init_parameters(99);
  const std::string path = "test_weights.veilw";
  veil::nn::save_weights(path, net);
  const EmbeddingNetwork loaded = veil::nn::load_weights(path);
  REQUIRE(loaded.parameter_count() == net.parameter_count());
  CHECK(loaded.input_shape() == net.input_shape());
  CHECK(loaded.embedding_dim() == net.embedding_dim());
  // Loader upcasts the float32 blob; values match to float precision.
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    CHECK(loaded.parameters()[i] ==
          doctest::Approx(net.parameters()[i]).epsilon(1e-6));
  // Saving the loaded net again is bit-stable (already float32-grid values).
  const std::string path2 = "test_weights2.veilw";
  veil::nn::save_weights(path2, loaded);
  const EmbeddingNetwork again = veil::nn::load_weights(path2);
  CHECK(again.parameters() == loaded.parameters());
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("weights file: bad magic raises") {
  const std::string path = "test_weights_bad.veilw";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTAWEIGHTFILE", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(veil::nn::load_weights(path), veil::IoError);
  std::remove(path.c_str());
}
