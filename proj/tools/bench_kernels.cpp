// Benchmark comparing the OpenMP kernels against the serial reference.
// Also checks that both paths agree bit-for-bit on every run.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <vector>

#include "veil/kernels.hpp"

namespace {

using veil::nn::kernels::Conv2dDims;

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now();
    fn();
    best = std::min(best, now() - t0);
  }
  return best;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial_s, double parallel_s, bool match) {
  std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx   bit-match %s\n", name,
              serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s, match ? "yes" : "NO");
}

}  // namespace

int main() {
  std::mt19937_64 rng(17);
  int failures = 0;
  const int reps = 5;

  {
    const int out_dim = 512, in_dim = 4096;
    const auto w = random_vec(static_cast<std::size_t>(out_dim) * in_dim, rng);
    const auto b = random_vec(out_dim, rng);
    const auto x = random_vec(in_dim, rng);
    std::vector<double> ys(out_dim), yp(out_dim);
    const double ts = time_best_of(
        reps, [&] { veil::nn::kernels::serial::dense_forward(w, b, x, ys, out_dim, in_dim); });
    const double tp =
        time_best_of(reps, [&] { veil::nn::kernels::dense_forward(w, b, x, yp, out_dim, in_dim); });
    const bool ok = bits_equal(ys, yp);
    failures += !ok;
    report("dense_forward 512x4096", ts, tp, ok);

    std::vector<double> dxs(in_dim), dxp(in_dim);
    const auto u = random_vec(out_dim, rng);
    const double ts2 = time_best_of(reps, [&] {
      veil::nn::kernels::serial::dense_backward_input(w, u, dxs, out_dim, in_dim);
    });
    const double tp2 = time_best_of(
        reps, [&] { veil::nn::kernels::dense_backward_input(w, u, dxp, out_dim, in_dim); });
    const bool ok2 = bits_equal(dxs, dxp);
    failures += !ok2;
    report("dense_backward_input", ts2, tp2, ok2);

    std::vector<double> dws(w.size(), 0.0), dbs(out_dim, 0.0);
    std::vector<double> dwp(w.size(), 0.0), dbp(out_dim, 0.0);
    const double ts3 = time_best_of(reps, [&] {
      std::fill(dws.begin(), dws.end(), 0.0);
      std::fill(dbs.begin(), dbs.end(), 0.0);
      veil::nn::kernels::serial::dense_backward_params(x, u, dws, dbs, out_dim, in_dim);
    });
    const double tp3 = time_best_of(reps, [&] {
      std::fill(dwp.begin(), dwp.end(), 0.0);
      std::fill(dbp.begin(), dbp.end(), 0.0);
      veil::nn::kernels::dense_backward_params(x, u, dwp, dbp, out_dim, in_dim);
    });
    const bool ok3 = bits_equal(dws, dwp) && bits_equal(dbs, dbp);
    failures += !ok3;
    report("dense_backward_params", ts3, tp3, ok3);
  }

  {
    Conv2dDims d;
    d.in_h = 96;
    d.in_w = 96;
    d.in_c = 3;
    d.out_c = 16;
    d.kernel = 5;
    d.stride = 1;
    const auto w = random_vec(static_cast<std::size_t>(d.out_c) * d.in_c * d.kernel * d.kernel,
                              rng);
    const auto b = random_vec(d.out_c, rng);
    const auto x = random_vec(static_cast<std::size_t>(d.in_h) * d.in_w * d.in_c, rng);
    const std::size_t out_n = static_cast<std::size_t>(d.out_h()) * d.out_w() * d.out_c;
    std::vector<double> ys(out_n), yp(out_n);
    const double ts =
        time_best_of(reps, [&] { veil::nn::kernels::serial::conv2d_forward(d, w, b, x, ys); });
    const double tp =
        time_best_of(reps, [&] { veil::nn::kernels::conv2d_forward(d, w, b, x, yp); });
    const bool ok = bits_equal(ys, yp);
    failures += !ok;
    report("conv2d_forward 96x96x3->16", ts, tp, ok);

    const auto u = random_vec(out_n, rng);
    std::vector<double> dxs(x.size()), dxp(x.size());
    const double ts2 = time_best_of(
        reps, [&] { veil::nn::kernels::serial::conv2d_backward_input(d, w, u, dxs); });
    const double tp2 =
        time_best_of(reps, [&] { veil::nn::kernels::conv2d_backward_input(d, w, u, dxp); });
    const bool ok2 = bits_equal(dxs, dxp);
    failures += !ok2;
    report("conv2d_backward_input", ts2, tp2, ok2);

    std::vector<double> dws(w.size(), 0.0), dbs(b.size(), 0.0);
    std::vector<double> dwp(w.size(), 0.0), dbp(b.size(), 0.0);
    const double ts3 = time_best_of(reps, [&] {
      std::fill(dws.begin(), dws.end(), 0.0);
      std::fill(dbs.begin(), dbs.end(), 0.0);
      veil::nn::kernels::serial::conv2d_backward_params(d, x, u, dws, dbs);
    });
    const double tp3 = time_best_of(reps, [&] {
      std::fill(dwp.begin(), dwp.end(), 0.0);
      std::fill(dbp.begin(), dbp.end(), 0.0);
      veil::nn::kernels::conv2d_backward_params(d, x, u, dwp, dbp);
    });
    const bool ok3 = bits_equal(dws, dwp) && bits_equal(dbs, dbp);
    failures += !ok3;
    report("conv2d_backward_params", ts3, tp3, ok3);
  }

  if (failures) {
    std::printf("%d kernel(s) diverged between serial and OpenMP paths\n", failures);
    return 1;
  }
  return 0;
}
