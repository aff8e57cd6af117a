// Benchmark comparing the OpenMP kernels against their serial references.
// Run: ./kernel_bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "mat/kernels.hpp"
#include "mat/rng.hpp"

using namespace mat;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.uniform_f(-1.0f, 1.0f);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
  Rng rng(7);
  std::printf("threads: %d, repeats: %d\n", kern::max_threads(), repeats);
  std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

  {
    const int m = 256, k = 256, n = 256;
    auto a = random_vec((size_t)m * k, rng);
    auto b = random_vec((size_t)k * n, rng);
    std::vector<float> c1((size_t)m * n), c2((size_t)m * n);
    const double ts = time_ms([&] { kern::ref::gemm(a.data(), b.data(), c1.data(), m, k, n, false); }, repeats);
    const double tp = time_ms([&] { kern::gemm(a.data(), b.data(), c2.data(), m, k, n, false); }, repeats);
    std::printf("%-28s %10.3f %10.3f %7.2fx\n", "gemm 256x256x256", ts, tp, ts / tp);
  }
  {
    const int c = 32, h = 64, w = 64, o = 64, kk = 3;
    auto x = random_vec((size_t)c * h * w, rng);
    auto wt = random_vec((size_t)o * c * kk * kk, rng);
    auto bias = random_vec((size_t)o, rng);
    const int oh = h, ow = w;
    std::vector<float> y1((size_t)o * oh * ow), y2((size_t)o * oh * ow);
    const double ts = time_ms(
        [&] { kern::ref::conv2d(x.data(), wt.data(), bias.data(), y1.data(), c, h, w, o, kk, kk, 1, 1); },
        repeats);
    const double tp = time_ms(
        [&] { kern::conv2d(x.data(), wt.data(), bias.data(), y2.data(), c, h, w, o, kk, kk, 1, 1); },
        repeats);
    std::printf("%-28s %10.3f %10.3f %7.2fx\n", "conv2d 32x64x64 -> 64", ts, tp, ts / tp);
  }
  {
    const int64_t rows = 4096;
    const int cols = 256;
    auto x = random_vec((size_t)rows * cols, rng);
    std::vector<float> y1(x.size()), y2(x.size());
    const double ts = time_ms([&] { kern::ref::softmax_rows(x.data(), y1.data(), rows, cols); }, repeats);
    const double tp = time_ms([&] { kern::softmax_rows(x.data(), y2.data(), rows, cols); }, repeats);
    std::printf("%-28s %10.3f %10.3f %7.2fx\n", "softmax 4096x256", ts, tp, ts / tp);
  }
  return 0;
}
