#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "mat/kernels.hpp"
#include "mat/rng.hpp"

using namespace mat;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.uniform_f(-1.0f, 1.0f);
  return v;
}

}  // namespace

// The OpenMP kernels parallelize over independent output elements with a
// fixed per-element accumulation order, so they must agree with the serial
// references exactly, not approximately.

TEST_CASE("gemm matches the serial reference bit for bit") {
  Rng rng(11);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 7}, {64, 64, 64}, {33, 129, 65}, {256, 27, 1024}}) {
    auto a = random_vec((size_t)m * k, rng);
    auto b = random_vec((size_t)k * n, rng);
    std::vector<float> c1((size_t)m * n), c2((size_t)m * n);
    kern::ref::gemm(a.data(), b.data(), c1.data(), m, k, n, false);
    kern::gemm(a.data(), b.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);
    // accumulate mode
    kern::ref::gemm(a.data(), b.data(), c1.data(), m, k, n, true);
    kern::gemm(a.data(), b.data(), c2.data(), m, k, n, true);
    CHECK(c1 == c2);
  }
}

TEST_CASE("conv2d (im2col + gemm) matches the direct serial convolution") {
  Rng rng(12);
  for (auto [c, h, w, o, kk, stride, pad] :
       {std::tuple{1, 5, 5, 1, 3, 1, 1}, {3, 16, 16, 8, 3, 1, 1}, {4, 9, 11, 6, 3, 2, 1},
        {2, 8, 8, 5, 1, 2, 0}}) {
    auto x = random_vec((size_t)c * h * w, rng);
    auto wt = random_vec((size_t)o * c * kk * kk, rng);
    auto bias = random_vec((size_t)o, rng);
    const int oh = (h + 2 * pad - kk) / stride + 1;
    const int ow = (w + 2 * pad - kk) / stride + 1;
    std::vector<float> y1((size_t)o * oh * ow), y2((size_t)o * oh * ow);
    kern::ref::conv2d(x.data(), wt.data(), bias.data(), y1.data(), c, h, w, o, kk, kk, stride, pad);
    kern::conv2d(x.data(), wt.data(), bias.data(), y2.data(), c, h, w, o, kk, kk, stride, pad);
    CHECK(y1 == y2);
  }
}

TEST_CASE("softmax rows match the serial reference") {
  Rng rng(13);
  auto x = random_vec(512 * 33, rng);
  std::vector<float> y1(x.size()), y2(x.size());
  kern::ref::softmax_rows(x.data(), y1.data(), 512, 33);
  kern::softmax_rows(x.data(), y2.data(), 512, 33);
  CHECK(y1 == y2);
}

TEST_CASE("results are identical under any thread cap") {
  Rng rng(14);
  const int m = 61, k = 47, n = 53;
  auto a = random_vec((size_t)m * k, rng);
  auto b = random_vec((size_t)k * n, rng);
  std::vector<float> c1((size_t)m * n), c2((size_t)m * n);
  kern::set_max_threads(1);
  kern::gemm(a.data(), b.data(), c1.data(), m, k, n, false);
  kern::set_max_threads(0);
  kern::gemm(a.data(), b.data(), c2.data(), m, k, n, false);
  CHECK(c1 == c2);
}

TEST_CASE("transpose2d round trip") {
  Rng rng(15);
  auto x = random_vec(37 * 21, rng);
  std::vector<float> t((size_t)37 * 21), back((size_t)37 * 21);
  kern::transpose2d(x.data(), t.data(), 37, 21);
  kern::transpose2d(t.data(), back.data(), 21, 37);
  CHECK(back == x);
}

TEST_CASE("conv2d backward accumulates finite gradients of the right size") {
  Rng rng(16);
  const int c = 3, h = 8, w = 8, o = 4, kk = 3;
  auto x = random_vec((size_t)c * h * w, rng);
  auto wt = random_vec((size_t)o * c * kk * kk, rng);
  auto dy = random_vec((size_t)o * h * w, rng);
  std::vector<float> dx((size_t)c * h * w, 0.0f), dw((size_t)o * c * kk * kk, 0.0f), db((size_t)o, 0.0f);
  kern::conv2d_backward(x.data(), wt.data(), dy.data(), dx.data(), dw.data(), db.data(),
                        c, h, w, o, kk, kk, 1, 1);
  CHECK(kern::all_finite(dx.data(), (int64_t)dx.size()));
  CHECK(kern::all_finite(dw.data(), (int64_t)dw.size()));
  double s = 0;
  for (float v : dw) s += std::abs(v);
  CHECK(s > 0.0);
}
