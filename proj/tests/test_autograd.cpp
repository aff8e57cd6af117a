#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mat/autograd.hpp"
#include "mat/rng.hpp"

using namespace mat;

namespace {

TensorPtr random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  auto t = tensor(std::move(shape));
  for (auto& v : t->value) v = rng.uniform_f(lo, hi);
  return t;
}

// weighted scalar readout so gradients are coordinate-dependent
TensorPtr readout(Tape& tp, const TensorPtr& y, uint64_t seed) {
  Rng rng(seed);
  auto w = tensor(y->shape);
  for (auto& v : w->value) v = rng.uniform_f(-1.0f, 1.0f);
  return sum_all(&tp, mul(&tp, y, w));
}

// runs grad_check at `points` seeded points, returns the max error
double check_many(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                  const std::vector<int>& shape, int points, uint64_t seed,
                  float lo = -1.0f, float hi = 1.0f) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    Rng rng(hash_seed(seed, (uint64_t)p));
    auto x = random_tensor(shape, rng, lo, hi);
    worst = std::max(worst, grad_check(f, x, 1e-3f));
  }
  return worst;
}

}  // namespace

TEST_CASE("gradients of every differentiable primitive match central differences") {
  const int pts = 10;
  // elementwise unary
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, exp(&tp, x), 11); },
                   {3, 4}, pts, 1) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, sigmoid(&tp, x), 12); },
                   {3, 4}, pts, 2) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, softplus(&tp, x), 13); },
                   {3, 4}, pts, 3) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, log(&tp, x), 14); },
                   {3, 4}, pts, 4, 0.5f, 2.0f) < 1e-3);
  // relu/abs away from the kink
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, relu(&tp, x), 15); },
                   {12}, pts, 5, 0.2f, 1.0f) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, abs(&tp, x), 16); },
                   {12}, pts, 6, 0.2f, 1.0f) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, scalar_mul(&tp, x, -1.7f), 17); },
                   {5}, pts, 7) < 1e-3);

  // binary with broadcasting
  Rng crng(99);
  auto c_same = random_tensor({3, 4}, crng);
  auto c_row = random_tensor({4}, crng);
  auto c_scalar = random_tensor({1}, crng);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, add(&tp, x, c_row), 18); },
                   {3, 4}, pts, 8) < 1e-3);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, sub(&tp, c_same, x), 19); },
                   {3, 4}, pts, 9) < 1e-3);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, mul(&tp, x, c_scalar), 20); },
                   {3, 4}, pts, 10) < 1e-3);
  // gradient w.r.t. the broadcast (small) side
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, mul(&tp, c_same, x), 21); },
                   {4}, pts, 11) < 1e-3);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, sub(&tp, x, c_same), 22); },
                   {1}, pts, 12) < 1e-3);

  // matmul, both operands
  auto mb = random_tensor({4, 5}, crng);
  auto ma = random_tensor({3, 4}, crng);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, matmul(&tp, x, mb), 23); },
                   {3, 4}, pts, 13) < 1e-3);
  CHECK(check_many([&](Tape& tp, const TensorPtr& x) { return readout(tp, matmul(&tp, ma, x), 24); },
                   {4, 5}, pts, 14) < 1e-3);

  // reductions and structure ops
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, mean_axis(&tp, x, 1), 25); },
                   {3, 4, 2}, pts, 15) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, reshape(&tp, x, {8, 3}), 26); },
                   {3, 8}, pts, 16) < 1e-3);
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, transpose(&tp, x), 27); },
                   {5, 3}, pts, 17) < 1e-3);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& x) {
              return readout(tp, concat(&tp, {x, c_same}, 0), 28);
            },
            {3, 4}, pts, 18) < 1e-3);
  // max_axis: rows spread out so eps never flips the argmax
  for (int p = 0; p < pts; ++p) {
    Rng rng(hash_seed(19, (uint64_t)p));
    auto x = random_tensor({4, 3}, rng, -0.1f, 0.1f);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) x->value[(size_t)(i * 3 + j)] += 0.25f * (float)((i + j + p) % 4);
    CHECK(grad_check([](Tape& tp, const TensorPtr& t) { return readout(tp, max_axis(&tp, t, 0), 29); },
                     x, 1e-3f) < 1e-3);
  }

  // softmax / layernorm / embedding / cross-entropy
  CHECK(check_many([](Tape& tp, const TensorPtr& x) { return readout(tp, softmax_last(&tp, x), 30); },
                   {3, 5}, pts, 20) < 1e-3);
  auto gamma = random_tensor({6}, crng, 0.5f, 1.5f);
  auto beta = random_tensor({6}, crng);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& x) {
              return readout(tp, layernorm(&tp, x, gamma, beta), 31);
            },
            {4, 6}, pts, 21) < 1e-3);
  auto lx = random_tensor({4, 6}, crng);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& g) {
              return readout(tp, layernorm(&tp, lx, g, beta), 32);
            },
            {6}, pts, 22, 0.5f, 1.5f) < 1e-3);
  CHECK(check_many(
            [](Tape& tp, const TensorPtr& table) {
              return readout(tp, embedding(&tp, table, {0, 2, 1, 2}), 33);
            },
            {3, 5}, pts, 23) < 1e-3);
  CHECK(check_many(
            [](Tape& tp, const TensorPtr& logits) {
              return cross_entropy_logits(&tp, logits, {1, 0, -1, 2});
            },
            {4, 3}, pts, 24) < 1e-3);

  // conv2d, input and weights
  auto cw = random_tensor({4, 2, 3, 3}, crng, -0.5f, 0.5f);
  auto cb = random_tensor({4}, crng);
  auto cx = random_tensor({2, 6, 6}, crng);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& x) {
              return readout(tp, conv2d(&tp, x, cw, cb, 1, 1), 34);
            },
            {2, 6, 6}, pts, 25) < 1e-3);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& w) {
              return readout(tp, conv2d(&tp, cx, w, cb, 2, 1), 35);
            },
            {4, 2, 3, 3}, pts, 26) < 1e-3);
  CHECK(check_many(
            [&](Tape& tp, const TensorPtr& b) {
              return readout(tp, conv2d(&tp, cx, cw, b, 1, 0), 36);
            },
            {4}, pts, 27) < 1e-3);
}

TEST_CASE("sum gradient is ones, square gradient is 2x") {
  auto x = tensor({5}, {1, 2, 3, 4, 5});
  x->requires_grad = true;
  Tape tp;
  auto loss = sum_all(&tp, x);
  tp.backward(loss);
  for (float g : x->grad) CHECK(g == doctest::Approx(1.0).epsilon(1e-6));

  auto y = tensor({2}, {1, 2});
  y->requires_grad = true;
  Tape tp2;
  tp2.backward(sum_all(&tp2, mul(&tp2, y, y)));
  CHECK(y->grad[0] == doctest::Approx(2.0));
  CHECK(y->grad[1] == doctest::Approx(4.0));
}

TEST_CASE("constant function has exactly zero gradient") {
  auto x = tensor({3}, {1, 2, 3});
  auto f = [](Tape&, const TensorPtr&) { return scalar(4.0f); };
  CHECK(grad_check(f, x, 1e-3f) == 0.0);
}

TEST_CASE("diamond graph sums both path gradients") {
  auto x = tensor({4}, {1, -2, 3, 0.5f});
  x->requires_grad = true;
  Tape tp;
  auto u = scalar_mul(&tp, x, 2.0f);
  auto v = scalar_mul(&tp, x, 3.0f);
  tp.backward(sum_all(&tp, add(&tp, u, v)));
  for (float g : x->grad) CHECK(g == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({7, 9}, rng, -30.0f, 30.0f);
    Tape tp;
    auto y = softmax_last(&tp, x);
    for (int r = 0; r < 7; ++r) {
      double s = 0.0;
      for (int c = 0; c < 9; ++c) {
        const float v = y->value[(size_t)r * 9 + c];
        CHECK(v >= 0.0f);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("shape arithmetic") {
  Rng rng(6);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({3, 4}, rng);
  CHECK(matmul(nullptr, a, b)->shape == std::vector<int>{2, 4});
  auto img = random_tensor({3, 64, 64}, rng);
  auto w = random_tensor({64, 3, 3, 3}, rng, -0.1f, 0.1f);
  CHECK(conv2d(nullptr, img, w, nullptr, 1, 1)->shape == std::vector<int>{64, 64, 64});
  CHECK_THROWS_AS(matmul(nullptr, a, a), std::invalid_argument);
}

TEST_CASE("reshape and transpose round-trip bit-exactly") {
  Rng rng(7);
  auto x = random_tensor({5, 7}, rng);
  auto back = reshape(nullptr, reshape(nullptr, x, {7, 5}), {5, 7});
  CHECK(back->value == x->value);
  auto tback = transpose(nullptr, transpose(nullptr, x));
  CHECK(tback->value == x->value);
}

TEST_CASE("backward requires a scalar loss") {
  auto x = tensor({3}, {1, 2, 3});
  x->requires_grad = true;
  Tape tp;
  auto y = scalar_mul(&tp, x, 2.0f);
  CHECK_THROWS_AS(tp.backward(y), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls") {
  auto x = tensor({2}, {1, 1});
  x->requires_grad = true;
  for (int i = 0; i < 3; ++i) {
    Tape tp;
    tp.backward(sum_all(&tp, x));
  }
  CHECK(x->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("sgd_step applies the update and zeroes grads") {
  auto p = tensor({1}, {1.0f});
  p->requires_grad = true;
  p->ensure_grad();
  p->grad[0] = 0.5f;
  sgd_step({p}, 0.1f);
  CHECK(p->value[0] == doctest::Approx(0.95).epsilon(1e-6));
  CHECK(p->grad[0] == 0.0f);

  // lr = 0 leaves parameters unchanged
  p->grad[0] = 123.0f;
  sgd_step({p}, 0.0f);
  CHECK(p->value[0] == doctest::Approx(0.95).epsilon(1e-6));

  // two successive steps with a fixed grad move by 2*lr*g
  auto q = tensor({1}, {1.0f});
  q->requires_grad = true;
  for (int i = 0; i < 2; ++i) {
    q->ensure_grad();
    q->grad[0] = 0.25f;
    sgd_step({q}, 0.1f);
  }
  CHECK(q->value[0] == doctest::Approx(1.0 - 2 * 0.1 * 0.25).epsilon(1e-6));

  auto missing = tensor({1}, {1.0f});
  missing->requires_grad = true;
  CHECK_THROWS_AS(sgd_step({missing}, 0.1f), std::invalid_argument);
}

TEST_CASE("log clamps its domain instead of producing -inf") {
  auto x = tensor({2}, {0.0f, 1e-20f});
  Tape tp;
  auto y = log(&tp, x);
  CHECK(std::isfinite(y->value[0]));
  CHECK(y->value[0] == doctest::Approx(std::log(1e-12)).epsilon(1e-5));
}

TEST_CASE("inference without a tape records nothing") {
  auto x = tensor({2}, {1, 2});
  x->requires_grad = true;
  Tape tp;
  auto y = scalar_mul(nullptr, x, 3.0f);
  CHECK_FALSE(y->requires_grad);
  CHECK(tp.size() == 0);
}
