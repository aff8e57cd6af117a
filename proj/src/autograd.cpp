#include "mat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mat/kernels.hpp"

namespace mat {

// The message expression must only be built on failure; these checks sit on
// hot paths that run tens of thousands of times per training pair.
#define MAT_REQUIRE(cond, msg_expr)                 \
  do {                                              \
    if (!(cond)) throw std::invalid_argument(msg_expr); \
  } while (0)

namespace {

constexpr float kLogFloor = 1e-12f;

// Broadcast classification for elementwise binary ops.
// Returns (outer, inner) so the small operand of numel `inner` repeats
// `outer` times over the large one; small==large gives outer=1.
struct Bcast {
  bool a_is_small = false;
  int64_t outer = 1;
  int64_t inner = 1;
};

Bcast classify(const TensorPtr& a, const TensorPtr& b, const char* op) {
  Bcast r;
  const auto& sa = a->shape;
  const auto& sb = b->shape;
  if (sa == sb) {
    r.inner = a->numel();
    return r;
  }
  auto suffix_of = [](const std::vector<int>& small, const std::vector<int>& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (b->numel() == 1 || suffix_of(sb, sa)) {
    r.inner = b->numel();
    r.outer = a->numel() / r.inner;
    return r;
  }
  if (a->numel() == 1 || suffix_of(sa, sb)) {
    r.a_is_small = true;
    r.inner = a->numel();
    r.outer = b->numel() / r.inner;
    return r;
  }
  throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                              shape_str(sb) + " are not broadcast-compatible");
}

// Sum `src` (outer*inner) into `dst` (inner), double accumulation.
void reduce_leading(const float* src, float* dst, int64_t outer, int64_t inner) {
  for (int64_t j = 0; j < inner; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < outer; ++i) acc += src[i * inner + j];
    dst[j] += (float)acc;
  }
}

template <class Fwd>
TensorPtr broadcast_binop(Tape* tp, const TensorPtr& a, const TensorPtr& b, const char* name,
                          Fwd fwd, float da_sign, float db_sign, bool is_mul) {
  Bcast bc = classify(a, b, name);
  const TensorPtr& big = bc.a_is_small ? b : a;
  const TensorPtr& small = bc.a_is_small ? a : b;
  auto out = tensor(big->shape);
  const float* pb = big->value.data();
  const float* ps = small->value.data();
  float* po = out->value.data();
  const int64_t outer = bc.outer, inner = bc.inner;
  const bool small_is_b = !bc.a_is_small;
#pragma omp parallel for schedule(static) if (outer * inner > 16384)
  for (int64_t i = 0; i < outer; ++i) {
    const float* rb = pb + i * inner;
    float* ro = po + i * inner;
    for (int64_t j = 0; j < inner; ++j) {
      ro[j] = small_is_b ? fwd(rb[j], ps[j]) : fwd(ps[j], rb[j]);
    }
  }
  check_finite(*out, name);
  if (tp && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    TensorPtr ra = a, rb2 = b, ro = out;
    tp->record([ra, rb2, ro, bc, da_sign, db_sign, is_mul]() {
      const TensorPtr& big = bc.a_is_small ? rb2 : ra;
      const TensorPtr& small = bc.a_is_small ? ra : rb2;
      const float sign_big = bc.a_is_small ? db_sign : da_sign;
      const float sign_small = bc.a_is_small ? da_sign : db_sign;
      const int64_t outer = bc.outer, inner = bc.inner;
      const float* g = ro->grad.data();
      if (big->requires_grad) {
        big->ensure_grad();
        float* dst = big->grad.data();
        if (is_mul) {
          const float* ps = small->value.data();
#pragma omp parallel for schedule(static) if (outer * inner > 16384)
          for (int64_t i = 0; i < outer; ++i)
            for (int64_t j = 0; j < inner; ++j) dst[i * inner + j] += g[i * inner + j] * ps[j];
        } else {
          kern::vec_axpy(sign_big, g, dst, outer * inner);
        }
      }
      if (small->requires_grad) {
        small->ensure_grad();
        float* dst = small->grad.data();
        if (is_mul) {
          const float* pbv = big->value.data();
          for (int64_t j = 0; j < inner; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < outer; ++i) acc += (double)g[i * inner + j] * pbv[i * inner + j];
            dst[j] += (float)acc;
          }
        } else {
          std::vector<float> tmp(inner, 0.0f);
          reduce_leading(g, tmp.data(), outer, inner);
          for (int64_t j = 0; j < inner; ++j) dst[j] += sign_small * tmp[j];
        }
      }
    });
  }
  return out;
}

template <class Fwd, class Bwd>
TensorPtr unary_op(Tape* tp, const TensorPtr& x, const char* name, Fwd fwd, Bwd bwd_factor) {
  auto out = tensor(x->shape);
  const float* px = x->value.data();
  float* po = out->value.data();
  const int64_t n = x->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  check_finite(*out, name);
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro, bwd_factor]() {
      rx->ensure_grad();
      const float* g = ro->grad.data();
      const float* px = rx->value.data();
      const float* py = ro->value.data();
      float* dst = rx->grad.data();
      const int64_t n = rx->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
      for (int64_t i = 0; i < n; ++i) dst[i] += g[i] * bwd_factor(px[i], py[i]);
    });
  }
  return out;
}

// View x as (outer, len, inner) around `axis`.
struct AxisGeom {
  int64_t outer = 1, len = 1, inner = 1;
  std::vector<int> out_shape;
};

AxisGeom axis_geom(const TensorPtr& x, int axis, const char* op) {
  MAT_REQUIRE(axis >= 0 && axis < (int)x->shape.size(),
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(x->shape));
  AxisGeom g;
  for (int i = 0; i < axis; ++i) g.outer *= x->shape[i];
  g.len = x->shape[axis];
  for (size_t i = axis + 1; i < x->shape.size(); ++i) g.inner *= x->shape[i];
  for (size_t i = 0; i < x->shape.size(); ++i)
    if ((int)i != axis) g.out_shape.push_back(x->shape[i]);
  if (g.out_shape.empty()) g.out_shape.push_back(1);
  return g;
}

}  // namespace

void Tape::backward(const TensorPtr& loss) {
  MAT_REQUIRE(loss->numel() == 1, "backward: loss must be scalar, got " + shape_str(loss->shape));
  if (loss->requires_grad) {
    loss->ensure_grad();
    loss->grad[0] += 1.0f;
  }
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

TensorPtr add(Tape* tp, const TensorPtr& a, const TensorPtr& b) {
  return broadcast_binop(tp, a, b, "add", [](float x, float y) { return x + y; }, 1.0f, 1.0f, false);
}

TensorPtr sub(Tape* tp, const TensorPtr& a, const TensorPtr& b) {
  return broadcast_binop(tp, a, b, "sub", [](float x, float y) { return x - y; }, 1.0f, -1.0f, false);
}

TensorPtr mul(Tape* tp, const TensorPtr& a, const TensorPtr& b) {
  return broadcast_binop(tp, a, b, "mul", [](float x, float y) { return x * y; }, 1.0f, 1.0f, true);
}

TensorPtr scalar_mul(Tape* tp, const TensorPtr& a, float s) {
  return unary_op(tp, a, "scalar_mul", [s](float x) { return x * s; },
                  [s](float, float) { return s; });
}

TensorPtr matmul(Tape* tp, const TensorPtr& a, const TensorPtr& b) {
  MAT_REQUIRE(a->shape.size() == 2 && b->shape.size() == 2,
          "matmul: both operands must be 2-D, got " + shape_str(a->shape) + " and " + shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
  MAT_REQUIRE(k == k2, "matmul: inner dimensions differ, " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = tensor({m, n});
  kern::gemm(a->value.data(), b->value.data(), out->value.data(), m, k, n, false);
  check_finite(*out, "matmul");
  if (tp && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    TensorPtr ra = a, rb = b, ro = out;
    tp->record([ra, rb, ro, m, k, n]() {
      const float* g = ro->grad.data();
      if (ra->requires_grad) {
        ra->ensure_grad();
        std::vector<float> bt((size_t)k * n);
        kern::transpose2d(rb->value.data(), bt.data(), k, n);
        kern::gemm(g, bt.data(), ra->grad.data(), m, n, k, true);
      }
      if (rb->requires_grad) {
        rb->ensure_grad();
        std::vector<float> at((size_t)m * k);
        kern::transpose2d(ra->value.data(), at.data(), m, k);
        kern::gemm(at.data(), g, rb->grad.data(), k, m, n, true);
      }
    });
  }
  return out;
}

TensorPtr conv2d(Tape* tp, const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 int stride, int pad) {
  MAT_REQUIRE(x->shape.size() == 3, "conv2d: input must be (C,H,W), got " + shape_str(x->shape));
  MAT_REQUIRE(w->shape.size() == 4, "conv2d: weight must be (O,C,kh,kw), got " + shape_str(w->shape));
  const int c = x->shape[0], h = x->shape[1], wd = x->shape[2];
  const int o = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  MAT_REQUIRE(w->shape[1] == c, "conv2d: weight channels " + std::to_string(w->shape[1]) +
                                " do not match input channels " + std::to_string(c));
  MAT_REQUIRE(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  MAT_REQUIRE(oh > 0 && ow > 0, "conv2d: kernel larger than padded input");
  if (bias) MAT_REQUIRE(bias->numel() == o, "conv2d: bias length must equal output channels");
  auto out = tensor({o, oh, ow});
  kern::conv2d(x->value.data(), w->value.data(), bias ? bias->value.data() : nullptr,
               out->value.data(), c, h, wd, o, kh, kw, stride, pad);
  check_finite(*out, "conv2d");
  const bool need = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
  if (tp && need) {
    out->requires_grad = true;
    TensorPtr rx = x, rw = w, rb = bias, ro = out;
    tp->record([rx, rw, rb, ro, c, h, wd, o, kh, kw, stride, pad]() {
      float* dx = nullptr;
      float* dw = nullptr;
      float* db = nullptr;
      if (rx->requires_grad) { rx->ensure_grad(); dx = rx->grad.data(); }
      if (rw->requires_grad) { rw->ensure_grad(); dw = rw->grad.data(); }
      if (rb && rb->requires_grad) { rb->ensure_grad(); db = rb->grad.data(); }
      kern::conv2d_backward(rx->value.data(), rw->value.data(), ro->grad.data(),
                            dx, dw, db, c, h, wd, o, kh, kw, stride, pad);
    });
  }
  return out;
}

TensorPtr relu(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
                  [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

TensorPtr abs(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "abs", [](float v) { return std::fabs(v); },
                  [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

TensorPtr exp(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "exp", [](float v) { return std::exp(v); },
                  [](float, float y) { return y; });
}

TensorPtr log(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "log",
                  [](float v) { return std::log(v < kLogFloor ? kLogFloor : v); },
                  [](float v, float) { return v < kLogFloor ? 0.0f : 1.0f / v; });
}

TensorPtr sigmoid(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "sigmoid",
                  [](float v) {
                    if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
                    const float e = std::exp(v);
                    return e / (1.0f + e);
                  },
                  [](float, float y) { return y * (1.0f - y); });
}

TensorPtr softplus(Tape* tp, const TensorPtr& x) {
  return unary_op(tp, x, "softplus",
                  [](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::fabs(v))); },
                  [](float v, float) {
                    if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
                    const float e = std::exp(v);
                    return e / (1.0f + e);
                  });
}

TensorPtr softmax_last(Tape* tp, const TensorPtr& x) {
  MAT_REQUIRE(!x->shape.empty(), "softmax_last: empty shape");
  const int cols = x->shape.back();
  const int64_t rows = x->numel() / cols;
  auto out = tensor(x->shape);
  kern::softmax_rows(x->value.data(), out->value.data(), rows, cols);
  check_finite(*out, "softmax_last");
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro, rows, cols]() {
      rx->ensure_grad();
      const float* y = ro->value.data();
      const float* g = ro->grad.data();
      float* dst = rx->grad.data();
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
      for (int64_t r = 0; r < rows; ++r) {
        const float* yr = y + r * cols;
        const float* gr = g + r * cols;
        float* dr = dst + r * cols;
        double dot = 0.0;
        {
          int j = 0;
          double d8[8] = {0, 0, 0, 0, 0, 0, 0, 0};
          for (; j + 8 <= cols; j += 8)
            for (int l = 0; l < 8; ++l) d8[l] += (double)gr[j + l] * yr[j + l];
          for (int l = 0; l < 8; ++l) dot += d8[l];
          for (; j < cols; ++j) dot += (double)gr[j] * yr[j];
        }
        for (int j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - (float)dot);
      }
    });
  }
  return out;
}

TensorPtr max_axis(Tape* tp, const TensorPtr& x, int axis) {
  AxisGeom gm = axis_geom(x, axis, "max_axis");
  auto out = tensor(gm.out_shape);
  auto argmax = std::make_shared<std::vector<int64_t>>((size_t)(gm.outer * gm.inner));
  const float* px = x->value.data();
  float* po = out->value.data();
  for (int64_t i = 0; i < gm.outer; ++i) {
    for (int64_t j = 0; j < gm.inner; ++j) {
      const float* base = px + i * gm.len * gm.inner + j;
      float best = base[0];
      int64_t bk = 0;
      for (int64_t k = 1; k < gm.len; ++k) {
        const float v = base[k * gm.inner];
        if (v > best) { best = v; bk = k; }
      }
      po[i * gm.inner + j] = best;
      (*argmax)[(size_t)(i * gm.inner + j)] = bk;
    }
  }
  check_finite(*out, "max_axis");
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro, gm, argmax]() {
      rx->ensure_grad();
      const float* g = ro->grad.data();
      float* dst = rx->grad.data();
      for (int64_t i = 0; i < gm.outer; ++i)
        for (int64_t j = 0; j < gm.inner; ++j) {
          const int64_t k = (*argmax)[(size_t)(i * gm.inner + j)];
          dst[i * gm.len * gm.inner + k * gm.inner + j] += g[i * gm.inner + j];
        }
    });
  }
  return out;
}

TensorPtr mean_axis(Tape* tp, const TensorPtr& x, int axis) {
  AxisGeom gm = axis_geom(x, axis, "mean_axis");
  auto out = tensor(gm.out_shape);
  const float* px = x->value.data();
  float* po = out->value.data();
  for (int64_t i = 0; i < gm.outer; ++i) {
    for (int64_t j = 0; j < gm.inner; ++j) {
      const float* base = px + i * gm.len * gm.inner + j;
      double acc = 0.0;
      for (int64_t k = 0; k < gm.len; ++k) acc += base[k * gm.inner];
      po[i * gm.inner + j] = (float)(acc / (double)gm.len);
    }
  }
  check_finite(*out, "mean_axis");
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro, gm]() {
      rx->ensure_grad();
      const float inv = 1.0f / (float)gm.len;
      const float* g = ro->grad.data();
      float* dst = rx->grad.data();
      for (int64_t i = 0; i < gm.outer; ++i)
        for (int64_t k = 0; k < gm.len; ++k)
          for (int64_t j = 0; j < gm.inner; ++j)
            dst[i * gm.len * gm.inner + k * gm.inner + j] += g[i * gm.inner + j] * inv;
    });
  }
  return out;
}

TensorPtr layernorm(Tape* tp, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta) {
  MAT_REQUIRE(!x->shape.empty(), "layernorm: empty shape");
  const int d = x->shape.back();
  MAT_REQUIRE(gamma->numel() == d && beta->numel() == d,
          "layernorm: gamma/beta must have length " + std::to_string(d));
  const int64_t rows = x->numel() / d;
  constexpr double kEps = 1e-5;
  auto out = tensor(x->shape);
  auto stats = std::make_shared<std::vector<float>>((size_t)rows * 2);  // mean, rstd per row
  const float* px = x->value.data();
  const float* pg = gamma->value.data();
  const float* pb = beta->value.data();
  float* po = out->value.data();
#pragma omp parallel for schedule(static) if (rows * d > 16384)
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double t = xr[j] - mean;
      var += t * t;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kEps);
    (*stats)[(size_t)r * 2] = (float)mean;
    (*stats)[(size_t)r * 2 + 1] = (float)rstd;
    float* yr = po + r * d;
    for (int j = 0; j < d; ++j) yr[j] = (float)((xr[j] - mean) * rstd) * pg[j] + pb[j];
  }
  check_finite(*out, "layernorm");
  if (tp && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
    out->requires_grad = true;
    TensorPtr rx = x, rg = gamma, rb = beta, ro = out;
    tp->record([rx, rg, rb, ro, stats, rows, d]() {
      const float* g = ro->grad.data();
      const float* px = rx->value.data();
      const float* pg = rg->value.data();
      if (rg->requires_grad) rg->ensure_grad();
      if (rb->requires_grad) rb->ensure_grad();
      if (rx->requires_grad) rx->ensure_grad();
      // gamma/beta reductions over rows, serial in row order
      if (rg->requires_grad || rb->requires_grad) {
        for (int64_t r = 0; r < rows; ++r) {
          const float mean = (*stats)[(size_t)r * 2];
          const float rstd = (*stats)[(size_t)r * 2 + 1];
          const float* xr = px + r * d;
          const float* gr = g + r * d;
          for (int j = 0; j < d; ++j) {
            const float xhat = (xr[j] - mean) * rstd;
            if (rg->requires_grad) rg->grad[j] += gr[j] * xhat;
            if (rb->requires_grad) rb->grad[j] += gr[j];
          }
        }
      }
      if (rx->requires_grad) {
        float* dst = rx->grad.data();
#pragma omp parallel for schedule(static) if (rows * d > 16384)
        for (int64_t r = 0; r < rows; ++r) {
          const float mean = (*stats)[(size_t)r * 2];
          const float rstd = (*stats)[(size_t)r * 2 + 1];
          const float* xr = px + r * d;
          const float* gr = g + r * d;
          double s1 = 0.0, s2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
          for (int j = 0; j < d; ++j) {
            const float xhat = (xr[j] - mean) * rstd;
            const float dxhat = gr[j] * pg[j];
            s1 += dxhat;
            s2 += (double)dxhat * xhat;
          }
          s1 /= d;
          s2 /= d;
          float* dr = dst + r * d;
          for (int j = 0; j < d; ++j) {
            const float xhat = (xr[j] - mean) * rstd;
            const float dxhat = gr[j] * pg[j];
            dr[j] += rstd * (dxhat - (float)s1 - xhat * (float)s2);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr embedding(Tape* tp, const TensorPtr& table, const std::vector<int>& ids) {
  MAT_REQUIRE(table->shape.size() == 2, "embedding: table must be (V,d)");
  const int v = table->shape[0], d = table->shape[1];
  for (int id : ids)
    MAT_REQUIRE(id >= 0 && id < v, "embedding: id " + std::to_string(id) + " out of vocabulary");
  const int l = (int)ids.size();
  auto out = tensor({l, d});
  for (int i = 0; i < l; ++i)
    std::memcpy(out->value.data() + (int64_t)i * d, table->value.data() + (int64_t)ids[i] * d,
                sizeof(float) * (size_t)d);
  check_finite(*out, "embedding");
  if (tp && table->requires_grad) {
    out->requires_grad = true;
    TensorPtr rt = table, ro = out;
    auto idc = ids;
    tp->record([rt, ro, idc]() {
      rt->ensure_grad();
      const int d = rt->shape[1];
      for (size_t i = 0; i < idc.size(); ++i) {
        const float* g = ro->grad.data() + (int64_t)i * d;
        float* dst = rt->grad.data() + (int64_t)idc[i] * d;
        for (int j = 0; j < d; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

TensorPtr reshape(Tape* tp, const TensorPtr& x, std::vector<int> shape) {
  MAT_REQUIRE(numel_of(shape) == x->numel(),
          "reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
  auto out = tensor(std::move(shape), std::vector<float>(x->value));
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro]() {
      rx->ensure_grad();
      kern::vec_axpy(1.0f, ro->grad.data(), rx->grad.data(), rx->numel());
    });
  }
  return out;
}

TensorPtr transpose(Tape* tp, const TensorPtr& x) {
  MAT_REQUIRE(x->shape.size() == 2, "transpose: 2-D only, got " + shape_str(x->shape));
  const int m = x->shape[0], n = x->shape[1];
  auto out = tensor({n, m});
  kern::transpose2d(x->value.data(), out->value.data(), m, n);
  if (tp && x->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = x, ro = out;
    tp->record([rx, ro, m, n]() {
      rx->ensure_grad();
      std::vector<float> gt((size_t)m * n);
      kern::transpose2d(ro->grad.data(), gt.data(), n, m);
      kern::vec_axpy(1.0f, gt.data(), rx->grad.data(), (int64_t)m * n);
    });
  }
  return out;
}

TensorPtr concat(Tape* tp, const std::vector<TensorPtr>& parts, int axis) {
  MAT_REQUIRE(!parts.empty(), "concat: no inputs");
  const auto& s0 = parts[0]->shape;
  MAT_REQUIRE(axis >= 0 && axis < (int)s0.size(), "concat: axis out of range");
  std::vector<int> out_shape = s0;
  int total = 0;
  for (const auto& p : parts) {
    MAT_REQUIRE(p->shape.size() == s0.size(), "concat: rank mismatch");
    for (size_t i = 0; i < s0.size(); ++i)
      MAT_REQUIRE((int)i == axis || p->shape[i] == s0[i], "concat: non-axis dimensions must match");
    total += p->shape[axis];
  }
  out_shape[axis] = total;
  auto out = tensor(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  // copy blocks
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int64_t plen = (int64_t)p->shape[axis] * inner;
    for (int64_t i = 0; i < outer; ++i)
      std::memcpy(out->value.data() + i * (int64_t)total * inner + off,
                  p->value.data() + i * plen, sizeof(float) * (size_t)plen);
    off += plen;
  }
  check_finite(*out, "concat");
  bool need = false;
  for (const auto& p : parts) need = need || p->requires_grad;
  if (tp && need) {
    out->requires_grad = true;
    auto ps = parts;
    TensorPtr ro = out;
    tp->record([ps, ro, offsets, outer, inner, total]() {
      for (size_t pi = 0; pi < ps.size(); ++pi) {
        if (!ps[pi]->requires_grad) continue;
        ps[pi]->ensure_grad();
        const int64_t plen = ps[pi]->numel() / outer;
        for (int64_t i = 0; i < outer; ++i) {
          const float* src = ro->grad.data() + i * (int64_t)total * inner + offsets[pi];
          float* dst = ps[pi]->grad.data() + i * plen;
          for (int64_t j = 0; j < plen; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

TensorPtr cross_entropy_logits(Tape* tp, const TensorPtr& logits, const std::vector<int>& targets) {
  MAT_REQUIRE(logits->shape.size() == 2, "cross_entropy: logits must be (P,V)");
  const int p = logits->shape[0], v = logits->shape[1];
  MAT_REQUIRE((int)targets.size() == p, "cross_entropy: targets length must equal logits rows");
  int scored = 0;
  for (int t : targets) {
    MAT_REQUIRE(t >= -1 && t < v, "cross_entropy: target id out of range");
    if (t >= 0) ++scored;
  }
  MAT_REQUIRE(scored > 0, "cross_entropy: no scored positions");
  const float* px = logits->value.data();
  double loss = 0.0;
  auto probs = std::make_shared<std::vector<float>>((size_t)p * v);
  kern::softmax_rows(px, probs->data(), p, v);
  for (int r = 0; r < p; ++r) {
    if (targets[r] < 0) continue;
    const float* xr = px + (int64_t)r * v;
    float mx = xr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
    double lse = 0.0;
    for (int j = 0; j < v; ++j) lse += std::exp((double)xr[j] - mx);
    loss += (mx + std::log(lse)) - xr[targets[r]];
  }
  auto out = scalar((float)(loss / scored));
  check_finite(*out, "cross_entropy");
  if (tp && logits->requires_grad) {
    out->requires_grad = true;
    TensorPtr rx = logits, ro = out;
    auto tgt = targets;
    tp->record([rx, ro, probs, tgt, p, v, scored]() {
      rx->ensure_grad();
      const float g = ro->grad[0] / (float)scored;
      float* dst = rx->grad.data();
      for (int r = 0; r < p; ++r) {
        if (tgt[r] < 0) continue;
        const float* pr = probs->data() + (int64_t)r * v;
        float* dr = dst + (int64_t)r * v;
        for (int j = 0; j < v; ++j) dr[j] += g * pr[j];
        dr[tgt[r]] -= g;
      }
    });
  }
  return out;
}

TensorPtr sum_all(Tape* tp, const TensorPtr& x) {
  auto flat = reshape(tp, x, {(int)x->numel()});
  return scalar_mul(tp, mean_axis(tp, flat, 0), (float)x->numel());
}

TensorPtr mean_all(Tape* tp, const TensorPtr& x) {
  return mean_axis(tp, reshape(tp, x, {(int)x->numel()}), 0);
}

TensorPtr max_all(Tape* tp, const TensorPtr& x) {
  return max_axis(tp, reshape(tp, x, {(int)x->numel()}), 0);
}

double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                  const TensorPtr& point, float eps) {
  MAT_REQUIRE(eps > 0.0f && eps <= 1e-2f, "grad_check: eps must be in (0, 1e-2]");
  auto x = tensor(point->shape, std::vector<float>(point->value));
  x->requires_grad = true;
  Tape tape;
  auto loss = f(tape, x);
  MAT_REQUIRE(loss->numel() == 1, "grad_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<float> analytic(x->numel(), 0.0f);
  if (x->has_grad()) analytic = x->grad;

  double max_err = 0.0;
  for (int64_t i = 0; i < point->numel(); ++i) {
    auto probe = [&](float delta) {
      auto xp = tensor(point->shape, std::vector<float>(point->value));
      xp->value[(size_t)i] += delta;
      Tape t2;
      auto l2 = f(t2, xp);
      return (double)l2->value[0];
    };
    const double fp = probe(eps);
    const double fm = probe(-eps);
    const double num = (fp - fm) / (2.0 * (double)eps);
    const double err = std::fabs((double)analytic[(size_t)i] - num) / std::max(1.0, std::fabs(num));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

void sgd_step(const std::vector<TensorPtr>& params, float lr) {
  MAT_REQUIRE(lr >= 0.0f, "sgd_step: lr must be non-negative");
  for (const auto& p : params) {
    if (!p->has_grad())
      throw std::invalid_argument("sgd_step: parameter '" + p->name + "' has no gradient");
  }
  for (const auto& p : params) {
    kern::vec_axpy(-lr, p->grad.data(), p->value.data(), p->numel());
    p->zero_grad();
  }
}

}  // namespace mat
