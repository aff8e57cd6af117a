#include "mat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mat::kern {

namespace {
int g_thread_cap = 0;  // 0 = OpenMP default
}

int max_threads() {
#ifdef _OPENMP
  return g_thread_cap > 0 ? g_thread_cap : omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
  g_thread_cap = n > 0 ? n : 0;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

// Work below this many flops is not worth a fork/join.
static constexpr int64_t kParCutoff = 16 * 1024;

// lane-split row reductions; the strided lanes let the compiler vectorize
// what a strict left-to-right fold cannot
static inline float row_max(const float* __restrict x, int n) {
  float mx = x[0];
  int j = 0;
  if (n >= 8) {
    float m8[8];
    for (int l = 0; l < 8; ++l) m8[l] = x[l];
    for (j = 8; j + 8 <= n; j += 8)
      for (int l = 0; l < 8; ++l) m8[l] = std::max(m8[l], x[j + l]);
    for (int l = 0; l < 8; ++l) mx = std::max(mx, m8[l]);
  }
  for (; j < n; ++j) mx = std::max(mx, x[j]);
  return mx;
}

static inline double row_sum(const float* __restrict x, int n) {
  double s = 0.0;
  int j = 0;
  if (n >= 8) {
    double s8[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (; j + 8 <= n; j += 8)
      for (int l = 0; l < 8; ++l) s8[l] += x[j + l];
    for (int l = 0; l < 8; ++l) s += s8[l];
  }
  for (; j < n; ++j) s += x[j];
  return s;
}

// exp approximation accurate to ~1e-7 relative; written so the compiler can
// vectorize softmax rows (libm expf defeats that)
static inline float fast_exp(float x) {
  x = std::min(87.0f, std::max(-87.0f, x));
  const float z = x * 1.44269504088896341f;  // x / ln 2
  const float r = (z + 12582912.0f) - 12582912.0f;  // nearest integer
  const float f = z - r;                            // in [-0.5, 0.5]
  float p = 1.0f + f * (0.693147180f +
                        f * (0.240226507f +
                             f * (0.0555041086f + f * (0.00961812911f + f * 0.00133335581f))));
  const uint32_t bits = (uint32_t)(((int)r + 127) << 23);
  float scale;
  std::memcpy(&scale, &bits, 4);
  return p * scale;
}

namespace {

// Fixed-width register-blocked row kernel: the accumulator tile lives in
// vector registers across the whole k loop instead of round-tripping
// through crow on every iteration.
template <int JB>
inline void gemm_row_tile(const float* __restrict arow, const float* __restrict b,
                          float* __restrict crow, int k, int n, int j0) {
  float acc[JB];
  for (int j = 0; j < JB; ++j) acc[j] = crow[j0 + j];
  for (int p = 0; p < k; ++p) {
    const float aip = arow[p];
    const float* __restrict brow = b + (int64_t)p * n + j0;
    for (int j = 0; j < JB; ++j) acc[j] += aip * brow[j];
  }
  for (int j = 0; j < JB; ++j) crow[j0 + j] = acc[j];
}

inline void gemm_row(const float* __restrict arow, const float* __restrict b,
                     float* __restrict crow, int k, int n) {
  int j0 = 0;
  for (; j0 + 64 <= n; j0 += 64) gemm_row_tile<64>(arow, b, crow, k, n, j0);
  for (; j0 + 16 <= n; j0 += 16) gemm_row_tile<16>(arow, b, crow, k, n, j0);
  if (j0 < n) {
    for (int p = 0; p < k; ++p) {
      const float aip = arow[p];
      if (aip == 0.0f) continue;
      const float* __restrict brow = b + (int64_t)p * n;
      for (int j = j0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  const int64_t flops = (int64_t)m * k * n;
#pragma omp parallel for schedule(static) if (flops > kParCutoff)
  for (int i = 0; i < m; ++i) {
    float* crow = c + (int64_t)i * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * (size_t)n);
    gemm_row(a + (int64_t)i * k, b, crow, k, n);
  }
}

void transpose2d(const float* in, float* out, int m, int n) {
#pragma omp parallel for schedule(static) if ((int64_t)m * n > kParCutoff)
  for (int i = 0; i < m; ++i) {
    const float* row = in + (int64_t)i * n;
    for (int j = 0; j < n; ++j) out[(int64_t)j * m + i] = row[j];
  }
}

static inline int conv_out_dim(int in, int kk, int stride, int pad) {
  return (in + 2 * pad - kk) / stride + 1;
}

// im2col with rows in (c, kh, kw) order so that the GEMM accumulation order
// matches a direct (c, kh, kw) convolution loop exactly.
static void im2col(const float* x, float* col, int c, int h, int w,
                   int kh, int kw, int stride, int pad, int oh, int ow) {
  const int l = oh * ow;
#pragma omp parallel for schedule(static) if ((int64_t)c * kh * kw * l > kParCutoff)
  for (int cc = 0; cc < c; ++cc) {
    const float* xc = x + (int64_t)cc * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = col + ((int64_t)(cc * kh + ky) * kw + kx) * l;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* drow = dst + (int64_t)oy * ow;
          if (iy < 0 || iy >= h) {
            std::memset(drow, 0, sizeof(float) * (size_t)ow);
            continue;
          }
          const float* xrow = xc + (int64_t)iy * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < w) ? xrow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

static void col2im(const float* col, float* x, int c, int h, int w,
                   int kh, int kw, int stride, int pad, int oh, int ow) {
  const int l = oh * ow;
#pragma omp parallel for schedule(static) if ((int64_t)c * kh * kw * l > kParCutoff)
  for (int cc = 0; cc < c; ++cc) {
    float* xc = x + (int64_t)cc * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* src = col + ((int64_t)(cc * kh + ky) * kw + kx) * l;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* xrow = xc + (int64_t)iy * w;
          const float* srow = src + (int64_t)oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) xrow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void conv2d(const float* x, const float* w, const float* bias, float* y,
            int c, int h, int wd, int o, int kh, int kw, int stride, int pad) {
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(wd, kw, stride, pad);
  const int l = oh * ow;
  const int ck = c * kh * kw;
  std::vector<float> col((size_t)ck * l);
  im2col(x, col.data(), c, h, wd, kh, kw, stride, pad, oh, ow);
  gemm(w, col.data(), y, o, ck, l, false);
  if (bias) {
#pragma omp parallel for schedule(static) if ((int64_t)o * l > kParCutoff)
    for (int oc = 0; oc < o; ++oc) {
      float* yrow = y + (int64_t)oc * l;
      const float bb = bias[oc];
      for (int i = 0; i < l; ++i) yrow[i] += bb;
    }
  }
}

void conv2d_backward(const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias,
                     int c, int h, int wd, int o, int kh, int kw, int stride, int pad) {
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(wd, kw, stride, pad);
  const int l = oh * ow;
  const int ck = c * kh * kw;
  if (dw || dx) {
    std::vector<float> col((size_t)ck * l);
    im2col(x, col.data(), c, h, wd, kh, kw, stride, pad, oh, ow);
    if (dw) {
      // dW[o,ck] += dY[o,l] @ col[ck,l]^T
      std::vector<float> colT((size_t)l * ck);
      transpose2d(col.data(), colT.data(), ck, l);
      gemm(dy, colT.data(), dw, o, l, ck, true);
    }
    if (dx) {
      // dcol[ck,l] = W[o,ck]^T @ dY[o,l]; then scatter back
      std::vector<float> wT((size_t)ck * o);
      transpose2d(w, wT.data(), o, ck);
      std::vector<float>& dcol = col;  // reuse storage
      gemm(wT.data(), dy, dcol.data(), ck, o, l, false);
      col2im(dcol.data(), dx, c, h, wd, kh, kw, stride, pad, oh, ow);
    }
  }
  if (dbias) {
    for (int oc = 0; oc < o; ++oc) {
      double acc = 0.0;
      const float* dyr = dy + (int64_t)oc * l;
      for (int i = 0; i < l; ++i) acc += dyr[i];
      dbias[oc] += (float)acc;
    }
  }
}

void softmax_rows(const float* x, float* y, int64_t rows, int cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParCutoff)
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float* yr = y + r * cols;
    const float mx = row_max(xr, cols);
    for (int j = 0; j < cols; ++j) yr[j] = fast_exp(xr[j] - mx);
    const double sum = row_sum(yr, cols);
    const float inv = (float)(1.0 / sum);
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void vec_add(const float* a, const float* b, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void vec_sub(const float* a, const float* b, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void vec_mul(const float* a, const float* b, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void vec_scale(const float* a, float s, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * s;
}

void vec_axpy(float alpha, const float* x, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

bool all_finite(const float* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

namespace ref {

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + (int64_t)i * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * (size_t)n);
    for (int p = 0; p < k; ++p) {
      const float aip = a[(int64_t)i * k + p];
      if (aip == 0.0f) continue;
      const float* brow = b + (int64_t)p * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void conv2d(const float* x, const float* w, const float* bias, float* y,
            int c, int h, int wd, int o, int kh, int kw, int stride, int pad) {
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(wd, kw, stride, pad);
  for (int oc = 0; oc < o; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float acc = 0.0f;
        for (int cc = 0; cc < c; ++cc) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += w[(((int64_t)oc * c + cc) * kh + ky) * kw + kx] *
                     x[((int64_t)cc * h + iy) * wd + ix];
            }
          }
        }
        if (bias) acc += bias[oc];
        y[((int64_t)oc * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void softmax_rows(const float* x, float* y, int64_t rows, int cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float* yr = y + r * cols;
    const float mx = row_max(xr, cols);
    for (int j = 0; j < cols; ++j) yr[j] = fast_exp(xr[j] - mx);
    const double sum = row_sum(yr, cols);
    const float inv = (float)(1.0 / sum);
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

}  // namespace ref

}  // namespace mat::kern
