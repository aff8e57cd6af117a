#pragma once

#include <cstdint>

namespace mat::kern {

// Dense float32 kernels used by the autograd primitives. All parallel loops
// split over independent output elements and keep a fixed accumulation order
// per element, so results are bit-identical for any thread count. The inner
// product of matmul/conv accumulates in float32; statistical reductions
// (softmax, layernorm, means) accumulate in float64.

int max_threads();
void set_max_threads(int n);  // n <= 0 restores the OpenMP default

// C[M,N] = A[M,K] @ B[K,N]; accumulate=true adds into C instead.
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// out[N,M] = in[M,N]^T
void transpose2d(const float* in, float* out, int m, int n);

// x:(C,H,W) w:(O,C,kh,kw) bias:(O, may be null) -> y:(O,OH,OW)
void conv2d(const float* x, const float* w, const float* bias, float* y,
            int c, int h, int wd, int o, int kh, int kw, int stride, int pad);
// gradient w.r.t. conv input/weights/bias; any of dx/dw/dbias may be null
void conv2d_backward(const float* x, const float* w, const float* dy,
                     float* dx, float* dw, float* dbias,
                     int c, int h, int wd, int o, int kh, int kw, int stride, int pad);

// row-wise softmax over the last axis; x,y:(rows, cols)
void softmax_rows(const float* x, float* y, int64_t rows, int cols);

// elementwise helpers on length-n buffers
void vec_add(const float* a, const float* b, float* y, int64_t n);
void vec_sub(const float* a, const float* b, float* y, int64_t n);
void vec_mul(const float* a, const float* b, float* y, int64_t n);
void vec_scale(const float* a, float s, float* y, int64_t n);
void vec_axpy(float alpha, const float* x, float* y, int64_t n);  // y += alpha*x

bool all_finite(const float* p, int64_t n);

namespace ref {
// Plain serial reference implementations, kept for parity tests and the
// kernel benchmark. gemm/conv use the same per-element accumulation order
// as the parallel kernels, so equality checks are exact.
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
void conv2d(const float* x, const float* w, const float* bias, float* y,
            int c, int h, int wd, int o, int kh, int kw, int stride, int pad);
void softmax_rows(const float* x, float* y, int64_t rows, int cols);
}  // namespace ref

}  // namespace mat::kern
