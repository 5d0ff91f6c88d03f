#pragma once

#include <cstdint>

namespace facetouch::kernels {

// All hot loops in the project go through this module. Each kernel is
// written as a grid of independent blocks; the active backend decides
// whether blocks run sequentially or under OpenMP. Every output element is
// produced by exactly one block with a fixed inner summation order, so the
// two backends are bit-identical and results do not depend on thread count.
//
// kernels::ref holds naive, obviously-correct serial implementations. They
// are the test oracle and the baseline of the bench_kernels target; the
// product never calls them.

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
int thread_count();

// C(M x N) = A(M x K) . B(K x N)
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n);

// C(M x N) = A(M x K) . B(N x K)^T   (rows of A dotted with rows of B)
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n);

// C(M x N) = A(K x M)^T . B(K x N)
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n);

// im2col for 3x3-style "same" padding, stride 1. x is (C,H,W); col is
// (C*kh*kw, H*W) row-major. Out-of-bounds taps contribute zero.
template <class T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, T* col);

// Transpose of im2col: accumulates col (C*kh*kw, H*W) back into x (C,H,W).
// Gather formulation: each input element sums its own taps.
template <class T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, T* x);

// 2x2 max pooling, stride 2. x is (N,H,W) planes with even H, W; y is
// (N,H/2,W/2). argmax records the flat source index per output (ties take
// the first element in row-major scan order).
template <class T>
void maxpool2_fwd(const T* x, int n, int h, int w, T* y, std::int32_t* argmax);

template <class T>
void maxpool2_bwd(const T* dy, const std::int32_t* argmax, std::int64_t n_out, T* dx);

template <class T>
void relu_fwd(const T* x, T* y, std::int64_t n);

// dx += dy * (x > 0)
template <class T>
void relu_bwd(const T* x, const T* dy, T* dx, std::int64_t n);

// y[i] += a * x[i]
template <class T>
void axpy(T a, const T* x, T* y, std::int64_t n);

// Per-channel bias over contiguous planes: y[(i*c+j)*plane + p] += b[j].
template <class T>
void add_bias_plane(T* y, const T* b, int n, int c, std::int64_t plane);

// Row-wise numerically stable softmax of x (R x C) into y.
template <class T>
void softmax_rows(const T* x, T* y, int r, int c);

// Row-wise L2 normalization; norms[i] = sqrt(sum x_i^2 + eps).
template <class T>
void l2norm_rows(const T* x, T* y, T* norms, int r, int c, T eps);

// Bilinear resample of planar (C,H,W) into (C,OH,OW); pixel centers at
// (i + 0.5) / extent, edges clamped.
template <class T>
void bilinear_resize(const T* src, int c, int h, int w, T* dst, int oh, int ow);

namespace ref {

template <class T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n);

template <class T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n);

// Direct convolution, "same" padding, stride 1: y (CO,H,W) from x (CI,H,W)
// and w (CO,CI,KH,KW). Independent of the im2col + gemm route.
template <class T>
void conv2d_direct(const T* x, const T* w, const T* bias, int ci, int h, int wdt,
                   int co, int kh, int kw, T* y);

template <class T>
void maxpool2_fwd(const T* x, int n, int h, int w, T* y, std::int32_t* argmax);

}  // namespace ref

}  // namespace facetouch::kernels
