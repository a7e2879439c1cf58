#pragma once

#include <cstdint>
#include <vector>

#include "rediffuse/tensor.hpp"

namespace rediffuse::kernels {

// All kernels keep a fixed per-output-element accumulation order, so results
// are bit-identical for any thread count. Parallel loops split only over
// independent output tiles; reductions inside a tile run sequentially.

// C (MxN) = A (MxK) * B (KxN), row-major.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int M, int N, int K);

// C (MxN) = A^T * B with A (RxM), B (RxN); reduction over R.
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int R, int M, int N);

// Patch matrix for stride-1 same-padded correlation: row r = (i*W + j) holds
// the p*p*C patch around (i,j) in (u, v, c) order; out must hold H*W*p*p*C.
template <typename T>
void im2col(const T* in, int H, int W, int C, int p, T* out);

// 2x2 max pooling over the spatial axes of a (H, W, M, C) field (planar
// images pass M = 1). Ties resolve to the first maximum in row-major window
// order. argmax (same size as out) records the flat input index per output.
template <typename T>
void maxpool_fwd(const T* in, int H, int W, int MC, T* out, int32_t* argmax);
template <typename T>
void maxpool_bwd(const T* gout, const int32_t* argmax, int H, int W, int MC, T* gin);

// Bilinear 2x upsampling on half-pixel centres (output pixel r samples input
// coordinate r/2 - 1/4), border samples clamped so constants are reproduced.
template <typename T>
void upsample_fwd(const T* in, int H, int W, int MC, T* out);
template <typename T>
void upsample_bwd(const T* gout, int H, int W, int MC, T* gin);

// Group normalization over a (H, W, M, C) field: channels are split into
// `groups` contiguous groups; statistics pool over spatial x group-axis x
// channels-in-group. gamma/beta are per channel. Statistics accumulate in
// double in a fixed order. mean/invstd have one entry per channel group.
template <typename T>
void group_norm_fwd(const T* in, int H, int W, int M, int C, int groups, T eps,
                    const T* gamma, const T* beta, T* out, double* mean, double* invstd);
template <typename T>
void group_norm_bwd(const T* in, const T* gout, int H, int W, int M, int C, int groups,
                    const T* gamma, const double* mean, const double* invstd, T* gin,
                    T* ggamma, T* gbeta);

template <typename T>
void silu_fwd(const T* in, size_t n, T* out);
template <typename T>
void silu_bwd(const T* in, const T* gout, size_t n, T* gin);

// Straightforward single-thread reference implementations kept for testing
// the fast paths (and for the kernel benchmark).
namespace serial {

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int M, int N, int K);
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int R, int M, int N);

// Direct 6-loop correlation: in (H,W,C), weights W[(u*p+v)*C+c][n], out (H,W,N).
template <typename T>
void conv2d_direct(const T* in, int H, int W, int C, int p, const T* Wp, int N, T* out);

template <typename T>
void maxpool_fwd(const T* in, int H, int W, int MC, T* out, int32_t* argmax);
template <typename T>
void upsample_fwd(const T* in, int H, int W, int MC, T* out);
template <typename T>
void group_norm_fwd(const T* in, int H, int W, int M, int C, int groups, T eps,
                    const T* gamma, const T* beta, T* out, double* mean, double* invstd);
template <typename T>
void silu_fwd(const T* in, size_t n, T* out);

}  // namespace serial

}  // namespace rediffuse::kernels
