#include "rediffuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace rediffuse::kernels {

// ---------------------------------------------------------------------------
// packed GEMM with a register-tile micro-kernel
// ---------------------------------------------------------------------------

template <typename T>
struct TileCfg {
  static constexpr int MR = 4;
  static constexpr int NR = 32;
};
template <>
struct TileCfg<double> {
  static constexpr int MR = 4;
  static constexpr int NR = 16;
};

namespace {

template <typename T>
void pack_b_panel(const T* B, T* Bp, int K, int N, int n0, int nr) {
  constexpr int NR = TileCfg<T>::NR;
  for (int k = 0; k < K; ++k) {
    const T* src = B + static_cast<size_t>(k) * N + n0;
    T* dst = Bp + static_cast<size_t>(k) * NR;
    int j = 0;
    for (; j < nr; ++j) dst[j] = src[j];
    for (; j < NR; ++j) dst[j] = T(0);
  }
}

// C tile (mr x nr) = A (mr rows, lda stride) * packed B panel; K accumulated
// sequentially so the summation order never depends on tiling or threads.
template <typename T>
void micro_kernel(const T* A, int lda, const T* Bp, T* C, int ldc, int K, int mr, int nr) {
  constexpr int MR = TileCfg<T>::MR;
  constexpr int NR = TileCfg<T>::NR;
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = T(0);
  for (int k = 0; k < K; ++k) {
    const T* b = Bp + static_cast<size_t>(k) * NR;
    for (int i = 0; i < mr; ++i) {
      T a = A[static_cast<size_t>(i) * lda + k];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[i][j] += a * b[j];
    }
  }
  for (int i = 0; i < mr; ++i)
    for (int j = 0; j < nr; ++j) C[static_cast<size_t>(i) * ldc + j] = acc[i][j];
}

template <typename T>
std::vector<T>& scratch_buffer(int which) {
  static thread_local std::vector<T> buf[3];
  return buf[which];
}

}  // namespace

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int M, int N, int K) {
  constexpr int MR = TileCfg<T>::MR;
  constexpr int NR = TileCfg<T>::NR;
  std::vector<T>& Bp = scratch_buffer<T>(0);
  Bp.resize(static_cast<size_t>(K) * NR);
  for (int n0 = 0; n0 < N; n0 += NR) {
    int nr = std::min(NR, N - n0);
    pack_b_panel(B, Bp.data(), K, N, n0, nr);
    const T* bp = Bp.data();
#pragma omp parallel for schedule(static)
    for (int m0 = 0; m0 < M; m0 += MR) {
      int mr = std::min(MR, M - m0);
      micro_kernel(A + static_cast<size_t>(m0) * K, K, bp,
                   C + static_cast<size_t>(m0) * N + n0, N, K, mr, nr);
    }
  }
}

template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int R, int M, int N) {
  constexpr int MR = TileCfg<T>::MR;
  constexpr int NR = TileCfg<T>::NR;
  std::vector<T>& Bp = scratch_buffer<T>(0);
  Bp.resize(static_cast<size_t>(R) * NR);
  for (int n0 = 0; n0 < N; n0 += NR) {
    int nr = std::min(NR, N - n0);
    pack_b_panel(B, Bp.data(), R, N, n0, nr);
    const T* bp = Bp.data();
#pragma omp parallel for schedule(static)
    for (int m0 = 0; m0 < M; m0 += MR) {
      int mr = std::min(MR, M - m0);
      // transpose-pack the mr columns of A touched by this tile
      std::vector<T>& Ap = scratch_buffer<T>(1);
      Ap.resize(static_cast<size_t>(mr) * R);
      for (int r = 0; r < R; ++r)
        for (int i = 0; i < mr; ++i)
          Ap[static_cast<size_t>(i) * R + r] = A[static_cast<size_t>(r) * M + m0 + i];
      micro_kernel(Ap.data(), R, bp, C + static_cast<size_t>(m0) * N + n0, N, R, mr, nr);
    }
  }
}

// ---------------------------------------------------------------------------
// im2col
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* in, int H, int W, int C, int p, T* out) {
  const int pad = p / 2;
  const size_t K = static_cast<size_t>(p) * p * C;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      T* row = out + (static_cast<size_t>(i) * W + j) * K;
      for (int u = 0; u < p; ++u) {
        int si = i + u - pad;
        for (int v = 0; v < p; ++v) {
          int sj = j + v - pad;
          T* dst = row + (static_cast<size_t>(u) * p + v) * C;
          if (si < 0 || si >= H || sj < 0 || sj >= W) {
            for (int c = 0; c < C; ++c) dst[c] = T(0);
          } else {
            const T* src = in + (static_cast<size_t>(si) * W + sj) * C;
            std::memcpy(dst, src, sizeof(T) * C);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// max pooling
// ---------------------------------------------------------------------------

template <typename T>
void maxpool_fwd(const T* in, int H, int W, int MC, T* out, int32_t* argmax) {
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool: spatial dims must be even");
  const int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j)
      for (int c = 0; c < MC; ++c) {
        // row-major window scan; strict > keeps the first maximum on ties
        size_t base = (static_cast<size_t>(2 * i) * W + 2 * j) * MC + c;
        size_t idx[4] = {base, base + MC, base + static_cast<size_t>(W) * MC,
                         base + static_cast<size_t>(W) * MC + MC};
        T best = in[idx[0]];
        int bi = 0;
        for (int t = 1; t < 4; ++t)
          if (in[idx[t]] > best) {
            best = in[idx[t]];
            bi = t;
          }
        size_t o = (static_cast<size_t>(i) * Wo + j) * MC + c;
        out[o] = best;
        argmax[o] = static_cast<int32_t>(idx[bi]);
      }
}

template <typename T>
void maxpool_bwd(const T* gout, const int32_t* argmax, int H, int W, int MC, T* gin) {
  const int Ho = H / 2, Wo = W / 2;
  std::fill(gin, gin + static_cast<size_t>(H) * W * MC, T(0));
  // pooling windows are disjoint, so writes never collide
#pragma omp parallel for schedule(static)
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j)
      for (int c = 0; c < MC; ++c) {
        size_t o = (static_cast<size_t>(i) * Wo + j) * MC + c;
        gin[argmax[o]] += gout[o];
      }
}

// ---------------------------------------------------------------------------
// bilinear 2x upsampling (separable, half-pixel centres, clamped borders)
// ---------------------------------------------------------------------------

namespace {

struct UpTap {
  int ia, ib;
  double wa, wb;
};

std::vector<UpTap> up_taps(int n) {
  std::vector<UpTap> taps(2 * n);
  for (int r = 0; r < 2 * n; ++r) {
    double src = 0.5 * r - 0.25;
    int i0 = static_cast<int>(std::floor(src));
    double f = src - i0;
    UpTap t;
    t.ia = std::clamp(i0, 0, n - 1);
    t.ib = std::clamp(i0 + 1, 0, n - 1);
    t.wa = 1.0 - f;
    t.wb = f;
    taps[r] = t;
  }
  return taps;
}

}  // namespace

template <typename T>
void upsample_fwd(const T* in, int H, int W, int MC, T* out) {
  auto rt = up_taps(H), ct = up_taps(W);
  const int Ho = 2 * H, Wo = 2 * W;
  std::vector<T>& tmp = scratch_buffer<T>(2);
  tmp.resize(static_cast<size_t>(Ho) * W * MC);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < Ho; ++r) {
    const T* a = in + static_cast<size_t>(rt[r].ia) * W * MC;
    const T* b = in + static_cast<size_t>(rt[r].ib) * W * MC;
    T* dst = tmp.data() + static_cast<size_t>(r) * W * MC;
    T wa = static_cast<T>(rt[r].wa), wb = static_cast<T>(rt[r].wb);
    for (size_t x = 0; x < static_cast<size_t>(W) * MC; ++x) dst[x] = wa * a[x] + wb * b[x];
  }
#pragma omp parallel for schedule(static)
  for (int r = 0; r < Ho; ++r)
    for (int s = 0; s < Wo; ++s) {
      const T* row = tmp.data() + static_cast<size_t>(r) * W * MC;
      T wa = static_cast<T>(ct[s].wa), wb = static_cast<T>(ct[s].wb);
      const T* a = row + static_cast<size_t>(ct[s].ia) * MC;
      const T* b = row + static_cast<size_t>(ct[s].ib) * MC;
      T* dst = out + (static_cast<size_t>(r) * Wo + s) * MC;
      for (int c = 0; c < MC; ++c) dst[c] = wa * a[c] + wb * b[c];
    }
}

template <typename T>
void upsample_bwd(const T* gout, int H, int W, int MC, T* gin) {
  auto rt = up_taps(H), ct = up_taps(W);
  const int Ho = 2 * H, Wo = 2 * W;
  // inverse adjacency per input index, contributors in increasing output order
  std::vector<std::vector<std::pair<int, double>>> radj(H), cadj(W);
  for (int r = 0; r < Ho; ++r) {
    radj[rt[r].ia].push_back({r, rt[r].wa});
    radj[rt[r].ib].push_back({r, rt[r].wb});
  }
  for (int s = 0; s < Wo; ++s) {
    cadj[ct[s].ia].push_back({s, ct[s].wa});
    cadj[ct[s].ib].push_back({s, ct[s].wb});
  }
  // first collapse columns: tmp (Ho, W, MC)
  std::vector<T>& tmp = scratch_buffer<T>(2);
  tmp.assign(static_cast<size_t>(Ho) * W * MC, T(0));
#pragma omp parallel for schedule(static)
  for (int r = 0; r < Ho; ++r)
    for (int j = 0; j < W; ++j) {
      T* dst = tmp.data() + (static_cast<size_t>(r) * W + j) * MC;
      for (auto [s, w] : cadj[j]) {
        const T* src = gout + (static_cast<size_t>(r) * Wo + s) * MC;
        T wt = static_cast<T>(w);
        for (int c = 0; c < MC; ++c) dst[c] += wt * src[c];
      }
    }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      T* dst = gin + (static_cast<size_t>(i) * W + j) * MC;
      for (int c = 0; c < MC; ++c) dst[c] = T(0);
      for (auto [r, w] : radj[i]) {
        const T* src = tmp.data() + (static_cast<size_t>(r) * W + j) * MC;
        T wt = static_cast<T>(w);
        for (int c = 0; c < MC; ++c) dst[c] += wt * src[c];
      }
    }
}

// ---------------------------------------------------------------------------
// group normalization
// ---------------------------------------------------------------------------

template <typename T>
void group_norm_fwd(const T* in, int H, int W, int M, int C, int groups, T eps,
                    const T* gamma, const T* beta, T* out, double* mean, double* invstd) {
  if (C % groups) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const int cg = C / groups;
  const size_t plane = static_cast<size_t>(H) * W * M;
  const double n = static_cast<double>(plane) * cg;
#pragma omp parallel for schedule(static)
  for (int g = 0; g < groups; ++g) {
    double s = 0, s2 = 0;
    for (size_t x = 0; x < plane; ++x) {
      const T* px = in + x * C + static_cast<size_t>(g) * cg;
      for (int c = 0; c < cg; ++c) {
        double v = static_cast<double>(px[c]);
        s += v;
        s2 += v * v;
      }
    }
    double mu = s / n;
    double var = std::max(0.0, s2 / n - mu * mu);
    double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    mean[g] = mu;
    invstd[g] = inv;
    for (size_t x = 0; x < plane; ++x) {
      const T* px = in + x * C + static_cast<size_t>(g) * cg;
      T* po = out + x * C + static_cast<size_t>(g) * cg;
      for (int c = 0; c < cg; ++c) {
        double xhat = (static_cast<double>(px[c]) - mu) * inv;
        int ch = g * cg + c;
        po[c] = static_cast<T>(xhat * static_cast<double>(gamma[ch]) +
                               static_cast<double>(beta[ch]));
      }
    }
  }
}

template <typename T>
void group_norm_bwd(const T* in, const T* gout, int H, int W, int M, int C, int groups,
                    const T* gamma, const double* mean, const double* invstd, T* gin,
                    T* ggamma, T* gbeta) {
  const int cg = C / groups;
  const size_t plane = static_cast<size_t>(H) * W * M;
  const double n = static_cast<double>(plane) * cg;
#pragma omp parallel for schedule(static)
  for (int g = 0; g < groups; ++g) {
    double mu = mean[g], inv = invstd[g];
    // per-channel param grads plus the two reduction terms of the input grad
    std::vector<double> dgam(cg, 0.0), dbet(cg, 0.0);
    double s1 = 0, s2 = 0;  // sum(dy*gamma), sum(dy*gamma*xhat)
    for (size_t x = 0; x < plane; ++x) {
      const T* px = in + x * C + static_cast<size_t>(g) * cg;
      const T* py = gout + x * C + static_cast<size_t>(g) * cg;
      for (int c = 0; c < cg; ++c) {
        double xhat = (static_cast<double>(px[c]) - mu) * inv;
        double dy = static_cast<double>(py[c]);
        double dg = dy * static_cast<double>(gamma[g * cg + c]);
        dgam[c] += dy * xhat;
        dbet[c] += dy;
        s1 += dg;
        s2 += dg * xhat;
      }
    }
    for (int c = 0; c < cg; ++c) {
      ggamma[g * cg + c] = static_cast<T>(dgam[c]);
      gbeta[g * cg + c] = static_cast<T>(dbet[c]);
    }
    for (size_t x = 0; x < plane; ++x) {
      const T* px = in + x * C + static_cast<size_t>(g) * cg;
      const T* py = gout + x * C + static_cast<size_t>(g) * cg;
      T* pg = gin + x * C + static_cast<size_t>(g) * cg;
      for (int c = 0; c < cg; ++c) {
        double xhat = (static_cast<double>(px[c]) - mu) * inv;
        double dg = static_cast<double>(py[c]) * static_cast<double>(gamma[g * cg + c]);
        pg[c] = static_cast<T>(inv * (dg - s1 / n - xhat * s2 / n));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// SiLU
// ---------------------------------------------------------------------------

template <typename T>
void silu_fwd(const T* in, size_t n, T* out) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double x = static_cast<double>(in[i]);
    out[i] = static_cast<T>(x / (1.0 + std::exp(-x)));
  }
}

template <typename T>
void silu_bwd(const T* in, const T* gout, size_t n, T* gin) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double x = static_cast<double>(in[i]);
    double s = 1.0 / (1.0 + std::exp(-x));
    gin[i] = static_cast<T>(static_cast<double>(gout[i]) * (s * (1.0 + x * (1.0 - s))));
  }
}

// ---------------------------------------------------------------------------
// instantiations
// ---------------------------------------------------------------------------

#define REDIFFUSE_INSTANTIATE_KERNELS(T)                                                        \
  template void gemm_nn<T>(const T*, const T*, T*, int, int, int);                              \
  template void gemm_tn<T>(const T*, const T*, T*, int, int, int);                              \
  template void im2col<T>(const T*, int, int, int, int, T*);                                    \
  template void maxpool_fwd<T>(const T*, int, int, int, T*, int32_t*);                          \
  template void maxpool_bwd<T>(const T*, const int32_t*, int, int, int, T*);                    \
  template void upsample_fwd<T>(const T*, int, int, int, T*);                                   \
  template void upsample_bwd<T>(const T*, int, int, int, T*);                                   \
  template void group_norm_fwd<T>(const T*, int, int, int, int, int, T, const T*, const T*,    \
                                  T*, double*, double*);                                        \
  template void group_norm_bwd<T>(const T*, const T*, int, int, int, int, int, const T*,       \
                                  const double*, const double*, T*, T*, T*);                    \
  template void silu_fwd<T>(const T*, size_t, T*);                                              \
  template void silu_bwd<T>(const T*, const T*, size_t, T*);

REDIFFUSE_INSTANTIATE_KERNELS(float)
REDIFFUSE_INSTANTIATE_KERNELS(double)

}  // namespace rediffuse::kernels
