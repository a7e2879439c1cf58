// Single-thread reference implementations. These stay deliberately naive so
// they can arbitrate the fast kernels in tests and in the benchmark.
#include <algorithm>
#include <cmath>

#include "rediffuse/kernels.hpp"

namespace rediffuse::kernels::serial {

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int M, int N, int K) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s = T(0);
      for (int k = 0; k < K; ++k)
        s += A[static_cast<size_t>(i) * K + k] * B[static_cast<size_t>(k) * N + j];
      C[static_cast<size_t>(i) * N + j] = s;
    }
}

template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int R, int M, int N) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      T s = T(0);
      for (int r = 0; r < R; ++r)
        s += A[static_cast<size_t>(r) * M + i] * B[static_cast<size_t>(r) * N + j];
      C[static_cast<size_t>(i) * N + j] = s;
    }
}

template <typename T>
void conv2d_direct(const T* in, int H, int W, int C, int p, const T* Wp, int N, T* out) {
  const int pad = p / 2;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int n = 0; n < N; ++n) {
        T s = T(0);
        for (int u = 0; u < p; ++u)
          for (int v = 0; v < p; ++v) {
            int si = i + u - pad, sj = j + v - pad;
            if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
            for (int c = 0; c < C; ++c)
              s += in[(static_cast<size_t>(si) * W + sj) * C + c] *
                   Wp[((static_cast<size_t>(u) * p + v) * C + c) * N + n];
          }
        out[(static_cast<size_t>(i) * W + j) * N + n] = s;
      }
}

template <typename T>
void maxpool_fwd(const T* in, int H, int W, int MC, T* out, int32_t* argmax) {
  const int Ho = H / 2, Wo = W / 2;
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j)
      for (int c = 0; c < MC; ++c) {
        T best{};
        int32_t bidx = -1;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            size_t idx = (static_cast<size_t>(2 * i + di) * W + 2 * j + dj) * MC + c;
            if (bidx < 0 || in[idx] > best) {
              best = in[idx];
              bidx = static_cast<int32_t>(idx);
            }
          }
        size_t o = (static_cast<size_t>(i) * Wo + j) * MC + c;
        out[o] = best;
        argmax[o] = bidx;
      }
}

template <typename T>
void upsample_fwd(const T* in, int H, int W, int MC, T* out) {
  auto tap = [](double src, int n, int& ia, int& ib, double& wa, double& wb) {
    int i0 = static_cast<int>(std::floor(src));
    double f = src - i0;
    ia = std::clamp(i0, 0, n - 1);
    ib = std::clamp(i0 + 1, 0, n - 1);
    wa = 1.0 - f;
    wb = f;
  };
  for (int r = 0; r < 2 * H; ++r)
    for (int s = 0; s < 2 * W; ++s) {
      int ia, ib, ja, jb;
      double wra, wrb, wca, wcb;
      tap(0.5 * r - 0.25, H, ia, ib, wra, wrb);
      tap(0.5 * s - 0.25, W, ja, jb, wca, wcb);
      for (int c = 0; c < MC; ++c) {
        double v = wra * (wca * static_cast<double>(in[(static_cast<size_t>(ia) * W + ja) * MC + c]) +
                          wcb * static_cast<double>(in[(static_cast<size_t>(ia) * W + jb) * MC + c])) +
                   wrb * (wca * static_cast<double>(in[(static_cast<size_t>(ib) * W + ja) * MC + c]) +
                          wcb * static_cast<double>(in[(static_cast<size_t>(ib) * W + jb) * MC + c]));
        out[(static_cast<size_t>(r) * 2 * W + s) * MC + c] = static_cast<T>(v);
      }
    }
}

template <typename T>
void group_norm_fwd(const T* in, int H, int W, int M, int C, int groups, T eps,
                    const T* gamma, const T* beta, T* out, double* mean, double* invstd) {
  const int cg = C / groups;
  const size_t plane = static_cast<size_t>(H) * W * M;
  const double n = static_cast<double>(plane) * cg;
  for (int g = 0; g < groups; ++g) {
    double s = 0, s2 = 0;
    for (size_t x = 0; x < plane; ++x)
      for (int c = 0; c < cg; ++c) {
        double v = static_cast<double>(in[x * C + g * cg + c]);
        s += v;
        s2 += v * v;
      }
    double mu = s / n;
    double var = std::max(0.0, s2 / n - mu * mu);
    double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    mean[g] = mu;
    invstd[g] = inv;
    for (size_t x = 0; x < plane; ++x)
      for (int c = 0; c < cg; ++c) {
        int ch = g * cg + c;
        double xhat = (static_cast<double>(in[x * C + ch]) - mu) * inv;
        out[x * C + ch] = static_cast<T>(xhat * static_cast<double>(gamma[ch]) +
                                         static_cast<double>(beta[ch]));
      }
  }
}

template <typename T>
void silu_fwd(const T* in, size_t n, T* out) {
  for (size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(in[i]);
    out[i] = static_cast<T>(x / (1.0 + std::exp(-x)));
  }
}

#define REDIFFUSE_INSTANTIATE_SERIAL(T)                                                    \
  template void gemm_nn<T>(const T*, const T*, T*, int, int, int);                         \
  template void gemm_tn<T>(const T*, const T*, T*, int, int, int);                         \
  template void conv2d_direct<T>(const T*, int, int, int, int, const T*, int, T*);         \
  template void maxpool_fwd<T>(const T*, int, int, int, T*, int32_t*);                     \
  template void upsample_fwd<T>(const T*, int, int, int, T*);                              \
  template void group_norm_fwd<T>(const T*, int, int, int, int, int, T, const T*,          \
                                  const T*, T*, double*, double*);                         \
  template void silu_fwd<T>(const T*, size_t, T*);

REDIFFUSE_INSTANTIATE_SERIAL(float)
REDIFFUSE_INSTANTIATE_SERIAL(double)

}  // namespace rediffuse::kernels::serial
