#pragma once

#include <vector>

#include "rediffuse/tensor.hpp"

namespace rediffuse {

// How one learnable tap grid is expanded into the m rotated copies used by a
// rotation-equivariant convolution:
//   - when every group angle is a quarter turn (m = 1, 2, 4) the rotations
//     are exact index permutations of the taps;
//   - otherwise taps are interpreted as samples of a continuous filter in a
//     radial-Gaussian x angular-Fourier basis (rings at radii {0..(p-1)/2}
//     of width one tap, angular frequencies {0..m/2}), and realization j
//     samples that filter on the grid rotated by 2*pi*j/m. Grid-aligned j
//     still reduce to exact permutations. Realization 0 is always the
//     identity, so realized[0] == base taps bit-exactly.
struct KernelRealization {
  int m = 1, p = 3;
  bool exact = true;                       // permutation-only path
  std::vector<std::vector<int>> perm;      // perm[j][dst_tap] = src_tap (aligned j)
  std::vector<std::vector<double>> S;      // S[j]: p^2 x p^2 row-major (other j)
  std::vector<bool> aligned;               // which j use perm

  static const KernelRealization& get(int m, int p);

  // out[dst] = sum_src map(j)[dst,src] * base[src]
  template <typename T>
  void apply(int j, const T* base, T* out) const;
  // base_grad[src] += sum_dst map(j)[dst,src] * out_grad[dst]
  template <typename T>
  void apply_transpose_add(int j, const T* out_grad, T* base_grad) const;
};

enum class ConvKind { Lift, Group };

// Static description of one equivariant convolution layer. Learnable taps
// live in an external tensor of shape (out_c, in_c, gk, p*p) where gk = 1
// for lifting kernels and gk = m for group kernels; this struct only holds
// the geometry.
struct EqConvDesc {
  ConvKind kind = ConvKind::Lift;
  int in_c = 1, out_c = 1, m = 4, p = 3;

  int group_axes() const { return kind == ConvKind::Lift ? 1 : m; }
  size_t param_count() const {
    return static_cast<size_t>(out_c) * in_c * group_axes() * p * p;
  }
  std::array<int, 4> param_shape() const { return {out_c, in_c, group_axes(), p * p}; }
};

// Expanded, GEMM-ready weight matrix: Wpack[k][n] with k = (u, v, g_in, c_in)
// and n = (g_out, c_out), both row-major in that order.
template <typename T>
void pack_conv_weights(const EqConvDesc& d, const Tensor<T>& base, std::vector<T>& wpack);

// Forward convolutions (stride 1, same zero padding).
// lift: (H, W, in_c) -> (H, W, m, out_c);  group: (H, W, m, in_c) -> (H, W, m, out_c)
template <typename T>
Tensor<T> eq_conv_fwd(const EqConvDesc& d, const Tensor<T>& in, const Tensor<T>& base);

// Backward pass. grad_base must have the parameter shape (zeroed or
// accumulated by the caller as needed; this writes '+=').
template <typename T>
void eq_conv_bwd(const EqConvDesc& d, const Tensor<T>& in, const Tensor<T>& base,
                 const Tensor<T>& gout, Tensor<T>* gin, Tensor<T>* grad_base);

// --- non-conv field ops -----------------------------------------------------

template <typename T>
Tensor<T> eq_maxpool(const Tensor<T>& f, Tensor<int32_t>* argmax = nullptr);

template <typename T>
Tensor<T> eq_upsample(const Tensor<T>& f);

struct GroupNormStats {
  std::vector<double> mean, invstd;
};

// gamma/beta are rank-1 tensors of length C (shared across the group axis).
template <typename T>
Tensor<T> group_norm(const Tensor<T>& f, int groups, T eps, const Tensor<T>& gamma,
                     const Tensor<T>& beta, GroupNormStats* stats = nullptr);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

// Mean over the group axis: (H, W, M, C) -> (H, W, C).
template <typename T>
Tensor<T> group_mean(const Tensor<T>& f);

}  // namespace rediffuse
