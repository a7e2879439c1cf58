#include "rediffuse/eq_ops.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

#include "rediffuse/group_action.hpp"
#include "rediffuse/kernels.hpp"

namespace rediffuse {

namespace {

// Solve G * X = B in place for small symmetric positive-definite G (t x t),
// B (t x n), via Gaussian elimination with partial pivoting.
void solve_small(std::vector<double> G, std::vector<double>& B, int t, int n) {
  for (int col = 0; col < t; ++col) {
    int piv = col;
    for (int r = col + 1; r < t; ++r)
      if (std::abs(G[r * t + col]) > std::abs(G[piv * t + col])) piv = r;
    if (G[piv * t + col] == 0.0) throw std::runtime_error("singular tap-basis Gram matrix");
    if (piv != col) {
      for (int c = 0; c < t; ++c) std::swap(G[col * t + c], G[piv * t + c]);
      for (int c = 0; c < n; ++c) std::swap(B[col * n + c], B[piv * n + c]);
    }
    const double d = G[col * t + col];
    for (int r = col + 1; r < t; ++r) {
      const double f = G[r * t + col] / d;
      if (f == 0.0) continue;
      for (int c = col; c < t; ++c) G[r * t + c] -= f * G[col * t + c];
      for (int c = 0; c < n; ++c) B[r * n + c] -= f * B[col * n + c];
    }
  }
  for (int col = t - 1; col >= 0; --col) {
    const double d = G[col * t + col];
    for (int c = 0; c < n; ++c) {
      double v = B[col * n + c];
      for (int k = col + 1; k < t; ++k) v -= G[col * t + k] * B[k * n + c];
      B[col * n + c] = v / d;
    }
  }
}

// Basis evaluation at a Cartesian point: Gaussian rings at integer radii
// {0..rmax} (sigma = 0.6 tap units) times cos/sin harmonics up to fmax.
// The centre ring carries only the constant harmonic.
void eval_basis(double x, double y, int rmax, int fmax, double* out) {
  const double sigma = 0.6;
  const double r = std::hypot(x, y);
  const double phi = (r > 1e-12) ? std::atan2(y, x) : 0.0;
  int b = 0;
  for (int ring = 0; ring <= rmax; ++ring) {
    const double g = std::exp(-(r - ring) * (r - ring) / (2.0 * sigma * sigma));
    if (ring == 0) {
      out[b++] = g;
      continue;
    }
    for (int f = 0; f <= fmax; ++f) {
      out[b++] = g * std::cos(f * phi);
      if (f > 0) out[b++] = g * std::sin(f * phi);
    }
  }
}

int basis_size(int rmax, int fmax) { return 1 + rmax * (1 + 2 * fmax); }

// Quarter-turn permutation of the p x p tap grid, q times counterclockwise:
// out[dst] = in[perm[dst]].
std::vector<int> quarter_perm(int p, int q) {
  std::vector<int> perm(p * p);
  for (int i = 0; i < p * p; ++i) perm[i] = i;
  for (int step = 0; step < q; ++step) {
    std::vector<int> next(p * p);
    for (int u = 0; u < p; ++u)
      for (int v = 0; v < p; ++v) next[u * p + v] = perm[v * p + (p - 1 - u)];
    perm = std::move(next);
  }
  return perm;
}

std::unique_ptr<KernelRealization> build_realization(int m, int p) {
  if (m < 1) throw std::invalid_argument("group order must be >= 1");
  if (p < 1 || p % 2 == 0) throw std::invalid_argument("tap grids must be odd-sized");
  auto R = std::make_unique<KernelRealization>();
  R->m = m;
  R->p = p;
  R->perm.resize(m);
  R->S.resize(m);
  R->aligned.resize(m, false);
  RotationGroup grp(m);
  bool all_aligned = true;
  for (int j = 0; j < m; ++j) {
    if (grp.grid_aligned(j)) {
      R->aligned[j] = true;
      R->perm[j] = quarter_perm(p, grp.quarter_turns(j));
    } else {
      all_aligned = false;
    }
  }
  R->exact = all_aligned;
  if (all_aligned) return R;

  const int t = p * p;
  const int rmax = (p - 1) / 2;
  const int fmax = m / 2;
  const int nb = basis_size(rmax, fmax);
  const double ctr = (p - 1) / 2.0;

  // B0[tap][b]: basis sampled on the unrotated grid.
  std::vector<double> B0(static_cast<size_t>(t) * nb);
  for (int u = 0; u < p; ++u)
    for (int v = 0; v < p; ++v)
      eval_basis(v - ctr, ctr - u, rmax, fmax, &B0[(u * p + v) * static_cast<size_t>(nb)]);

  // Gram = B0 * B0^T with a tiny ridge; P = B0^T * Gram^{-1} maps taps to
  // minimum-norm basis coefficients.
  std::vector<double> G(static_cast<size_t>(t) * t, 0.0);
  double tr = 0.0;
  for (int a = 0; a < t; ++a)
    for (int b = 0; b < t; ++b) {
      double s = 0.0;
      for (int k = 0; k < nb; ++k) s += B0[a * nb + k] * B0[b * nb + k];
      G[a * t + b] = s;
      if (a == b) tr += s;
    }
  const double ridge = 1e-12 * tr / t;
  for (int a = 0; a < t; ++a) G[a * t + a] += ridge;

  // Solve G * X = B0 (t x nb), giving X = Gram^{-1} B0; then P = X^T.
  std::vector<double> X = B0;
  solve_small(G, X, t, nb);

  for (int j = 0; j < m; ++j) {
    if (R->aligned[j]) continue;
    // Bj[tap][b]: basis sampled on the grid rotated backwards by theta_j, so
    // realized taps sample the fitted filter rotated forwards.
    const double c = grp.cos_k[j], s = grp.sin_k[j];
    std::vector<double> Bj(static_cast<size_t>(t) * nb);
    for (int u = 0; u < p; ++u)
      for (int v = 0; v < p; ++v) {
        const double x = v - ctr, y = ctr - u;
        eval_basis(x * c + y * s, -x * s + y * c, rmax, fmax,
                   &Bj[(u * p + v) * static_cast<size_t>(nb)]);
      }
    auto& Sj = R->S[j];
    Sj.assign(static_cast<size_t>(t) * t, 0.0);
    for (int dst = 0; dst < t; ++dst)
      for (int src = 0; src < t; ++src) {
        double acc = 0.0;
        for (int k = 0; k < nb; ++k) acc += Bj[dst * nb + k] * X[src * nb + k];
        Sj[dst * static_cast<size_t>(t) + src] = acc;
      }
  }
  return R;
}

}  // namespace

const KernelRealization& KernelRealization::get(int m, int p) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<KernelRealization>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{m, p}];
  if (!slot) slot = build_realization(m, p);
  return *slot;
}

template <typename T>
void KernelRealization::apply(int j, const T* base, T* out) const {
  const int t = p * p;
  if (aligned[j]) {
    const auto& pm = perm[j];
    for (int dst = 0; dst < t; ++dst) out[dst] = base[pm[dst]];
    return;
  }
  const auto& Sj = S[j];
  for (int dst = 0; dst < t; ++dst) {
    double acc = 0.0;
    for (int src = 0; src < t; ++src) acc += Sj[dst * static_cast<size_t>(t) + src] * base[src];
    out[dst] = static_cast<T>(acc);
  }
}

template <typename T>
void KernelRealization::apply_transpose_add(int j, const T* out_grad, T* base_grad) const {
  const int t = p * p;
  if (aligned[j]) {
    const auto& pm = perm[j];
    for (int dst = 0; dst < t; ++dst) base_grad[pm[dst]] += out_grad[dst];
    return;
  }
  const auto& Sj = S[j];
  for (int src = 0; src < t; ++src) {
    double acc = 0.0;
    for (int dst = 0; dst < t; ++dst) acc += Sj[dst * static_cast<size_t>(t) + src] * out_grad[dst];
    base_grad[src] += static_cast<T>(acc);
  }
}

template void KernelRealization::apply<float>(int, const float*, float*) const;
template void KernelRealization::apply<double>(int, const double*, double*) const;
template void KernelRealization::apply_transpose_add<float>(int, const float*, float*) const;
template void KernelRealization::apply_transpose_add<double>(int, const double*, double*) const;

namespace {

template <typename T>
std::vector<T>& scratch(int which) {
  static thread_local std::vector<T> bufs[4];
  return bufs[which];
}

template <typename T>
void check_conv_args(const EqConvDesc& d, const Tensor<T>& in, const Tensor<T>& base) {
  const auto want = d.param_shape();
  if (base.dims != want)
    throw std::invalid_argument("conv weights have shape " + base.shape_str() + ", expected (" +
                                std::to_string(want[0]) + "," + std::to_string(want[1]) + "," +
                                std::to_string(want[2]) + "," + std::to_string(want[3]) + ")");
  if (d.kind == ConvKind::Lift) {
    if (in.ndim != 3 || in.dims[2] != d.in_c)
      throw std::invalid_argument("lifting conv expects a (H,W," + std::to_string(d.in_c) +
                                  ") image, got " + in.shape_str());
  } else {
    if (in.ndim != 4 || in.dims[2] != d.m || in.dims[3] != d.in_c)
      throw std::invalid_argument("group conv expects a (H,W," + std::to_string(d.m) + "," +
                                  std::to_string(d.in_c) + ") field, got " + in.shape_str());
  }
}

}  // namespace

template <typename T>
void pack_conv_weights(const EqConvDesc& d, const Tensor<T>& base, std::vector<T>& wpack) {
  const auto& R = KernelRealization::get(d.m, d.p);
  const int t = d.p * d.p;
  const int gk = d.group_axes();      // group axes of the weight tensor
  const int cin_flat = gk * d.in_c;   // im2col channel count
  const int N = d.m * d.out_c;
  wpack.assign(static_cast<size_t>(t) * cin_flat * N, T(0));
  std::vector<T> realized(t);
  for (int go = 0; go < d.m; ++go)
    for (int o = 0; o < d.out_c; ++o)
      for (int gi = 0; gi < gk; ++gi)
        for (int ci = 0; ci < d.in_c; ++ci) {
          // Group kernels also shift the group axis: output copy go reads
          // base slice (gi - go) mod m for input group index gi.
          const int gsrc = (d.kind == ConvKind::Group) ? (gi - go + d.m) % d.m : 0;
          R.apply(go, &base(o, ci, gsrc, 0), realized.data());
          const int n = go * d.out_c + o;
          for (int tap = 0; tap < t; ++tap)
            wpack[(static_cast<size_t>(tap) * gk + gi) * d.in_c * N +
                  static_cast<size_t>(ci) * N + n] = realized[tap];
        }
}

template <typename T>
Tensor<T> eq_conv_fwd(const EqConvDesc& d, const Tensor<T>& in, const Tensor<T>& base) {
  check_conv_args(d, in, base);
  const int H = in.dims[0], W = in.dims[1];
  const int cin_flat = d.group_axes() * d.in_c;
  const int N = d.m * d.out_c;
  const int K = d.p * d.p * cin_flat;

  auto& wpack = scratch<T>(0);
  pack_conv_weights(d, base, wpack);

  Tensor<T> out;
  out.resize({H, W, d.m, d.out_c});
  if (d.p == 1) {
    kernels::gemm_nn(in.data.data(), wpack.data(), out.data.data(), H * W, N, cin_flat);
    return out;
  }
  auto& cols = scratch<T>(1);
  cols.resize(static_cast<size_t>(H) * W * K);
  kernels::im2col(in.data.data(), H, W, cin_flat, d.p, cols.data());
  kernels::gemm_nn(cols.data(), wpack.data(), out.data.data(), H * W, N, K);
  return out;
}

template <typename T>
void eq_conv_bwd(const EqConvDesc& d, const Tensor<T>& in, const Tensor<T>& base,
                 const Tensor<T>& gout, Tensor<T>* gin, Tensor<T>* grad_base) {
  check_conv_args(d, in, base);
  const int H = in.dims[0], W = in.dims[1];
  if (gout.dims[0] != H || gout.dims[1] != W || gout.dims[2] != d.m || gout.dims[3] != d.out_c)
    throw std::invalid_argument("conv output gradient has shape " + gout.shape_str());
  const int t = d.p * d.p;
  const int gk = d.group_axes();
  const int cin_flat = gk * d.in_c;
  const int N = d.m * d.out_c;
  const int K = t * cin_flat;
  const auto& R = KernelRealization::get(d.m, d.p);

  if (gin) {
    gin->resize(in.ndim == 3 ? std::initializer_list<int>{H, W, cin_flat}
                             : std::initializer_list<int>{H, W, d.m, d.in_c});
    auto& wpack = scratch<T>(0);
    pack_conv_weights(d, base, wpack);
    // Gradient w.r.t. the input is the correlation of gout with the sp-
    // atially flipped, channel-transposed weights.
    auto& wback = scratch<T>(2);
    wback.resize(static_cast<size_t>(t) * N * cin_flat);
    for (int u = 0; u < d.p; ++u)
      for (int v = 0; v < d.p; ++v) {
        const int tap = u * d.p + v;
        const int ftap = (d.p - 1 - u) * d.p + (d.p - 1 - v);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < cin_flat; ++c)
            wback[(static_cast<size_t>(tap) * N + n) * cin_flat + c] =
                wpack[(static_cast<size_t>(ftap) * cin_flat + c) * N + n];
      }
    if (d.p == 1) {
      kernels::gemm_nn(gout.data.data(), wback.data(), gin->data.data(), H * W, cin_flat, N);
    } else {
      auto& cols = scratch<T>(1);
      cols.resize(static_cast<size_t>(H) * W * t * N);
      kernels::im2col(gout.data.data(), H, W, N, d.p, cols.data());
      kernels::gemm_nn(cols.data(), wback.data(), gin->data.data(), H * W, cin_flat, t * N);
    }
  }

  if (grad_base) {
    if (grad_base->dims != d.param_shape()) {
      grad_base->resize({d.out_c, d.in_c, gk, t});
      std::fill(grad_base->data.begin(), grad_base->data.end(), T(0));
    }
    auto& wgrad = scratch<T>(3);
    wgrad.resize(static_cast<size_t>(K) * N);
    if (d.p == 1) {
      kernels::gemm_tn(in.data.data(), gout.data.data(), wgrad.data(), H * W, cin_flat, N);
    } else {
      auto& cols = scratch<T>(1);
      cols.resize(static_cast<size_t>(H) * W * K);
      kernels::im2col(in.data.data(), H, W, cin_flat, d.p, cols.data());
      kernels::gemm_tn(cols.data(), gout.data.data(), wgrad.data(), H * W, K, N);
    }
    // Pull each realized copy's gradient back onto the shared base taps.
    std::vector<T> rg(t);
    for (int go = 0; go < d.m; ++go)
      for (int o = 0; o < d.out_c; ++o)
        for (int gi = 0; gi < gk; ++gi)
          for (int ci = 0; ci < d.in_c; ++ci) {
            const int gsrc = (d.kind == ConvKind::Group) ? (gi - go + d.m) % d.m : 0;
            const int n = go * d.out_c + o;
            for (int tap = 0; tap < t; ++tap)
              rg[tap] = wgrad[(static_cast<size_t>(tap) * gk + gi) * d.in_c * N +
                              static_cast<size_t>(ci) * N + n];
            R.apply_transpose_add(go, rg.data(), &(*grad_base)(o, ci, gsrc, 0));
          }
  }
}

template <typename T>
Tensor<T> eq_maxpool(const Tensor<T>& f, Tensor<int32_t>* argmax) {
  const int H = f.dims[0], W = f.dims[1];
  const int MC = f.dims[2] * f.dims[3];
  Tensor<T> out;
  Tensor<int32_t> arg;
  out.resize({H / 2, W / 2, f.dims[2], f.dims[3]});
  if (f.ndim == 3) out.ndim = 3;
  arg.resize({H / 2, W / 2, f.dims[2], f.dims[3]});
  kernels::maxpool_fwd(f.data.data(), H, W, MC, out.data.data(), arg.data.data());
  if (argmax) *argmax = std::move(arg);
  return out;
}

template <typename T>
Tensor<T> eq_upsample(const Tensor<T>& f) {
  const int H = f.dims[0], W = f.dims[1];
  const int MC = f.dims[2] * f.dims[3];
  Tensor<T> out;
  out.resize({2 * H, 2 * W, f.dims[2], f.dims[3]});
  if (f.ndim == 3) out.ndim = 3;
  kernels::upsample_fwd(f.data.data(), H, W, MC, out.data.data());
  return out;
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& f, int groups, T eps, const Tensor<T>& gamma,
                     const Tensor<T>& beta, GroupNormStats* stats) {
  const int H = f.dims[0], W = f.dims[1], M = f.ndim == 4 ? f.dims[2] : 1;
  const int C = f.ndim == 4 ? f.dims[3] : f.dims[2];
  Tensor<T> out = zeros_like(f);
  GroupNormStats local;
  local.mean.resize(groups);
  local.invstd.resize(groups);
  kernels::group_norm_fwd(f.data.data(), H, W, M, C, groups, eps, gamma.data.data(),
                          beta.data.data(), out.data.data(), local.mean.data(),
                          local.invstd.data());
  if (stats) *stats = std::move(local);
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = zeros_like(x);
  kernels::silu_fwd(x.data.data(), x.data.size(), out.data.data());
  return out;
}

template <typename T>
Tensor<T> group_mean(const Tensor<T>& f) {
  const int H = f.dims[0], W = f.dims[1], M = f.dims[2], C = f.dims[3];
  Tensor<T> out;
  out.resize({H, W, C});
  const T inv = T(1) / static_cast<T>(M);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int g = 0; g < M; ++g) acc += f(i, j, g, c);
        out(i, j, c) = static_cast<T>(acc) * inv;
      }
  return out;
}

#define REDIFFUSE_INSTANTIATE_EQ_OPS(T)                                                       \
  template void pack_conv_weights<T>(const EqConvDesc&, const Tensor<T>&, std::vector<T>&);   \
  template Tensor<T> eq_conv_fwd<T>(const EqConvDesc&, const Tensor<T>&, const Tensor<T>&);   \
  template void eq_conv_bwd<T>(const EqConvDesc&, const Tensor<T>&, const Tensor<T>&,         \
                               const Tensor<T>&, Tensor<T>*, Tensor<T>*);                     \
  template Tensor<T> eq_maxpool<T>(const Tensor<T>&, Tensor<int32_t>*);                       \
  template Tensor<T> eq_upsample<T>(const Tensor<T>&);                                        \
  template Tensor<T> group_norm<T>(const Tensor<T>&, int, T, const Tensor<T>&,                \
                                   const Tensor<T>&, GroupNormStats*);                        \
  template Tensor<T> silu<T>(const Tensor<T>&);                                               \
  template Tensor<T> group_mean<T>(const Tensor<T>&);

REDIFFUSE_INSTANTIATE_EQ_OPS(float)
REDIFFUSE_INSTANTIATE_EQ_OPS(double)

}  // namespace rediffuse
