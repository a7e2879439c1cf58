// Benchmarks the tiled/OpenMP kernels against the serial reference
// implementations on shapes taken from the desk-scale denoiser. Each row
// reports wall time per call, arithmetic throughput for the compute-bound
// kernels, and the fast/serial speedup.
//
// Usage: bench_kernels [seconds-per-measurement]   (default 0.25)
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "rediffuse/kernels.hpp"
#include "rediffuse/rng.hpp"

using namespace rediffuse;
using Clock = std::chrono::steady_clock;

namespace {

double target_s = 0.25;

std::vector<float> random_vec(size_t n, uint64_t seed) {
  std::vector<float> v(n);
  Rng rng(seed);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Repeats fn until ~target_s has elapsed; returns seconds per call.
double time_call(const std::function<void()>& fn) {
  fn();  // warm up scratch buffers and page in the data
  int reps = 1;
  for (;;) {
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
    if (dt >= target_s || reps > (1 << 24)) return dt / reps;
    reps = dt > 1e-4 ? static_cast<int>(reps * target_s / dt) + 1 : reps * 16;
  }
}

void row(const std::string& kernel, const std::string& shape, double fast_s, double serial_s,
         double flops) {
  std::printf("%-14s %-26s %10.3f %10.3f", kernel.c_str(), shape.c_str(), fast_s * 1e6,
              serial_s * 1e6);
  if (flops > 0)
    std::printf(" %9.2f %9.2f", flops / fast_s / 1e9, flops / serial_s / 1e9);
  else
    std::printf(" %9s %9s", "-", "-");
  std::printf(" %8.2fx\n", serial_s / fast_s);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) target_s = std::atof(argv[1]);

  std::printf("%-14s %-26s %10s %10s %9s %9s %9s\n", "kernel", "shape", "fast us", "serial us",
              "GF/s", "GF/s ser", "speedup");

  // matrix products at the three dominant convolution shapes (M = pixels,
  // N = unrolled output channels, K = taps x unrolled input channels)
  struct GemmShape {
    int M, N, K;
  };
  for (const GemmShape s : {GemmShape{1024, 256, 1152}, {256, 512, 2304}, {64, 512, 4608}}) {
    const auto A = random_vec(static_cast<size_t>(s.M) * s.K, 1);
    const auto B = random_vec(static_cast<size_t>(s.K) * s.N, 2);
    std::vector<float> C(static_cast<size_t>(s.M) * s.N);
    const double fast_s =
        time_call([&] { kernels::gemm_nn(A.data(), B.data(), C.data(), s.M, s.N, s.K); });
    const double ser_s = time_call(
        [&] { kernels::serial::gemm_nn(A.data(), B.data(), C.data(), s.M, s.N, s.K); });
    row("gemm_nn", std::to_string(s.M) + "x" + std::to_string(s.N) + "x" + std::to_string(s.K),
        fast_s, ser_s, 2.0 * s.M * s.N * s.K);
  }
  {
    const int R = 1024, M = 1152, N = 256;  // weight-gradient product
    const auto A = random_vec(static_cast<size_t>(R) * M, 3);
    const auto B = random_vec(static_cast<size_t>(R) * N, 4);
    std::vector<float> C(static_cast<size_t>(M) * N);
    const double fast_s =
        time_call([&] { kernels::gemm_tn(A.data(), B.data(), C.data(), R, M, N); });
    const double ser_s =
        time_call([&] { kernels::serial::gemm_tn(A.data(), B.data(), C.data(), R, M, N); });
    row("gemm_tn", "R=1024 1152x256", fast_s, ser_s, 2.0 * R * M * N);
  }

  // whole convolution: im2col + gemm against the direct 6-loop reference
  {
    const int H = 32, W = 32, C = 128, N = 256, p = 3;
    const auto in = random_vec(static_cast<size_t>(H) * W * C, 5);
    const auto wts = random_vec(static_cast<size_t>(p) * p * C * N, 6);
    std::vector<float> cols(static_cast<size_t>(H) * W * p * p * C);
    std::vector<float> out(static_cast<size_t>(H) * W * N);
    const double fast_s = time_call([&] {
      kernels::im2col(in.data(), H, W, C, p, cols.data());
      kernels::gemm_nn(cols.data(), wts.data(), out.data(), H * W, N, p * p * C);
    });
    const double ser_s = time_call(
        [&] { kernels::serial::conv2d_direct(in.data(), H, W, C, p, wts.data(), N, out.data()); });
    row("conv 3x3", "32x32 c128 -> c256", fast_s, ser_s,
        2.0 * H * W * N * p * p * C);
  }

  // field-shaped elementwise / reduction kernels (memory bound; no GF/s)
  const int H = 32, W = 32, M = 4, C = 32;
  const size_t n = static_cast<size_t>(H) * W * M * C;
  const auto field = random_vec(n, 7);
  {
    std::vector<float> out(n / 4);
    std::vector<int32_t> arg(n / 4);
    const double fast_s =
        time_call([&] { kernels::maxpool_fwd(field.data(), H, W, M * C, out.data(), arg.data()); });
    const double ser_s = time_call(
        [&] { kernels::serial::maxpool_fwd(field.data(), H, W, M * C, out.data(), arg.data()); });
    row("maxpool", "32x32x4x32", fast_s, ser_s, 0);
  }
  {
    std::vector<float> out(n * 4);
    const double fast_s =
        time_call([&] { kernels::upsample_fwd(field.data(), H, W, M * C, out.data()); });
    const double ser_s =
        time_call([&] { kernels::serial::upsample_fwd(field.data(), H, W, M * C, out.data()); });
    row("upsample", "32x32x4x32", fast_s, ser_s, 0);
  }
  {
    const int groups = 8;
    const auto gamma = random_vec(C, 8), beta = random_vec(C, 9);
    std::vector<float> out(n);
    std::vector<double> mean(groups), invstd(groups);
    const double fast_s = time_call([&] {
      kernels::group_norm_fwd(field.data(), H, W, M, C, groups, 1e-5f, gamma.data(), beta.data(),
                              out.data(), mean.data(), invstd.data());
    });
    const double ser_s = time_call([&] {
      kernels::serial::group_norm_fwd(field.data(), H, W, M, C, groups, 1e-5f, gamma.data(),
                                      beta.data(), out.data(), mean.data(), invstd.data());
    });
    row("group_norm", "32x32x4x32 g8", fast_s, ser_s, 0);
  }
  {
    std::vector<float> out(n);
    const double fast_s = time_call([&] { kernels::silu_fwd(field.data(), n, out.data()); });
    const double ser_s =
        time_call([&] { kernels::serial::silu_fwd(field.data(), n, out.data()); });
    row("silu", "131072 elems", fast_s, ser_s, 0);
  }
  return 0;
}
