#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rediffuse/rng.hpp"
#include "rediffuse/tensor.hpp"

namespace rediffuse {

// --- certified smooth test fields -------------------------------------------
//
// The verification harness measures operators on discretizations of analytic
// fields whose gradient bound is known by construction:
//     e0(x) = sum_w a_w cos(2*pi * f_w . x + phi_w),  sum_w |a_w| = amplitude,
// with frequency components |f_w,i| <= bandlimit, so ||grad e0|| <=
// amplitude * 2*pi * bandlimit * sqrt(2) everywhere.
//
// Physical coordinates: sample i (of n, spacing d) sits at (i - (n-1)/2) * d,
// with u along columns and v along rows. Coarse (pooled) and fine (upsampled)
// grids reuse the same centered formula with their own (n, d).

struct WaveSum {
  std::vector<double> amp, fu, fv, phase;
  double eval(double u, double v) const;
  // Sample of the field rotated counterclockwise by theta: e0(R_theta^{-1} x).
  double eval_rotated(double theta, double u, double v) const;
};

struct SmoothFieldSpec {
  int size = 32;
  double extent = 1.0;     // physical side length; grid spacing = extent/size
  double bandlimit = 2.0;  // max |frequency component|
  double amplitude = 1.0;
  int waves = 4;
  int m = 4;       // group order of rendered lifted fields
  int channels = 1;

  // Radial support window: value 1 inside radius win_r0, cosine taper to 0
  // at win_r1, 0 beyond. Compact support makes every windowed statistic of
  // the field (means, variances over the square) rotation invariant in the
  // continuum, which global-normalization layers need for their defect to
  // vanish with the grid; it also keeps content away from the padding
  // boundary. The envelope is radial, so it commutes with every rotation.
  bool windowed = false;
  double win_r0 = 0.30;
  double win_r1 = 0.45;

  double delta() const { return extent / size; }
  double grad_bound() const;
};

struct SmoothField {
  SmoothFieldSpec spec;
  std::vector<WaveSum> channel_waves;

  // Lifted invariant field: slice g samples e0(R_g^{-1} x), so the exact
  // group action fixes the rendered tensor. Shape (n, n, m, channels).
  Tensor<double> render_field() const;
  // Planar image of the analytically rotated field, shape (n, n, channels).
  Tensor<double> render_image(double theta) const;
};

// Draws wave parameters; throws if bandlimit violates the Nyquist condition
// bandlimit * delta < 0.5.
SmoothField make_smooth_field(const SmoothFieldSpec& spec, uint64_t seed);

// --- equivariance measurement ------------------------------------------------

struct EquivarianceReport {
  std::string op;
  int m = 0;
  int k = -1;          // group index, -1 for arbitrary angles
  double angle = 0.0;  // radians
  double delta = 0.0;  // input grid spacing
  double measured = 0.0;
  double bound = 0.0;  // 0 = no analytic bound (trend-only measurements)
  bool pass = true;    // measured <= bound * (1 + 1e-6) whenever bound > 0
  int points = 0;      // interior sample count entering the max
};

// Max pooling against the piecewise-constant transport of its own output.
// Bound: 2*sqrt(2) * G * delta (delta = input spacing).
EquivarianceReport measure_maxpool(const SmoothField& f, int k);

// Bilinear upsampling against the piecewise-bilinear transport.
// Bound: 2*(sqrt(2)+1) * G * delta.
EquivarianceReport measure_upsample(const SmoothField& f, int k);

// Group normalization commutes exactly with the group action; measured via
// the exactly representable actions (group-axis shift k composed with the
// quarter-turn spatial rotations), on random fields. bound is the exactness
// tolerance 1e-6.
EquivarianceReport measure_group_norm(int m, int size, int channels, int groups, int k,
                                      uint64_t seed);

// Whole-image operator (e.g. the denoiser under fixed conditioning): compares
// op applied to analytically rotated renders against the bilinear transport
// of its unrotated output, over the interior disc of the given physical
// radius. Returns the max-abs interior error.
using ImageOp3 = std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&,
                                              const Tensor<double>&)>;
double measure_image_op(const SmoothField& cond, const ImageOp3& op, double theta,
                        double interior_radius);

// --- scaling fits -------------------------------------------------------------

struct ScalingFit {
  bool exact = false;  // all errors below the exactness floor
  double slope = 0.0;  // log-log least-squares slope otherwise
};

ScalingFit fit_loglog(const std::vector<double>& deltas, const std::vector<double>& errors,
                      double exact_floor = 1e-9);

// --- error maps ----------------------------------------------------------------

// Output of the operator under rotated inputs, the exactly transported
// unrotated output, and their |difference| (normalized copy held alongside
// the raw maximum). Quarter-turn group elements only: the transport is the
// exact index permutation.
template <typename T>
struct ErrorMapTriplet {
  Tensor<T> rotated_output;
  Tensor<T> transported_output;
  Tensor<T> abs_diff_normalized;
  double max_error = 0.0;
};

template <typename T>
using ImageOp3T = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&)>;

template <typename T>
ErrorMapTriplet<T> error_map(const ImageOp3T<T>& op, const Tensor<T>& img_a,
                             const Tensor<T>& img_b, const Tensor<T>& f_t, int m, int k);

}  // namespace rediffuse
