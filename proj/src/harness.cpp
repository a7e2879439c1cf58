#include "rediffuse/harness.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

#include "rediffuse/eq_ops.hpp"
#include "rediffuse/group_action.hpp"

namespace rediffuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Physical coordinate of sample i on an n-point grid with spacing d, centred
// on the grid (u along columns, v along rows; v points down like the row
// axis, matching the rotation convention used by the image ops).
inline double coord(int i, int n, double d) { return (i - (n - 1) / 2.0) * d; }

// Inverse of coord(): fractional index of a physical position.
inline double index_of(double x, int n, double d) { return x / d + (n - 1) / 2.0; }

// Source position sampled by the rotated output at offset (u, v): the same
// mapping rotate_image_arbitrary uses, in physical units.
inline void rotated_source(double theta, double u, double v, double& su, double& sv) {
  const double ct = std::cos(theta), st = std::sin(theta);
  su = u * ct - v * st;
  sv = u * st + v * ct;
}

// Bilinear lookup on a (H, W, M, C) field at fractional (row, col).
inline double bilerp_field(const Tensor<double>& f, double row, double col, int g, int c) {
  const int H = f.dims[0], W = f.dims[1];
  int i0 = static_cast<int>(std::floor(row));
  int j0 = static_cast<int>(std::floor(col));
  i0 = std::min(std::max(i0, 0), H - 2);
  j0 = std::min(std::max(j0, 0), W - 2);
  const double fr = row - i0, fc = col - j0;
  return (1 - fr) * ((1 - fc) * f(i0, j0, g, c) + fc * f(i0, j0 + 1, g, c)) +
         fr * ((1 - fc) * f(i0 + 1, j0, g, c) + fc * f(i0 + 1, j0 + 1, g, c));
}

}  // namespace

// --- smooth fields -----------------------------------------------------------

double WaveSum::eval(double u, double v) const {
  double s = 0.0;
  for (size_t w = 0; w < amp.size(); ++w)
    s += amp[w] * std::cos(2.0 * kPi * (fu[w] * u + fv[w] * v) + phase[w]);
  return s;
}

double WaveSum::eval_rotated(double theta, double u, double v) const {
  double su, sv;
  rotated_source(theta, u, v, su, sv);
  return eval(su, sv);
}

double SmoothFieldSpec::grad_bound() const {
  const double wave_part = amplitude * 2.0 * kPi * bandlimit * std::sqrt(2.0);
  if (!windowed) return wave_part;
  // |grad(w * a)| <= max|w| * |grad a| + max|a| * max|w'|; the cosine taper
  // has max|w'| = pi / (2 (r1 - r0)) and max|w| = 1.
  return wave_part + amplitude * kPi / (2.0 * (win_r1 - win_r0));
}

// Radial support window of a windowed spec, evaluated at squared-radius
// arguments' point (u, v). 1 inside win_r0, smooth cosine taper, 0 past
// win_r1. Radial, so it commutes exactly with every rotation about 0.
static double envelope(const SmoothFieldSpec& spec, double u, double v) {
  if (!spec.windowed) return 1.0;
  const double r = std::sqrt(u * u + v * v);
  if (r <= spec.win_r0) return 1.0;
  if (r >= spec.win_r1) return 0.0;
  return 0.5 * (1.0 + std::cos(kPi * (r - spec.win_r0) / (spec.win_r1 - spec.win_r0)));
}

SmoothField make_smooth_field(const SmoothFieldSpec& spec, uint64_t seed) {
  if (spec.size < 2 || spec.m < 1 || spec.channels < 1 || spec.waves < 1)
    throw std::invalid_argument("smooth field: size, m, channels, waves must be positive");
  if (spec.extent <= 0.0 || spec.bandlimit <= 0.0 || spec.amplitude < 0.0)
    throw std::invalid_argument("smooth field: extent and bandlimit must be positive");
  if (spec.windowed &&
      !(0.0 < spec.win_r0 && spec.win_r0 < spec.win_r1 && spec.win_r1 <= 0.5 * spec.extent))
    throw std::invalid_argument("smooth field: window radii must satisfy 0 < r0 < r1 <= extent/2");
  if (spec.bandlimit * spec.delta() >= 0.5) {
    std::ostringstream msg;
    msg << "smooth field: bandlimit " << spec.bandlimit << " violates the sampling condition at "
        << "spacing " << spec.delta() << " (bandlimit*spacing = " << spec.bandlimit * spec.delta()
        << " >= 0.5)";
    throw std::invalid_argument(msg.str());
  }
  SmoothField f;
  f.spec = spec;
  Rng rng(seed, 0x5f1e1dull);
  f.channel_waves.resize(spec.channels);
  for (int c = 0; c < spec.channels; ++c) {
    WaveSum& ws = f.channel_waves[c];
    ws.amp.resize(spec.waves);
    ws.fu.resize(spec.waves);
    ws.fv.resize(spec.waves);
    ws.phase.resize(spec.waves);
    double wsum = 0.0;
    for (int w = 0; w < spec.waves; ++w) {
      ws.amp[w] = rng.uniform(0.2, 1.0);
      wsum += ws.amp[w];
      ws.fu[w] = rng.uniform(-spec.bandlimit, spec.bandlimit);
      ws.fv[w] = rng.uniform(-spec.bandlimit, spec.bandlimit);
      ws.phase[w] = rng.uniform(0.0, 2.0 * kPi);
    }
    // split the certified amplitude across the waves: sum |a_w| = amplitude
    for (int w = 0; w < spec.waves; ++w) ws.amp[w] *= spec.amplitude / wsum;
  }
  return f;
}

Tensor<double> SmoothField::render_field() const {
  const int n = spec.size, m = spec.m, C = spec.channels;
  const double d = spec.delta();
  Tensor<double> out({n, n, m, C});
  for (int g = 0; g < m; ++g) {
    const double theta_g = 2.0 * kPi * g / m;
    for (int i = 0; i < n; ++i) {
      const double v = coord(i, n, d);
      for (int j = 0; j < n; ++j) {
        const double u = coord(j, n, d);
        const double w = envelope(spec, u, v);
        for (int c = 0; c < C; ++c)
          out(i, j, g, c) = w * channel_waves[c].eval_rotated(theta_g, u, v);
      }
    }
  }
  return out;
}

Tensor<double> SmoothField::render_image(double theta) const {
  const int n = spec.size, C = spec.channels;
  const double d = spec.delta();
  Tensor<double> out({n, n, C});
  for (int i = 0; i < n; ++i) {
    const double v = coord(i, n, d);
    for (int j = 0; j < n; ++j) {
      const double u = coord(j, n, d);
      const double w = envelope(spec, u, v);
      for (int c = 0; c < C; ++c) out(i, j, c) = w * channel_waves[c].eval_rotated(theta, u, v);
    }
  }
  return out;
}

// --- operator measurements ----------------------------------------------------

EquivarianceReport measure_maxpool(const SmoothField& f, int k) {
  const int m = f.spec.m;
  const RotationGroup grp(m);
  const int kk = ((k % m) + m) % m;
  const double delta = f.spec.delta();
  const double G = f.spec.grad_bound();

  const Tensor<double> field = f.render_field();
  const Tensor<double> pooled = eq_maxpool(field);
  const int nc = pooled.dims[0];
  const double dc = 2.0 * delta;
  // exclude a 2-pixel border of the pooled grid plus everything outside the
  // inscribed disc, so the rotated lookup never touches padding-affected cells
  const double r_int = f.spec.extent / 2.0 - 2.0 * dc;
  const double theta = grp.angle(kk);

  double worst = 0.0;
  int points = 0;
  for (int i = 0; i < nc; ++i) {
    const double v = coord(i, nc, dc);
    for (int j = 0; j < nc; ++j) {
      const double u = coord(j, nc, dc);
      if (std::hypot(u, v) > r_int) continue;
      double su, sv;
      rotated_source(theta, u, v, su, sv);
      // piecewise-constant transport: the nearest pooled cell of the source
      const long ir = std::lround(index_of(sv, nc, dc));
      const long jr = std::lround(index_of(su, nc, dc));
      if (ir < 0 || ir >= nc || jr < 0 || jr >= nc) continue;
      ++points;
      for (int g = 0; g < m; ++g) {
        const int sg = (g - kk + m) % m;
        for (int c = 0; c < f.spec.channels; ++c) {
          const double e = std::abs(pooled(i, j, g, c) -
                                    pooled(static_cast<int>(ir), static_cast<int>(jr), sg, c));
          if (e > worst) worst = e;
        }
      }
    }
  }

  EquivarianceReport r;
  r.op = "maxpool";
  r.m = m;
  r.k = kk;
  r.angle = theta;
  r.delta = delta;
  r.measured = worst;
  r.bound = 2.0 * std::sqrt(2.0) * G * delta;
  r.pass = worst <= r.bound * (1.0 + 1e-6);
  r.points = points;
  return r;
}

EquivarianceReport measure_upsample(const SmoothField& f, int k) {
  const int m = f.spec.m;
  const RotationGroup grp(m);
  const int kk = ((k % m) + m) % m;
  const double delta = f.spec.delta();
  const double G = f.spec.grad_bound();

  const Tensor<double> field = f.render_field();
  const Tensor<double> up = eq_upsample(field);
  const int nf = up.dims[0];
  const double df = delta / 2.0;
  const double r_int = f.spec.extent / 2.0 - 2.0 * delta;
  const double theta = grp.angle(kk);

  double worst = 0.0;
  int points = 0;
  for (int i = 0; i < nf; ++i) {
    const double v = coord(i, nf, df);
    for (int j = 0; j < nf; ++j) {
      const double u = coord(j, nf, df);
      if (std::hypot(u, v) > r_int) continue;
      double su, sv;
      rotated_source(theta, u, v, su, sv);
      // piecewise-bilinear transport of the upsampled output
      const double row = index_of(sv, nf, df);
      const double col = index_of(su, nf, df);
      if (row < 0.0 || row > nf - 1.0 || col < 0.0 || col > nf - 1.0) continue;
      ++points;
      for (int g = 0; g < m; ++g) {
        const int sg = (g - kk + m) % m;
        for (int c = 0; c < f.spec.channels; ++c) {
          const double e = std::abs(up(i, j, g, c) - bilerp_field(up, row, col, sg, c));
          if (e > worst) worst = e;
        }
      }
    }
  }

  EquivarianceReport r;
  r.op = "upsample";
  r.m = m;
  r.k = kk;
  r.angle = theta;
  r.delta = delta;
  r.measured = worst;
  r.bound = 2.0 * (std::sqrt(2.0) + 1.0) * G * delta;
  r.pass = worst <= r.bound * (1.0 + 1e-6);
  r.points = points;
  return r;
}

EquivarianceReport measure_group_norm(int m, int size, int channels, int groups, int k,
                                      uint64_t seed) {
  const RotationGroup grp(m);
  const int kk = ((k % m) + m) % m;

  Rng rng(seed, 0x96a7ull);
  Tensor<double> f({size, size, m, channels});
  for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = rng.uniform(-1.0, 1.0);
  Tensor<double> gamma({channels}), beta({channels});
  for (int c = 0; c < channels; ++c) {
    gamma.data[c] = rng.uniform(0.5, 1.5);
    beta.data[c] = rng.uniform(-0.5, 0.5);
  }

  // Normalization statistics pool over space, the group axis, and the
  // channels of each group, so they are invariant under any action that
  // permutes those axes. Grid-aligned elements act by their exact
  // permutation; for the remaining elements the group-axis shift (always a
  // permutation) is composed with a quarter-turn spatial permutation, which
  // exercises the same pooling invariance without resampling the grid.
  const auto act = [&](const Tensor<double>& x) {
    if (grp.grid_aligned(kk)) return rotate_field(x, grp, kk);
    const int q = kk % 4;
    Tensor<double> out({size, size, m, channels});
    Tensor<double> slice({size, size, 1});
    for (int g = 0; g < m; ++g) {
      const int sg = (g - kk + m) % m;
      for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < size; ++i)
          for (int j = 0; j < size; ++j) slice(i, j, 0) = x(i, j, sg, c);
        const Tensor<double> rot = rotate_image_quarter(slice, q);
        for (int i = 0; i < size; ++i)
          for (int j = 0; j < size; ++j) out(i, j, g, c) = rot(i, j, 0);
      }
    }
    return out;
  };

  const double eps = 1e-5;
  const Tensor<double> lhs = group_norm(act(f), groups, eps, gamma, beta);
  const Tensor<double> rhs = act(group_norm(f, groups, eps, gamma, beta));

  EquivarianceReport r;
  r.op = "group_norm";
  r.m = m;
  r.k = kk;
  r.angle = grp.angle(kk);
  r.delta = 0.0;
  r.measured = max_abs_diff(lhs, rhs);
  r.bound = 1e-6;  // exactness tolerance: the op commutes up to rounding
  r.pass = r.measured <= r.bound * (1.0 + 1e-6);
  r.points = static_cast<int>(f.data.size());
  return r;
}

double measure_image_op(const SmoothField& cond, const ImageOp3& op, double theta,
                        double interior_radius) {
  if (cond.spec.channels != 3)
    throw std::invalid_argument("image-op measurement needs a 3-channel conditioning field");
  const int n = cond.spec.size;
  const double d = cond.spec.delta();

  const auto split = [&](const Tensor<double>& img, int c) {
    Tensor<double> out({n, n, 1});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(i, j, 0) = img(i, j, c);
    return out;
  };

  const Tensor<double> base = cond.render_image(0.0);
  const Tensor<double> rot = cond.render_image(theta);
  const Tensor<double> out0 = op(split(base, 0), split(base, 1), split(base, 2));
  const Tensor<double> outr = op(split(rot, 0), split(rot, 1), split(rot, 2));
  if (out0.dims[0] != n || out0.dims[1] != n)
    throw std::invalid_argument("image-op measurement: operator changed the grid size");

  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = coord(i, n, d);
    for (int j = 0; j < n; ++j) {
      const double u = coord(j, n, d);
      if (std::hypot(u, v) > interior_radius) continue;
      double su, sv;
      rotated_source(theta, u, v, su, sv);
      const double row = index_of(sv, n, d);
      const double col = index_of(su, n, d);
      if (row < 0.0 || row > n - 1.0 || col < 0.0 || col > n - 1.0) continue;
      const double e = std::abs(outr(i, j, 0) - bilinear_at(out0, row, col, 0));
      if (e > worst) worst = e;
    }
  }
  return worst;
}

// --- scaling fits --------------------------------------------------------------

ScalingFit fit_loglog(const std::vector<double>& deltas, const std::vector<double>& errors,
                      double exact_floor) {
  if (deltas.size() != errors.size() || deltas.size() < 2)
    throw std::invalid_argument("scaling fit needs >= 2 (delta, error) pairs of equal length");
  ScalingFit fit;
  fit.exact = true;
  for (double e : errors)
    if (e > exact_floor) fit.exact = false;
  if (fit.exact) return fit;

  double sx = 0, sy = 0;
  const int n = static_cast<int>(deltas.size());
  std::vector<double> lx(n), ly(n);
  for (int i = 0; i < n; ++i) {
    lx[i] = std::log(deltas[i]);
    ly[i] = std::log(std::max(errors[i], exact_floor));
    sx += lx[i];
    sy += ly[i];
  }
  const double mx = sx / n, my = sy / n;
  double num = 0, den = 0;
  for (int i = 0; i < n; ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  fit.slope = num / den;
  return fit;
}

// --- error maps -----------------------------------------------------------------

template <typename T>
ErrorMapTriplet<T> error_map(const ImageOp3T<T>& op, const Tensor<T>& img_a,
                             const Tensor<T>& img_b, const Tensor<T>& f_t, int m, int k) {
  const RotationGroup grp(m);
  ErrorMapTriplet<T> em;
  em.rotated_output =
      op(rotate_image(img_a, grp, k), rotate_image(img_b, grp, k), rotate_image(f_t, grp, k));
  em.transported_output = rotate_image(op(img_a, img_b, f_t), grp, k);
  if (!em.rotated_output.same_shape(em.transported_output))
    throw std::invalid_argument("error map: operator output shapes disagree");

  em.abs_diff_normalized = zeros_like(em.rotated_output);
  double worst = 0.0;
  for (size_t i = 0; i < em.rotated_output.data.size(); ++i) {
    const double d =
        std::abs(static_cast<double>(em.rotated_output.data[i]) - em.transported_output.data[i]);
    em.abs_diff_normalized.data[i] = static_cast<T>(d);
    if (d > worst) worst = d;
  }
  em.max_error = worst;
  if (worst > 0.0)
    for (auto& x : em.abs_diff_normalized.data) x = static_cast<T>(x / worst);
  return em;
}

template ErrorMapTriplet<float> error_map<float>(const ImageOp3T<float>&, const Tensor<float>&,
                                                 const Tensor<float>&, const Tensor<float>&, int,
                                                 int);
template ErrorMapTriplet<double> error_map<double>(const ImageOp3T<double>&, const Tensor<double>&,
                                                   const Tensor<double>&, const Tensor<double>&,
                                                   int, int);

}  // namespace rediffuse
