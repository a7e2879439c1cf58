#include "rediffuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace rediffuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// 1px-wide anti-aliased coverage from a signed distance (px units, negative
// inside the primitive).
inline double coverage(double signed_dist) { return clamp01(0.5 - signed_dist); }

void paint(Tensor<double>& img, int i, int j, double cov, double intensity) {
  double& px = img(i, j, 0);
  px = px * (1.0 - cov) + intensity * cov;
}

void add_shapes(Tensor<double>& img, int count, Rng& rng) {
  const int n = img.dims[0];
  for (int s = 0; s < count; ++s) {
    const int kind = static_cast<int>(rng.uniform_int(3));
    const double cu = rng.uniform(0.15, 0.85) * n;
    const double cv = rng.uniform(0.15, 0.85) * n;
    const double intensity = rng.uniform(0.0, 1.0);
    if (kind == 0) {  // disc
      const double r = rng.uniform(0.06, 0.2) * n;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double d = std::hypot(j - cu, i - cv) - r;
          if (d < 1.0) paint(img, i, j, coverage(d), intensity);
        }
    } else if (kind == 1) {  // axis-aligned square
      const double h = rng.uniform(0.06, 0.18) * n;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double d = std::max(std::abs(j - cu), std::abs(i - cv)) - h;
          if (d < 1.0) paint(img, i, j, coverage(d), intensity);
        }
    } else {  // oriented bar (capsule)
      const double phi = rng.uniform(0.0, kPi);
      const double half_len = rng.uniform(0.15, 0.4) * n;
      const double half_thick = rng.uniform(0.02, 0.06) * n;
      const double du = std::cos(phi), dv = std::sin(phi);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double ru = j - cu, rv = i - cv;
          double t = ru * du + rv * dv;
          t = std::max(-half_len, std::min(half_len, t));
          const double d = std::hypot(ru - t * du, rv - t * dv) - half_thick;
          if (d < 1.0) paint(img, i, j, coverage(d), intensity);
        }
    }
  }
}

void add_gradients(Tensor<double>& img, Rng& rng) {
  const int n = img.dims[0];
  // a linear ramp plus one or two radial bumps, kept inside [0,1]
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double du = std::cos(phi) / n, dv = std::sin(phi) / n;
  const double lo = rng.uniform(0.05, 0.35), hi = rng.uniform(0.55, 0.95);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double t = 0.5 + (j - n / 2.0) * du + (i - n / 2.0) * dv;
      img(i, j, 0) = lo + (hi - lo) * clamp01(t);
    }
  const int bumps = 1 + static_cast<int>(rng.uniform_int(2));
  for (int b = 0; b < bumps; ++b) {
    const double cu = rng.uniform(0.2, 0.8) * n;
    const double cv = rng.uniform(0.2, 0.8) * n;
    const double s = rng.uniform(0.1, 0.25) * n;
    const double amp = rng.uniform(-0.4, 0.4);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d2 = (j - cu) * (j - cu) + (i - cv) * (i - cv);
        img(i, j, 0) = clamp01(img(i, j, 0) + amp * std::exp(-d2 / (2 * s * s)));
      }
  }
}

}  // namespace

Tensor<double> gaussian_blur(const Tensor<double>& img, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int h = img.dims[0], w = img.dims[1];
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> wts(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) wts[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));

  // horizontal then vertical pass; weights renormalized over in-bounds taps
  Tensor<double> tmp({h, w, 1}), out({h, w, 1});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0, norm = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int jj = j + t;
        if (jj < 0 || jj >= w) continue;
        acc += wts[t + radius] * img(i, jj, 0);
        norm += wts[t + radius];
      }
      tmp(i, j, 0) = acc / norm;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0, norm = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int ii = i + t;
        if (ii < 0 || ii >= h) continue;
        acc += wts[t + radius] * tmp(ii, j, 0);
        norm += wts[t + radius];
      }
      out(i, j, 0) = acc / norm;
    }
  return out;
}

Tensor<double> render_ground_truth(int size, Texture texture, Rng& rng) {
  Tensor<double> img({size, size, 1});
  const double bg = rng.uniform(0.15, 0.4);
  for (auto& v : img.data) v = bg;
  switch (texture) {
    case Texture::Shapes:
      add_shapes(img, 4 + static_cast<int>(rng.uniform_int(4)), rng);
      break;
    case Texture::Gradients:
      add_gradients(img, rng);
      break;
    case Texture::Mixed:
      add_gradients(img, rng);
      add_shapes(img, 3 + static_cast<int>(rng.uniform_int(3)), rng);
      break;
  }
  return img;
}

Tensor<double> smooth_mask(int size, Rng& rng) {
  Tensor<double> field({size, size, 1});
  const int waves = 3;
  std::vector<double> amp(waves), fu(waves), fv(waves), ph(waves);
  for (int w = 0; w < waves; ++w) {
    amp[w] = rng.uniform(0.3, 1.0);
    fu[w] = rng.uniform(-1.8, 1.8) / size;
    fv[w] = rng.uniform(-1.8, 1.8) / size;
    ph[w] = rng.uniform(0.0, 2.0 * kPi);
  }
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      double s = 0.0;
      for (int w = 0; w < waves; ++w)
        s += amp[w] * std::cos(2.0 * kPi * (fu[w] * j + fv[w] * i) + ph[w]);
      field(i, j, 0) = s;
    }

  // threshold at the median so both regions are non-empty
  std::vector<double> sorted(field.data);
  const size_t mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + mid, sorted.end());
  const double thr = sorted[mid];
  Tensor<double> mask({size, size, 1});
  for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = field.data[i] >= thr ? 1.0 : 0.0;
  return mask;
}

FusionPair compose_pair(const Tensor<double>& gt, const Tensor<double>& mask, double blur_sigma) {
  if (!gt.same_shape(mask))
    throw std::invalid_argument("compose_pair: ground truth and mask shapes differ");
  FusionPair p;
  p.ground_truth = gt;
  p.mask = mask;
  const Tensor<double> blurred = gaussian_blur(gt, blur_sigma);
  p.source_a = zeros_like(gt);
  p.source_b = zeros_like(gt);
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const bool focus_a = mask.data[i] != 0.0;
    p.source_a.data[i] = focus_a ? gt.data[i] : blurred.data[i];
    p.source_b.data[i] = focus_a ? blurred.data[i] : gt.data[i];
  }
  return p;
}

FusionPair gen_pair(uint64_t seed, int size, Texture texture, double blur_sigma) {
  if (size <= 0 || size % 2 != 0) throw std::invalid_argument("gen_pair: size must be even");
  if (blur_sigma <= 0.0) throw std::invalid_argument("gen_pair: blur_sigma must be positive");
  Rng rng(seed, derive_stream(seed, 0xda7aull));
  const Tensor<double> gt = render_ground_truth(size, texture, rng);
  const Tensor<double> mask = smooth_mask(size, rng);
  return compose_pair(gt, mask, blur_sigma);
}

}  // namespace rediffuse
