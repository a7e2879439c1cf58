#include "rediffuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rediffuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_image_pair(const Tensor<double>& a, const Tensor<double>& b, const char* who) {
  if (a.ndim != 3 || a.dims[2] != 1 || b.ndim != 3 || b.dims[2] != 1)
    throw std::invalid_argument(std::string(who) + ": expected (H, W, 1) images");
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": image shapes differ: " + a.shape_str() +
                                " vs " + b.shape_str());
}

// --- MS-SSIM ------------------------------------------------------------------

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    w[i] = std::exp(-0.5 * d * d / (kWinSigma * kWinSigma));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

// valid-region separable correlation with the 11-tap window
Tensor<double> win_filter(const Tensor<double>& img) {
  static const std::vector<double> w = gaussian_window();
  const int h = img.dims[0], wd = img.dims[1];
  const int oh = h - kWin + 1, ow = wd - kWin + 1;
  Tensor<double> tmp({h, ow, 1}), out({oh, ow, 1});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int t = 0; t < kWin; ++t) acc += w[t] * img(i, j + t, 0);
      tmp(i, j, 0) = acc;
    }
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int t = 0; t < kWin; ++t) acc += w[t] * tmp(i + t, j, 0);
      out(i, j, 0) = acc;
    }
  return out;
}

Tensor<double> hadamard(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out = zeros_like(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Tensor<double> downsample2(const Tensor<double>& img) {
  const int h = img.dims[0] / 2, w = img.dims[1] / 2;
  Tensor<double> out({h, w, 1});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out(i, j, 0) = 0.25 * (img(2 * i, 2 * j, 0) + img(2 * i, 2 * j + 1, 0) +
                             img(2 * i + 1, 2 * j, 0) + img(2 * i + 1, 2 * j + 1, 0));
  return out;
}

// mean contrast-structure term and mean full SSIM at one scale
void ssim_scale(const Tensor<double>& a, const Tensor<double>& b, double* mean_cs,
                double* mean_ssim) {
  const Tensor<double> mu_a = win_filter(a), mu_b = win_filter(b);
  const Tensor<double> maa = win_filter(hadamard(a, a));
  const Tensor<double> mbb = win_filter(hadamard(b, b));
  const Tensor<double> mab = win_filter(hadamard(a, b));
  double cs_acc = 0.0, ssim_acc = 0.0;
  const size_t n = mu_a.data.size();
  for (size_t i = 0; i < n; ++i) {
    const double ma = mu_a.data[i], mb = mu_b.data[i];
    const double va = maa.data[i] - ma * ma;
    const double vb = mbb.data[i] - mb * mb;
    const double vab = mab.data[i] - ma * mb;
    const double cs = (2.0 * vab + kC2) / (va + vb + kC2);
    const double lum = (2.0 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
    cs_acc += cs;
    ssim_acc += lum * cs;
  }
  *mean_cs = cs_acc / static_cast<double>(n);
  *mean_ssim = ssim_acc / static_cast<double>(n);
}

}  // namespace

double ms_ssim(const Tensor<double>& a, const Tensor<double>& b, int scales) {
  check_image_pair(a, b, "ms_ssim");
  if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim: scales must be in [1,5]");
  const int min_dim = std::min(a.dims[0], a.dims[1]);
  const int min_size = (1 << (scales - 1)) * kWin;
  if (min_dim < min_size) {
    std::ostringstream msg;
    msg << "ms_ssim: image side " << min_dim << " too small for " << scales
        << " scales (needs >= " << min_size << ")";
    throw std::invalid_argument(msg.str());
  }

  static const double kWeights5[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::vector<double> w(kWeights5, kWeights5 + scales);
  double wsum = 0.0;
  for (double x : w) wsum += x;
  for (double& x : w) x /= wsum;

  Tensor<double> ca = a, cb = b;
  double score = 1.0;
  for (int s = 0; s < scales; ++s) {
    double mean_cs = 0.0, mean_ssim = 0.0;
    ssim_scale(ca, cb, &mean_cs, &mean_ssim);
    const double factor = (s == scales - 1) ? mean_ssim : mean_cs;
    if (factor <= 0.0) return 0.0;  // rare anti-correlated case; clamp the score
    score *= std::pow(factor, w[s]);
    if (s + 1 < scales) {
      ca = downsample2(ca);
      cb = downsample2(cb);
    }
  }
  return score;
}

double fusion_ms_ssim(const Tensor<double>& fused, const Tensor<double>& ia,
                      const Tensor<double>& ib) {
  check_image_pair(fused, ia, "fusion_ms_ssim");
  check_image_pair(fused, ib, "fusion_ms_ssim");
  const int min_dim = std::min(fused.dims[0], fused.dims[1]);
  int scales = 1;
  while (scales < 3 && min_dim >= (1 << scales) * kWin) ++scales;
  return 0.5 * (ms_ssim(fused, ia, scales) + ms_ssim(fused, ib, scales));
}

// --- QMI -----------------------------------------------------------------------

namespace {

// joint and marginal histograms -> (MI, H(x), H(y))
void mi_entropy(const Tensor<double>& x, const Tensor<double>& y, int bins, double* mi, double* hx,
                double* hy) {
  const size_t n = x.data.size();
  std::vector<double> joint(static_cast<size_t>(bins) * bins, 0.0);
  std::vector<double> px(bins, 0.0), py(bins, 0.0);
  const auto bin_of = [bins](double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    const int b = static_cast<int>(v * bins);
    return b >= bins ? bins - 1 : b;
  };
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const int bx = bin_of(x.data[i]), by = bin_of(y.data[i]);
    joint[static_cast<size_t>(bx) * bins + by] += inv;
    px[bx] += inv;
    py[by] += inv;
  }
  double h_x = 0.0, h_y = 0.0, m = 0.0;
  for (int i = 0; i < bins; ++i) {
    if (px[i] > 0.0) h_x -= px[i] * std::log(px[i]);
    if (py[i] > 0.0) h_y -= py[i] * std::log(py[i]);
  }
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double p = joint[static_cast<size_t>(i) * bins + j];
      if (p > 0.0) m += p * std::log(p / (px[i] * py[j]));
    }
  *mi = m;
  *hx = h_x;
  *hy = h_y;
}

double qmi_term(const Tensor<double>& src, const Tensor<double>& fused, int bins,
                const char* which) {
  double mi, hs, hf;
  mi_entropy(src, fused, bins, &mi, &hs, &hf);
  if (hs == 0.0 || hf == 0.0) {
    std::fprintf(stderr, "qmi: constant image in the (%s, fused) pair; term set to 0\n", which);
    return 0.0;
  }
  return mi / (hs + hf);
}

}  // namespace

double qmi(const Tensor<double>& fused, const Tensor<double>& ia, const Tensor<double>& ib,
           int bins) {
  check_image_pair(fused, ia, "qmi");
  check_image_pair(fused, ib, "qmi");
  if (bins < 2) throw std::invalid_argument("qmi: bins must be >= 2");
  return 2.0 * (qmi_term(ia, fused, bins, "source_a") + qmi_term(ib, fused, bins, "source_b"));
}

// --- Qabf ------------------------------------------------------------------------

namespace {

constexpr double kGammaG = 0.9994, kKappaG = 15.0, kSigmaG = 0.5;
constexpr double kGammaA = 0.9879, kKappaA = 22.0, kSigmaA = 0.8;

double sig_g(double x) { return kGammaG / (1.0 + std::exp(-kKappaG * (x - kSigmaG))); }
double sig_a(double x) { return kGammaA / (1.0 + std::exp(-kKappaA * (x - kSigmaA))); }

struct GradField {
  std::vector<double> mag, ori;  // interior pixels, row-major
  int h = 0, w = 0;              // interior dims
};

GradField sobel(const Tensor<double>& img) {
  const int H = img.dims[0], W = img.dims[1];
  GradField g;
  g.h = H - 2;
  g.w = W - 2;
  g.mag.resize(static_cast<size_t>(g.h) * g.w);
  g.ori.resize(g.mag.size());
  for (int i = 1; i < H - 1; ++i)
    for (int j = 1; j < W - 1; ++j) {
      const double gx = (img(i - 1, j + 1, 0) + 2 * img(i, j + 1, 0) + img(i + 1, j + 1, 0)) -
                        (img(i - 1, j - 1, 0) + 2 * img(i, j - 1, 0) + img(i + 1, j - 1, 0));
      const double gy = (img(i + 1, j - 1, 0) + 2 * img(i + 1, j, 0) + img(i + 1, j + 1, 0)) -
                        (img(i - 1, j - 1, 0) + 2 * img(i - 1, j, 0) + img(i - 1, j + 1, 0));
      const size_t at = static_cast<size_t>(i - 1) * g.w + (j - 1);
      g.mag[at] = std::hypot(gx, gy);
      // orientation (not direction): fold to [0, pi)
      double a = std::atan2(gy, gx);
      a -= kPi * std::floor(a / kPi);
      g.ori[at] = a;
    }
  return g;
}

// per-pixel edge-preservation of source s in fused f, normalized so a perfect
// match scores exactly 1
double edge_preservation(double mag_s, double ori_s, double mag_f, double ori_f) {
  double G;
  if (mag_s == mag_f)
    G = 1.0;
  else if (mag_s > mag_f)
    G = mag_f / mag_s;
  else
    G = mag_s / mag_f;
  double d = std::abs(ori_s - ori_f);
  d = std::min(d, kPi - d);
  const double A = 1.0 - d / (kPi / 2.0);
  return (sig_g(G) * sig_a(A)) / (sig_g(1.0) * sig_a(1.0));
}

}  // namespace

double qabf(const Tensor<double>& fused, const Tensor<double>& ia, const Tensor<double>& ib) {
  check_image_pair(fused, ia, "qabf");
  check_image_pair(fused, ib, "qabf");
  if (fused.dims[0] < 3 || fused.dims[1] < 3)
    throw std::invalid_argument("qabf: images must be at least 3x3");

  const GradField gf = sobel(fused), ga = sobel(ia), gb = sobel(ib);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < gf.mag.size(); ++i) {
    const double qa = edge_preservation(ga.mag[i], ga.ori[i], gf.mag[i], gf.ori[i]);
    const double qb = edge_preservation(gb.mag[i], gb.ori[i], gf.mag[i], gf.ori[i]);
    num += qa * ga.mag[i] + qb * gb.mag[i];
    den += ga.mag[i] + gb.mag[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace rediffuse
