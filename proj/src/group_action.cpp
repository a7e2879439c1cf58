#include "rediffuse/group_action.hpp"

#include <cmath>

namespace rediffuse {

RotationGroup::RotationGroup(int order) : m(order) {
  if (m < 1) throw std::invalid_argument("group order must be >= 1");
  cos_k.resize(m);
  sin_k.resize(m);
  for (int k = 0; k < m; ++k) {
    // exact values at quarter turns so aligned angles stay exact in float
    if (4 * k % m == 0) {
      int q = (4 * k / m) % 4;
      static const double cq[4] = {1, 0, -1, 0};
      static const double sq[4] = {0, 1, 0, -1};
      cos_k[k] = cq[q];
      sin_k[k] = sq[q];
    } else {
      double a = 2.0 * M_PI * k / m;
      cos_k[k] = std::cos(a);
      sin_k[k] = std::sin(a);
    }
  }
}

double RotationGroup::angle(int k) const {
  int kk = ((k % m) + m) % m;
  return 2.0 * M_PI * kk / m;
}

void RotationGroup::matrix(int k, double out[4]) const {
  int kk = ((k % m) + m) % m;
  out[0] = cos_k[kk];
  out[1] = -sin_k[kk];
  out[2] = sin_k[kk];
  out[3] = cos_k[kk];
}

bool RotationGroup::grid_aligned(int k) const {
  int kk = ((k % m) + m) % m;
  return (4 * kk) % m == 0;
}

int RotationGroup::quarter_turns(int k) const {
  int kk = ((k % m) + m) % m;
  return (4 * kk / m) % 4;
}

// --- exact quarter turns ---------------------------------------------------

template <typename T>
Tensor<T> rotate_image_quarter(const Tensor<T>& img, int q) {
  q = ((q % 4) + 4) % 4;
  const int H = img.dims[0], W = img.dims[1], C = img.dims[2];
  if (q == 0) return img;
  Tensor<T> out;
  if (q == 2)
    out.resize({H, W, C});
  else
    out.resize({W, H, C});
  for (int i = 0; i < out.dims[0]; ++i)
    for (int j = 0; j < out.dims[1]; ++j) {
      int si, sj;
      switch (q) {
        case 1: si = j; sj = W - 1 - i; break;          // 90 CCW
        case 2: si = H - 1 - i; sj = W - 1 - j; break;  // 180
        default: si = H - 1 - j; sj = i; break;         // 270 CCW
      }
      for (int c = 0; c < C; ++c) out(i, j, c) = img(si, sj, c);
    }
  return out;
}

// --- bilinear ---------------------------------------------------------------

template <typename T>
double bilinear_at(const Tensor<T>& img, double row, double col, int c) {
  const int H = img.dims[0], W = img.dims[1];
  if (row <= -1.0 || col <= -1.0 || row >= H || col >= W) return 0.0;
  int i0 = static_cast<int>(std::floor(row));
  int j0 = static_cast<int>(std::floor(col));
  double fr = row - i0, fc = col - j0;
  auto at = [&](int i, int j) -> double {
    if (i < 0 || j < 0 || i >= H || j >= W) return 0.0;
    return static_cast<double>(img(i, j, c));
  };
  return (1 - fr) * ((1 - fc) * at(i0, j0) + fc * at(i0, j0 + 1)) +
         fr * ((1 - fc) * at(i0 + 1, j0) + fc * at(i0 + 1, j0 + 1));
}

template <typename T>
Tensor<T> rotate_image_arbitrary(const Tensor<T>& img, double theta) {
  const int H = img.dims[0], W = img.dims[1], C = img.dims[2];
  if (H != W) throw std::invalid_argument("arbitrary-angle rotation needs a square image");
  Tensor<T> out({H, W, C});
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      // visual CCW rotation with row axis pointing down: the source of output
      // offset (u,v) = (col-cx, row-cy) is (u*ct - v*st, u*st + v*ct)
      double u = j - cx, v = i - cy;
      double sc = cx + u * ct - v * st;
      double sr = cy + u * st + v * ct;
      for (int c = 0; c < C; ++c) out(i, j, c) = static_cast<T>(bilinear_at(img, sr, sc, c));
    }
  return out;
}

template <typename T>
Tensor<T> rotate_image(const Tensor<T>& img, const RotationGroup& g, int k) {
  int kk = ((k % g.m) + g.m) % g.m;
  if (g.grid_aligned(kk)) return rotate_image_quarter(img, g.quarter_turns(kk));
  if (img.dims[0] != img.dims[1])
    throw std::invalid_argument("non-square image: rotation angle must be a multiple of pi/2");
  return rotate_image_arbitrary(img, g.angle(kk));
}

// --- fields -----------------------------------------------------------------

namespace {

// copy slice (.., g, c) of a field into a planar (H, W, 1) image
template <typename T>
Tensor<T> extract_slice(const Tensor<T>& f, int g, int c) {
  Tensor<T> s({f.dims[0], f.dims[1], 1});
  for (int i = 0; i < f.dims[0]; ++i)
    for (int j = 0; j < f.dims[1]; ++j) s(i, j, 0) = f(i, j, g, c);
  return s;
}

}  // namespace

template <typename T>
Tensor<T> rotate_field(const Tensor<T>& f, const RotationGroup& g, int k) {
  int kk = ((k % g.m) + g.m) % g.m;
  const int H = f.dims[0], W = f.dims[1], M = f.dims[2], C = f.dims[3];
  if (M != g.m) throw std::invalid_argument("field group axis does not match group order");
  if (g.grid_aligned(kk)) {
    int q = g.quarter_turns(kk);
    Tensor<T> out;
    if (q % 2 == 0)
      out.resize({H, W, M, C});
    else
      out.resize({W, H, M, C});
    for (int i = 0; i < out.dims[0]; ++i)
      for (int j = 0; j < out.dims[1]; ++j) {
        int si, sj;
        switch (q) {
          case 0: si = i; sj = j; break;
          case 1: si = j; sj = W - 1 - i; break;
          case 2: si = H - 1 - i; sj = W - 1 - j; break;
          default: si = H - 1 - j; sj = i; break;
        }
        for (int gg = 0; gg < M; ++gg) {
          int sg = ((gg - kk) % M + M) % M;
          for (int c = 0; c < C; ++c) out(i, j, gg, c) = f(si, sj, sg, c);
        }
      }
    return out;
  }
  return rotate_field_arbitrary(f, g.angle(kk), kk);
}

template <typename T>
Tensor<T> rotate_field_arbitrary(const Tensor<T>& f, double theta, int shift) {
  const int H = f.dims[0], W = f.dims[1], M = f.dims[2], C = f.dims[3];
  if (H != W) throw std::invalid_argument("arbitrary-angle rotation needs a square field");
  Tensor<T> out({H, W, M, C});
  for (int gg = 0; gg < M; ++gg) {
    int sg = ((gg - shift) % M + M) % M;
    for (int c = 0; c < C; ++c) {
      Tensor<T> slice = extract_slice(f, sg, c);
      Tensor<T> rot = rotate_image_arbitrary(slice, theta);
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) out(i, j, gg, c) = rot(i, j, 0);
    }
  }
  return out;
}

// --- instantiations ----------------------------------------------------------

template Tensor<float> rotate_image_quarter<float>(const Tensor<float>&, int);
template Tensor<double> rotate_image_quarter<double>(const Tensor<double>&, int);
template Tensor<float> rotate_image_arbitrary<float>(const Tensor<float>&, double);
template Tensor<double> rotate_image_arbitrary<double>(const Tensor<double>&, double);
template Tensor<float> rotate_image<float>(const Tensor<float>&, const RotationGroup&, int);
template Tensor<double> rotate_image<double>(const Tensor<double>&, const RotationGroup&, int);
template Tensor<float> rotate_field<float>(const Tensor<float>&, const RotationGroup&, int);
template Tensor<double> rotate_field<double>(const Tensor<double>&, const RotationGroup&, int);
template Tensor<float> rotate_field_arbitrary<float>(const Tensor<float>&, double, int);
template Tensor<double> rotate_field_arbitrary<double>(const Tensor<double>&, double, int);
template double bilinear_at<float>(const Tensor<float>&, double, double, int);
template double bilinear_at<double>(const Tensor<double>&, double, double, int);

}  // namespace rediffuse
