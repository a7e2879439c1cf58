#pragma once

#include <vector>

#include "rediffuse/tensor.hpp"

namespace rediffuse {

// Cyclic rotation group of order m: angles 2*pi*k/m, counter-clockwise.
// matrix(k) is the 2x2 rotation matrix [[c,-s],[s,c]] in Cartesian (x right,
// y up) coordinates.
struct RotationGroup {
  int m;
  std::vector<double> cos_k, sin_k;

  explicit RotationGroup(int order);

  double angle(int k) const;
  // column-major-free accessors: matrix [[a,b],[c,d]] = [[cos,-sin],[sin,cos]]
  void matrix(int k, double out[4]) const;
  // true when angle(k) is an exact multiple of pi/2 (index permutation exists)
  bool grid_aligned(int k) const;
  // for aligned k: number of quarter turns in {0,1,2,3}
  int quarter_turns(int k) const;
};

// --- planar images (H, W, C) ---------------------------------------------

// Rotate image by angle 2*pi*k/m about the pixel-grid centre. Quarter-turn
// angles are exact index permutations (any H, W); other angles resample
// bilinearly and require a square image. k may be any integer (mod m).
template <typename T>
Tensor<T> rotate_image(const Tensor<T>& img, const RotationGroup& g, int k);

// Rotate a square image by an arbitrary angle (radians, CCW) with bilinear
// resampling; samples outside the input are zero.
template <typename T>
Tensor<T> rotate_image_arbitrary(const Tensor<T>& img, double theta);

// Exact quarter-turn permutation, q in {0,1,2,3} CCW quarter turns.
template <typename T>
Tensor<T> rotate_image_quarter(const Tensor<T>& img, int q);

// --- feature fields (H, W, M, C) ------------------------------------------

// Regular-representation action: rotate every (g,c) slice spatially by
// 2*pi*k/m and shift the group axis, out(..., g, c) = in(..., g-k mod m, c).
// Exact permutation whenever the spatial angle is a quarter turn.
template <typename T>
Tensor<T> rotate_field(const Tensor<T>& f, const RotationGroup& g, int k);

// Arbitrary-angle spatial rotation of every slice combined with a group-axis
// shift by `shift` (used by the verification harness for off-grid angles).
template <typename T>
Tensor<T> rotate_field_arbitrary(const Tensor<T>& f, double theta, int shift);

// Bilinear lookup of the piecewise-bilinear extension of a (H,W,C) image at
// fractional pixel coordinates (row, col); zero outside [0,H-1]x[0,W-1].
template <typename T>
double bilinear_at(const Tensor<T>& img, double row, double col, int c);

}  // namespace rediffuse
