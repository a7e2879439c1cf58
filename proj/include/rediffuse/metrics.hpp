#pragma once

#include "rediffuse/tensor.hpp"

namespace rediffuse {

// Multi-scale structural similarity on (H, W, 1) images in [0,1]: 11-tap
// Gaussian window (sigma 1.5), 2x2 mean downsampling between scales,
// standard per-scale weights renormalized over the scales used. Requires
// min(H, W) >= 2^(scales-1) * 11 so the window fits at the coarsest scale;
// smaller inputs are rejected with the minimum size in the message.
double ms_ssim(const Tensor<double>& a, const Tensor<double>& b, int scales = 3);

// Fusion score: mean of ms_ssim against each source, with the scale count
// clamped to the largest admissible value <= 3 for the given image size.
double fusion_ms_ssim(const Tensor<double>& fused, const Tensor<double>& ia,
                      const Tensor<double>& ib);

// Normalized mutual information of the fused image against both sources,
// QMI = 2 * [ MI(A,F)/(H(A)+H(F)) + MI(B,F)/(H(B)+H(F)) ], range [0,2],
// from per-image histograms on [0,1]. A zero-entropy (constant) image makes
// its term 0 and prints a warning to stderr.
double qmi(const Tensor<double>& fused, const Tensor<double>& ia, const Tensor<double>& ib,
           int bins = 256);

// Edge-preservation score: Sobel gradient magnitude/orientation agreement
// pushed through the standard sigmoids (strength 0.9994/15/0.5, orientation
// 0.9879/22/0.8, orientation differences folded mod pi), normalized so that
// perfect transfer scores 1, and weighted by source edge strength.
double qabf(const Tensor<double>& fused, const Tensor<double>& ia, const Tensor<double>& ib);

}  // namespace rediffuse
