#pragma once

#include <cstdint>

#include "rediffuse/rng.hpp"
#include "rediffuse/tensor.hpp"

namespace rediffuse {

// A synthetic multi-focus pair: an all-in-focus ground truth, two
// complementarily defocused sources, and the binary focus mask.
// source_a equals the ground truth where mask = 1 and its blur elsewhere;
// source_b is the complement. All images are (size, size, 1) in [0,1].
struct FusionPair {
  Tensor<double> ground_truth;
  Tensor<double> source_a;
  Tensor<double> source_b;
  Tensor<double> mask;  // values exactly 0 or 1
};

enum class Texture { Shapes, Gradients, Mixed };

// Separable Gaussian blur truncated at 3*sigma; weights renormalized over
// in-bounds taps so constants blur to themselves. Summation order is fixed
// for reproducibility.
Tensor<double> gaussian_blur(const Tensor<double>& img, double sigma);

// Anti-aliased composition of random geometric primitives (discs, squares,
// oriented bars) and/or smooth gradients over a flat background.
Tensor<double> render_ground_truth(int size, Texture texture, Rng& rng);

// Smooth random bipartition: low-frequency cosine noise thresholded at its
// median, so both regions are non-empty.
Tensor<double> smooth_mask(int size, Rng& rng);

// Deterministic assembly of a pair from its ingredients.
FusionPair compose_pair(const Tensor<double>& gt, const Tensor<double>& mask, double blur_sigma);

// size must be even, blur_sigma > 0. Fixed seed gives a bit-identical pair.
FusionPair gen_pair(uint64_t seed, int size, Texture texture, double blur_sigma);

}  // namespace rediffuse
