#pragma once

#include <functional>
#include <vector>

#include "rediffuse/rng.hpp"
#include "rediffuse/tensor.hpp"

namespace rediffuse {

// Discrete-time Gaussian corruption schedule. Arrays are 1-indexed by
// timestep (entry 0 holds the t = 0 identity: alpha_bar[0] = 1).
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar;

  // Linearly spaced beta_t from beta1 (t = 1) to betaT (t = steps).
  static NoiseSchedule linear(int steps, double beta1, double betaT);

  // Variance of the forward-process posterior q(f_{t-1} | f_t, f_0).
  double posterior_var(int t) const;
};

// f_t = sqrt(alpha_bar_t) f_0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
Tensor<T> forward_sample(const NoiseSchedule& ns, const Tensor<T>& f0, int t,
                         const Tensor<T>& eps);

// Deterministic reverse update
//   f_{t-1} = (f_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
template <typename T>
Tensor<T> reverse_step(const NoiseSchedule& ns, const Tensor<T>& ft, int t,
                       const Tensor<T>& eps_hat);

template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& ft, int t)>;

// Conditional denoiser: predicts the noise in f_t given the two sources.
template <typename T>
using CondDenoiseFn = std::function<Tensor<T>(const Tensor<T>& img_a, const Tensor<T>& img_b,
                                              const Tensor<T>& ft, int t)>;

// One Monte-Carlo draw of the denoising objective: samples t uniformly from
// {1, ..., steps}, then eps ~ N(0, I) element-by-element in row-major order,
// forms f_t by forward_sample, and returns the (unsquared) Euclidean norm
// ||eps - model(img_a, img_b, f_t, t)||_2. The draw order is part of the
// contract so callers can replay the same (t, eps) from a copied Rng.
template <typename T>
double training_loss(const CondDenoiseFn<T>& model, const Tensor<T>& f0, const Tensor<T>& img_a,
                     const Tensor<T>& img_b, const NoiseSchedule& ns, Rng& rng);

// Full reverse pass from an explicit start state f_T down to f_0. The
// result is clamped to [0, 1] when clamp01 is set (image-valued samples).
template <typename T>
Tensor<T> sample_loop_from(const NoiseSchedule& ns, Tensor<T> f_init, const DenoiseFn<T>& model,
                           bool clamp01);

// Same, drawing f_T ~ N(0, I) from rng.
template <typename T>
Tensor<T> sample_loop(const NoiseSchedule& ns, int H, int W, int C, const DenoiseFn<T>& model,
                      Rng& rng, bool clamp01);

}  // namespace rediffuse
