#include "rediffuse/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace rediffuse {

NoiseSchedule NoiseSchedule::linear(int steps, double beta1, double betaT) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (beta1 <= 0 || betaT >= 1 || beta1 > betaT)
    throw std::invalid_argument("betas must satisfy 0 < beta1 <= betaT < 1");
  NoiseSchedule ns;
  ns.steps = steps;
  ns.beta.assign(steps + 1, 0.0);
  ns.alpha.assign(steps + 1, 1.0);
  ns.alpha_bar.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    ns.beta[t] = (steps == 1) ? beta1 : beta1 + (betaT - beta1) * (t - 1) / (steps - 1);
    ns.alpha[t] = 1.0 - ns.beta[t];
    ns.alpha_bar[t] = ns.alpha_bar[t - 1] * ns.alpha[t];
  }
  return ns;
}

double NoiseSchedule::posterior_var(int t) const {
  if (t < 1 || t > steps) throw std::out_of_range("timestep out of range");
  return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

template <typename T>
Tensor<T> forward_sample(const NoiseSchedule& ns, const Tensor<T>& f0, int t,
                         const Tensor<T>& eps) {
  if (t < 1 || t > ns.steps) throw std::out_of_range("timestep out of range");
  if (!f0.same_shape(eps)) throw std::invalid_argument("noise shape mismatch");
  const double a = std::sqrt(ns.alpha_bar[t]);
  const double b = std::sqrt(1.0 - ns.alpha_bar[t]);
  Tensor<T> ft = zeros_like(f0);
  for (size_t i = 0; i < f0.size(); ++i)
    ft.data[i] = static_cast<T>(a * static_cast<double>(f0.data[i]) +
                                b * static_cast<double>(eps.data[i]));
  return ft;
}

template <typename T>
Tensor<T> reverse_step(const NoiseSchedule& ns, const Tensor<T>& ft, int t,
                       const Tensor<T>& eps_hat) {
  if (t < 1 || t > ns.steps) throw std::out_of_range("timestep out of range");
  if (!ft.same_shape(eps_hat)) throw std::invalid_argument("noise shape mismatch");
  const double c = ns.beta[t] / std::sqrt(1.0 - ns.alpha_bar[t]);
  const double inv = 1.0 / std::sqrt(ns.alpha[t]);
  Tensor<T> prev = zeros_like(ft);
  for (size_t i = 0; i < ft.size(); ++i)
    prev.data[i] = static_cast<T>(
        inv * (static_cast<double>(ft.data[i]) - c * static_cast<double>(eps_hat.data[i])));
  return prev;
}

template <typename T>
Tensor<T> sample_loop_from(const NoiseSchedule& ns, Tensor<T> f, const DenoiseFn<T>& model,
                           bool clamp01) {
  for (int t = ns.steps; t >= 1; --t) f = reverse_step(ns, f, t, model(f, t));
  if (clamp01)
    for (auto& x : f.data) x = std::min(T(1), std::max(T(0), x));
  return f;
}

template <typename T>
Tensor<T> sample_loop(const NoiseSchedule& ns, int H, int W, int C, const DenoiseFn<T>& model,
                      Rng& rng, bool clamp01) {
  Tensor<T> f({H, W, C});
  for (auto& x : f.data) x = static_cast<T>(rng.normal());
  return sample_loop_from(ns, std::move(f), model, clamp01);
}

template <typename T>
double training_loss(const CondDenoiseFn<T>& model, const Tensor<T>& f0, const Tensor<T>& img_a,
                     const Tensor<T>& img_b, const NoiseSchedule& ns, Rng& rng) {
  const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint32_t>(ns.steps)));
  Tensor<T> eps = zeros_like(f0);
  for (auto& x : eps.data) x = static_cast<T>(rng.normal());
  const Tensor<T> ft = forward_sample(ns, f0, t, eps);
  const Tensor<T> pred = model(img_a, img_b, ft, t);
  if (!pred.same_shape(eps)) throw std::invalid_argument("model output shape mismatch");
  double sq = 0.0;
  for (size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps.data[i]) - static_cast<double>(pred.data[i]);
    if (!std::isfinite(d)) throw std::runtime_error("training_loss: non-finite model output");
    sq += d * d;
  }
  return std::sqrt(sq);
}

#define REDIFFUSE_INSTANTIATE_DIFFUSION(T)                                                     \
  template Tensor<T> forward_sample<T>(const NoiseSchedule&, const Tensor<T>&, int,            \
                                       const Tensor<T>&);                                      \
  template Tensor<T> reverse_step<T>(const NoiseSchedule&, const Tensor<T>&, int,              \
                                     const Tensor<T>&);                                        \
  template Tensor<T> sample_loop_from<T>(const NoiseSchedule&, Tensor<T>, const DenoiseFn<T>&, \
                                         bool);                                                \
  template Tensor<T> sample_loop<T>(const NoiseSchedule&, int, int, int, const DenoiseFn<T>&,  \
                                    Rng&, bool);                                               \
  template double training_loss<T>(const CondDenoiseFn<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   const Tensor<T>&, const NoiseSchedule&, Rng&);

REDIFFUSE_INSTANTIATE_DIFFUSION(float)
REDIFFUSE_INSTANTIATE_DIFFUSION(double)

}  // namespace rediffuse
