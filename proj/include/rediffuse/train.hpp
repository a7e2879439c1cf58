#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rediffuse/autodiff.hpp"
#include "rediffuse/diffusion.hpp"
#include "rediffuse/unet.hpp"

namespace rediffuse {

// Raised when a loss or gradient goes non-finite; the caller keeps whatever
// checkpoint it last wrote.
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct FusionDataset {
  std::vector<Tensor<T>> img_a, img_b, gt;  // parallel arrays, one entry per pair
  int count() const { return static_cast<int>(gt.size()); }
};

struct TrainConfig {
  int epochs = 300;
  int batch = 8;
  double lr = 2e-4;    // base Adam step size
  uint64_t seed = 0;   // drives the per-epoch (t, eps) draws
};

struct EpochRecord {
  int epoch = 0;  // 1-indexed
  double mean_loss = 0.0;
  double lr = 0.0;
};

// Step-size schedule: the base rate decays by 0.99 every 1000 epochs.
double lr_for_epoch(double base_lr, int epoch);

// Runs epochs start_epoch+1 .. cfg.epochs (so a resumed run continues the
// exact trajectory of an uninterrupted one: every epoch draws its noise from
// a stream derived from (seed, epoch), independent of history). One epoch is
// a full fixed-order pass over the dataset; gradients are averaged over each
// batch before the Adam update. on_epoch (optional) fires after every epoch.
template <typename T>
std::vector<EpochRecord> train_model(UNet<T>& net, AdamOptimizer<T>& opt,
                                     const FusionDataset<T>& data, const NoiseSchedule& ns,
                                     const TrainConfig& cfg, int start_epoch = 0,
                                     const std::function<void(const EpochRecord&)>& on_epoch = {});

// Full reverse-process fusion of one source pair: starts from seeded Gaussian
// noise and denoises down to t = 0, clamped to [0, 1].
template <typename T>
Tensor<T> fuse_images(const UNet<T>& net, const NoiseSchedule& ns, const Tensor<T>& img_a,
                      const Tensor<T>& img_b, uint64_t seed);

}  // namespace rediffuse
