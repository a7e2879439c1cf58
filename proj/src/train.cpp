#include "rediffuse/train.hpp"

#include <cmath>
#include <cstdint>

namespace rediffuse {

namespace {
constexpr uint64_t kEpochPurpose = 0x7e41;  // per-epoch (t, eps) draws
constexpr uint64_t kFusePurpose = 0xf05e;   // reverse-process start noise
}  // namespace

double lr_for_epoch(double base_lr, int epoch) {
  return base_lr * std::pow(0.99, epoch / 1000);
}

template <typename T>
std::vector<EpochRecord> train_model(UNet<T>& net, AdamOptimizer<T>& opt,
                                     const FusionDataset<T>& data, const NoiseSchedule& ns,
                                     const TrainConfig& cfg, int start_epoch,
                                     const std::function<void(const EpochRecord&)>& on_epoch) {
  if (data.count() == 0) throw std::invalid_argument("train_model: empty dataset");
  if (static_cast<int>(data.img_a.size()) != data.count() ||
      static_cast<int>(data.img_b.size()) != data.count())
    throw std::invalid_argument("train_model: dataset arrays must be parallel");
  if (cfg.batch < 1) throw std::invalid_argument("train_model: batch must be positive");

  ParamStore<T>& ps = *net.store();
  const int n = data.count();
  std::vector<EpochRecord> log;

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, derive_stream(cfg.seed, kEpochPurpose, static_cast<uint64_t>(epoch)));
    const double lr = lr_for_epoch(cfg.lr, epoch);
    double loss_sum = 0.0;

    for (int begin = 0; begin < n; begin += cfg.batch) {
      const int end = std::min(n, begin + cfg.batch);
      ps.zero_grad();
      for (int i = begin; i < end; ++i) {
        const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint32_t>(ns.steps)));
        Tensor<T> eps = zeros_like(data.gt[i]);
        for (auto& x : eps.data) x = static_cast<T>(rng.normal());
        const Tensor<T> ft = forward_sample(ns, data.gt[i], t, eps);

        Tape<T> tape(&ps);
        const int pred = net.build(tape, data.img_a[i], data.img_b[i], ft, t);
        const int target = tape.input(std::move(eps));
        const int loss = tape.l2_loss(pred, target);
        const double lv = static_cast<double>(tape.value(loss).data[0]);
        if (!std::isfinite(lv))
          throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", pair " + std::to_string(i));
        tape.backward(loss);
        loss_sum += lv;
      }
      const T scale = static_cast<T>(1.0 / (end - begin));
      for (auto& g : ps.grads)
        for (auto& x : g.data) {
          x *= scale;
          if (!std::isfinite(static_cast<double>(x)))
            throw TrainingDivergence("non-finite gradient at epoch " + std::to_string(epoch));
        }
      opt.step(ps, lr);
    }

    EpochRecord rec{epoch, loss_sum / n, lr};
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

template <typename T>
Tensor<T> fuse_images(const UNet<T>& net, const NoiseSchedule& ns, const Tensor<T>& img_a,
                      const Tensor<T>& img_b, uint64_t seed) {
  if (!img_a.same_shape(img_b)) throw std::invalid_argument("fuse_images: source shape mismatch");
  DenoiseFn<T> fn = [&](const Tensor<T>& ft, int t) { return net.forward(img_a, img_b, ft, t); };
  Rng rng(seed, derive_stream(seed, kFusePurpose));
  return sample_loop(ns, img_a.dims[0], img_a.dims[1], 1, fn, rng, /*clamp01=*/true);
}

#define REDIFFUSE_INSTANTIATE_TRAIN(T)                                                      \
  template std::vector<EpochRecord> train_model<T>(                                         \
      UNet<T>&, AdamOptimizer<T>&, const FusionDataset<T>&, const NoiseSchedule&,           \
      const TrainConfig&, int, const std::function<void(const EpochRecord&)>&);             \
  template Tensor<T> fuse_images<T>(const UNet<T>&, const NoiseSchedule&, const Tensor<T>&, \
                                    const Tensor<T>&, uint64_t);

REDIFFUSE_INSTANTIATE_TRAIN(float)
REDIFFUSE_INSTANTIATE_TRAIN(double)

}  // namespace rediffuse
