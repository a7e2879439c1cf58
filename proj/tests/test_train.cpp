#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>

#include "doctest.h"
#include "rediffuse/datagen.hpp"
#include "rediffuse/train.hpp"

using namespace rediffuse;

namespace {

// Tiny configuration so a full optimization run stays in the sub-second
// range: 16x16 pairs, single pooling stage, 8 base channels, 10 timesteps.
UNetConfig tiny_cfg() {
  UNetConfig cfg;
  cfg.size = 16;
  cfg.depth = 1;
  cfg.base = 8;
  cfg.m = 4;
  cfg.time_dim = 16;
  return cfg;
}

FusionDataset<float> tiny_dataset(int n, uint64_t seed0) {
  FusionDataset<float> ds;
  for (int i = 0; i < n; ++i) {
    FusionPair p = gen_pair(seed0 + static_cast<uint64_t>(i), 16, Texture::Mixed, 1.0);
    ds.gt.push_back(cast_tensor<float>(p.ground_truth));
    ds.img_a.push_back(cast_tensor<float>(p.source_a));
    ds.img_b.push_back(cast_tensor<float>(p.source_b));
  }
  return ds;
}

}  // namespace

TEST_CASE("learning-rate schedule decays by 0.99 every thousand epochs") {
  CHECK(lr_for_epoch(2e-4, 1) == 2e-4);
  CHECK(lr_for_epoch(2e-4, 999) == 2e-4);
  CHECK(lr_for_epoch(2e-4, 1000) == doctest::Approx(2e-4 * 0.99).epsilon(1e-12));
  CHECK(lr_for_epoch(2e-4, 2500) == doctest::Approx(2e-4 * 0.99 * 0.99).epsilon(1e-12));
}

TEST_CASE("short run drives the mean loss down and logs one record per epoch") {
  auto cfg = tiny_cfg();
  ParamStore<float> ps;
  Rng init(97, 1);
  UNet<float> net(cfg, &ps, &init);
  AdamOptimizer<float> opt;
  auto ds = tiny_dataset(4, 500);
  auto ns = NoiseSchedule::linear(10, 1e-4, 0.05);

  TrainConfig tc;
  tc.epochs = 20;
  tc.batch = 4;
  tc.lr = 2e-3;
  tc.seed = 7;
  int fired = 0;
  auto log = train_model(net, opt, ds, ns, tc, 0,
                         [&](const EpochRecord& r) { fired += (r.epoch >= 1); });

  REQUIRE(log.size() == 20);
  CHECK(fired == 20);
  CHECK(log.front().epoch == 1);
  CHECK(log.back().epoch == 20);
  CHECK(log.front().lr == 2e-3);
  for (const auto& r : log) CHECK(std::isfinite(r.mean_loss));
  // Averaged over the last five epochs to smooth the per-epoch (t, eps) noise.
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += log[i].mean_loss;
    tail += log[15 + i].mean_loss;
  }
  CHECK(tail < head);
}

TEST_CASE("resumed training reproduces the uninterrupted trajectory exactly") {
  auto cfg = tiny_cfg();
  auto ds = tiny_dataset(3, 800);
  auto ns = NoiseSchedule::linear(8, 1e-4, 0.05);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch = 2;
  tc.lr = 1e-3;
  tc.seed = 11;

  // One uninterrupted run.
  ParamStore<float> ps1;
  Rng init1(31, 1);
  UNet<float> net1(cfg, &ps1, &init1);
  AdamOptimizer<float> opt1;
  auto log1 = train_model(net1, opt1, ds, ns, tc, 0);

  // Same run split at epoch 3 (same store and optimizer carried over).
  ParamStore<float> ps2;
  Rng init2(31, 1);
  UNet<float> net2(cfg, &ps2, &init2);
  AdamOptimizer<float> opt2;
  TrainConfig first = tc;
  first.epochs = 3;
  auto log2a = train_model(net2, opt2, ds, ns, first, 0);
  auto log2b = train_model(net2, opt2, ds, ns, tc, 3);

  REQUIRE(log1.size() == 6);
  REQUIRE(log2a.size() == 3);
  REQUIRE(log2b.size() == 3);
  for (int e = 0; e < 3; ++e) CHECK(log1[e].mean_loss == log2a[e].mean_loss);
  for (int e = 0; e < 3; ++e) CHECK(log1[3 + e].mean_loss == log2b[e].mean_loss);
  for (int p = 0; p < ps1.count(); ++p)
    for (size_t i = 0; i < ps1.values[p].size(); ++i)
      CHECK(ps1.values[p].data[i] == ps2.values[p].data[i]);
}

TEST_CASE("identical seeds give bit-identical loss trajectories") {
  auto cfg = tiny_cfg();
  auto ds = tiny_dataset(2, 900);
  auto ns = NoiseSchedule::linear(5, 1e-4, 0.05);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 2;
  tc.seed = 19;

  std::vector<double> losses[2];
  for (int run = 0; run < 2; ++run) {
    ParamStore<float> ps;
    Rng init(55, 1);
    UNet<float> net(cfg, &ps, &init);
    AdamOptimizer<float> opt;
    for (const auto& r : train_model(net, opt, ds, ns, tc, 0)) losses[run].push_back(r.mean_loss);
  }
  CHECK(losses[0] == losses[1]);
}

TEST_CASE("a parameter blown up to infinity aborts with a divergence error") {
  auto cfg = tiny_cfg();
  ParamStore<float> ps;
  Rng init(77, 1);
  UNet<float> net(cfg, &ps, &init);
  ps.values[0].data[0] = std::numeric_limits<float>::infinity();
  AdamOptimizer<float> opt;
  auto ds = tiny_dataset(1, 950);
  auto ns = NoiseSchedule::linear(5, 1e-4, 0.05);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 1;
  CHECK_THROWS_AS(train_model(net, opt, ds, ns, tc, 0), TrainingDivergence);
}

TEST_CASE("empty dataset and bad batch size are rejected") {
  auto cfg = tiny_cfg();
  ParamStore<float> ps;
  Rng init(78, 1);
  UNet<float> net(cfg, &ps, &init);
  AdamOptimizer<float> opt;
  auto ns = NoiseSchedule::linear(5, 1e-4, 0.05);
  FusionDataset<float> empty;
  TrainConfig tc;
  CHECK_THROWS_AS(train_model(net, opt, empty, ns, tc, 0), std::invalid_argument);
  auto ds = tiny_dataset(1, 960);
  tc.batch = 0;
  CHECK_THROWS_AS(train_model(net, opt, ds, ns, tc, 0), std::invalid_argument);
}

TEST_CASE("fusion sampler is deterministic in the seed and bounded in [0, 1]") {
  auto cfg = tiny_cfg();
  ParamStore<float> ps;
  Rng init(42, 1);
  UNet<float> net(cfg, &ps, &init);
  auto ns = NoiseSchedule::linear(6, 1e-4, 0.05);
  FusionPair p = gen_pair(970, 16, Texture::Shapes, 1.0);
  auto a = cast_tensor<float>(p.source_a);
  auto b = cast_tensor<float>(p.source_b);

  auto f1 = fuse_images(net, ns, a, b, 123);
  auto f2 = fuse_images(net, ns, a, b, 123);
  auto f3 = fuse_images(net, ns, a, b, 124);
  CHECK(max_abs_diff(f1, f2) == 0.0);
  CHECK(max_abs_diff(f1, f3) != 0.0);
  REQUIRE(f1.ndim == 3);
  CHECK(f1.dims[0] == 16);
  CHECK(f1.dims[1] == 16);
  CHECK(f1.dims[2] == 1);
  for (float v : f1.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}
