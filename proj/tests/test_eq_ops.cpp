#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rediffuse/eq_ops.hpp"
#include "rediffuse/group_action.hpp"
#include "rediffuse/kernels.hpp"
#include "rediffuse/rng.hpp"

using namespace rediffuse;

namespace {

template <typename T>
Tensor<T> random_tensor(std::initializer_list<int> shape, uint64_t seed) {
  Tensor<T> t(shape);
  Rng rng(seed);
  for (auto& x : t.data) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("quarter-turn tap realization is the expected permutation") {
  const auto& R = KernelRealization::get(4, 3);
  CHECK(R.exact);
  double base[9] = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  double out[9];
  R.apply(0, base, out);
  for (int i = 0; i < 9; ++i) CHECK(out[i] == base[i]);
  // One counterclockwise quarter turn of the tap grid
  //   0 1 2        2 5 8
  //   3 4 5  --->  1 4 7
  //   6 7 8        0 3 6
  R.apply(1, base, out);
  const double want[9] = {2, 5, 8, 1, 4, 7, 0, 3, 6};
  for (int i = 0; i < 9; ++i) CHECK(out[i] == want[i]);
  // Four quarter turns compose to the identity.
  double out2[9], out3[9], out4[9];
  R.apply(1, out, out2);
  R.apply(1, out2, out3);
  R.apply(1, out3, out4);
  for (int i = 0; i < 9; ++i) CHECK(out4[i] == base[i]);
}

TEST_CASE("order-8 realization: aligned copies are exact, identity is bit-exact") {
  const auto& R = KernelRealization::get(8, 3);
  CHECK_FALSE(R.exact);
  for (int j : {0, 2, 4, 6}) CHECK(R.aligned[j]);
  for (int j : {1, 3, 5, 7}) {
    CHECK_FALSE(R.aligned[j]);
    CHECK(R.S[j].size() == 81);
  }
  auto base = random_tensor<double>({9}, 77);
  double out[9];
  R.apply(0, base.ptr(), out);
  for (int i = 0; i < 9; ++i) CHECK(out[i] == base[i]);
  // j = 2 (a quarter turn) must match the order-4 permutation.
  const auto& R4 = KernelRealization::get(4, 3);
  double a[9], b[9];
  R.apply(2, base.ptr(), a);
  R4.apply(1, base.ptr(), b);
  for (int i = 0; i < 9; ++i) CHECK(a[i] == b[i]);
  // Rotation fixes the centre tap, so every realization keeps its value.
  for (int j = 1; j < 8; j += 2) {
    R.apply(j, base.ptr(), a);
    CHECK(a[4] == doctest::Approx(base[4]).epsilon(1e-8));
  }
}

TEST_CASE("realization transpose is the adjoint of the forward map") {
  for (int m : {4, 8}) {
    const auto& R = KernelRealization::get(m, 3);
    auto a = random_tensor<double>({9}, 101 + m);
    auto b = random_tensor<double>({9}, 202 + m);
    for (int j = 0; j < m; ++j) {
      double fwd[9];
      double bwd[9] = {0};
      R.apply(j, a.ptr(), fwd);
      R.apply_transpose_add(j, b.ptr(), bwd);
      double lhs = 0, rhs = 0;
      for (int i = 0; i < 9; ++i) {
        lhs += fwd[i] * b[i];
        rhs += a[i] * bwd[i];
      }
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("parameter counts: shared taps cost 1/m of an unconstrained conv") {
  EqConvDesc lift{ConvKind::Lift, 3, 8, 4, 3};
  CHECK(lift.param_count() == 8 * 3 * 9);
  EqConvDesc group{ConvKind::Group, 3, 8, 4, 3};
  CHECK(group.param_count() == 8 * 3 * 4 * 9);
  // An unconstrained conv on the unrolled m*C channels would need
  // (m*out) * (m*in) * p^2 weights = m times more.
  CHECK(4 * group.param_count() == size_t(4 * 8) * (4 * 3) * 9);
}

TEST_CASE("lifting conv with all-one taps sums the padded neighbourhood") {
  EqConvDesc d{ConvKind::Lift, 1, 2, 4, 3};
  Tensor<float> base({2, 1, 1, 9});
  for (auto& w : base.data) w = 1.0f;
  Tensor<float> img({6, 7, 1});
  for (auto& v : img.data) v = 0.5f;
  auto out = eq_conv_fwd(d, img, base);
  CHECK(out.dims == std::array<int, 4>{6, 7, 4, 2});
  for (int g = 0; g < 4; ++g)
    for (int o = 0; o < 2; ++o) {
      CHECK(out(2, 3, g, o) == doctest::Approx(4.5).epsilon(1e-6));  // interior: 9 taps
      CHECK(out(0, 0, g, o) == doctest::Approx(2.0).epsilon(1e-6));  // corner: 4 taps
      CHECK(out(0, 3, g, o) == doctest::Approx(3.0).epsilon(1e-6));  // edge: 6 taps
    }
}

TEST_CASE("order-1 lifting conv equals an ordinary convolution") {
  EqConvDesc d{ConvKind::Lift, 3, 5, 1, 3};
  auto base = random_tensor<double>({5, 3, 1, 9}, 7);
  auto img = random_tensor<double>({6, 5, 3}, 8);
  auto out = eq_conv_fwd(d, img, base);
  std::vector<double> wp;
  pack_conv_weights(d, base, wp);
  std::vector<double> direct(size_t(6) * 5 * 5);
  kernels::serial::conv2d_direct(img.ptr(), 6, 5, 3, 3, wp.data(), 5, direct.data());
  for (size_t i = 0; i < direct.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(direct[i]).epsilon(1e-12));
}

TEST_CASE("lifting conv commutes with rotation (exact group angles)") {
  for (int m : {1, 2, 4}) {
    RotationGroup grp(m);
    EqConvDesc d{ConvKind::Lift, 2, 3, m, 3};
    auto base = random_tensor<float>({3, 2, 1, 9}, 10 + m);
    auto img = random_tensor<float>({12, 12, 2}, 20 + m);
    auto field = eq_conv_fwd(d, img, base);
    for (int k = 0; k < m; ++k) {
      auto lhs = eq_conv_fwd(d, rotate_image(img, grp, k), base);
      auto rhs = rotate_field(field, grp, k);
      CHECK(max_abs_diff(lhs, rhs) <= 1e-5);
    }
  }
}

TEST_CASE("lifting conv commutes with rotation on non-square images") {
  RotationGroup grp(4);
  EqConvDesc d{ConvKind::Lift, 1, 2, 4, 3};
  auto base = random_tensor<double>({2, 1, 1, 9}, 31);
  auto img = random_tensor<double>({8, 6, 1}, 32);
  auto lhs = eq_conv_fwd(d, rotate_image(img, grp, 1), base);
  auto rhs = rotate_field(eq_conv_fwd(d, img, base), grp, 1);
  CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
}

TEST_CASE("group conv commutes with the regular representation") {
  RotationGroup grp(4);
  EqConvDesc d{ConvKind::Group, 2, 3, 4, 3};
  auto base = random_tensor<double>({3, 2, 4, 9}, 41);
  auto f = random_tensor<double>({10, 10, 4, 2}, 42);
  auto out = eq_conv_fwd(d, f, base);
  for (int k = 0; k < 4; ++k) {
    auto lhs = eq_conv_fwd(d, rotate_field(f, grp, k), base);
    auto rhs = rotate_field(out, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-10);
  }
}

TEST_CASE("group conv at order 8 commutes at grid-aligned angles") {
  RotationGroup grp(8);
  EqConvDesc d{ConvKind::Group, 2, 2, 8, 3};
  auto base = random_tensor<double>({2, 2, 8, 9}, 51);
  auto f = random_tensor<double>({10, 10, 8, 2}, 52);
  auto out = eq_conv_fwd(d, f, base);
  for (int k : {2, 4, 6}) {
    auto lhs = eq_conv_fwd(d, rotate_field(f, grp, k), base);
    auto rhs = rotate_field(out, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-9);
  }
}

TEST_CASE("1x1 group conv commutes with the regular representation") {
  RotationGroup grp(4);
  EqConvDesc d{ConvKind::Group, 3, 2, 4, 1};
  auto base = random_tensor<double>({2, 3, 4, 1}, 61);
  auto f = random_tensor<double>({6, 6, 4, 3}, 62);
  auto out = eq_conv_fwd(d, f, base);
  for (int k = 0; k < 4; ++k) {
    auto lhs = eq_conv_fwd(d, rotate_field(f, grp, k), base);
    auto rhs = rotate_field(out, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }
}

TEST_CASE("stacked lift + group conv stays equivariant") {
  RotationGroup grp(4);
  EqConvDesc dl{ConvKind::Lift, 1, 3, 4, 3};
  EqConvDesc dg{ConvKind::Group, 3, 2, 4, 3};
  auto bl = random_tensor<double>({3, 1, 1, 9}, 71);
  auto bg = random_tensor<double>({2, 3, 4, 9}, 72);
  auto img = random_tensor<double>({12, 12, 1}, 73);
  auto net = [&](const Tensor<double>& x) {
    return eq_conv_fwd(dg, silu(eq_conv_fwd(dl, x, bl)), bg);
  };
  auto out = net(img);
  for (int k = 0; k < 4; ++k) {
    auto lhs = net(rotate_image(img, grp, k));
    auto rhs = rotate_field(out, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-10);
  }
}

namespace {

// Scalar probe loss sum(out * G) for finite-difference checks.
double probe(const EqConvDesc& d, const Tensor<double>& in, const Tensor<double>& base,
             const Tensor<double>& G) {
  auto out = eq_conv_fwd(d, in, base);
  double s = 0;
  for (size_t i = 0; i < out.size(); ++i) s += out.data[i] * G.data[i];
  return s;
}

void check_conv_gradients(const EqConvDesc& d, Tensor<double> in, Tensor<double> base,
                          uint64_t seed) {
  auto out = eq_conv_fwd(d, in, base);
  auto G = random_tensor<double>({out.dims[0], out.dims[1], out.dims[2], out.dims[3]}, seed);
  Tensor<double> gin, gbase;
  eq_conv_bwd(d, in, base, G, &gin, &gbase);
  const double h = 1e-5;
  for (size_t i = 0; i < base.size(); i += 3) {
    auto bp = base, bm = base;
    bp.data[i] += h;
    bm.data[i] -= h;
    const double fd = (probe(d, in, bp, G) - probe(d, in, bm, G)) / (2 * h);
    CHECK(gbase.data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (size_t i = 0; i < in.size(); i += 5) {
    auto xp = in, xm = in;
    xp.data[i] += h;
    xm.data[i] -= h;
    const double fd = (probe(d, xp, base, G) - probe(d, xm, base, G)) / (2 * h);
    CHECK(gin.data[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

}  // namespace

TEST_CASE("conv gradients match finite differences (lift, group, 1x1, order 8)") {
  check_conv_gradients({ConvKind::Lift, 2, 3, 4, 3}, random_tensor<double>({6, 6, 2}, 81),
                       random_tensor<double>({3, 2, 1, 9}, 82), 83);
  check_conv_gradients({ConvKind::Group, 2, 2, 4, 3}, random_tensor<double>({6, 6, 4, 2}, 84),
                       random_tensor<double>({2, 2, 4, 9}, 85), 86);
  check_conv_gradients({ConvKind::Group, 2, 2, 4, 1}, random_tensor<double>({5, 5, 4, 2}, 87),
                       random_tensor<double>({2, 2, 4, 1}, 88), 89);
  check_conv_gradients({ConvKind::Group, 1, 1, 8, 3}, random_tensor<double>({6, 6, 8, 1}, 90),
                       random_tensor<double>({1, 1, 8, 9}, 91), 92);
}

TEST_CASE("gradient of an equivariant conv is itself equivariant") {
  // Rotating input and upstream gradient together must rotate the input
  // gradient and leave the shared tap gradient unchanged.
  RotationGroup grp(4);
  EqConvDesc d{ConvKind::Group, 2, 2, 4, 3};
  auto base = random_tensor<double>({2, 2, 4, 9}, 95);
  auto f = random_tensor<double>({8, 8, 4, 2}, 96);
  auto G = random_tensor<double>({8, 8, 4, 2}, 97);
  Tensor<double> gin0, gbase0;
  eq_conv_bwd(d, f, base, G, &gin0, &gbase0);
  for (int k = 1; k < 4; ++k) {
    Tensor<double> gin1, gbase1;
    eq_conv_bwd(d, rotate_field(f, grp, k), base, rotate_field(G, grp, k), &gin1, &gbase1);
    CHECK(max_abs_diff(gin1, rotate_field(gin0, grp, k)) <= 1e-10);
    CHECK(max_abs_diff(gbase1, gbase0) <= 1e-10);
  }
}

TEST_CASE("max pooling commutes exactly with quarter-turn field rotation") {
  RotationGroup grp(4);
  auto f = random_tensor<float>({8, 8, 4, 3}, 111);
  auto pooled = eq_maxpool<float>(f, nullptr);
  CHECK(pooled.dims == std::array<int, 4>{4, 4, 4, 3});
  for (int k = 0; k < 4; ++k) {
    auto lhs = eq_maxpool<float>(rotate_field(f, grp, k), nullptr);
    auto rhs = rotate_field(pooled, grp, k);
    REQUIRE(lhs.same_shape(rhs));
    for (size_t i = 0; i < lhs.size(); ++i) REQUIRE(lhs.data[i] == rhs.data[i]);
  }
}

TEST_CASE("upsampling commutes with quarter-turn field rotation") {
  RotationGroup grp(4);
  auto f = random_tensor<double>({6, 6, 4, 2}, 112);
  auto up = eq_upsample(f);
  CHECK(up.dims == std::array<int, 4>{12, 12, 4, 2});
  for (int k = 0; k < 4; ++k) {
    auto lhs = eq_upsample(rotate_field(f, grp, k));
    auto rhs = rotate_field(up, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }
}

TEST_CASE("group norm commutes with quarter-turn field rotation") {
  RotationGroup grp(4);
  auto f = random_tensor<double>({6, 6, 4, 4}, 113);
  auto gamma = random_tensor<double>({4}, 114);
  auto beta = random_tensor<double>({4}, 115);
  auto out = group_norm(f, 2, 1e-5, gamma, beta, nullptr);
  for (int k = 0; k < 4; ++k) {
    auto lhs = group_norm(rotate_field(f, grp, k), 2, 1e-5, gamma, beta, nullptr);
    auto rhs = rotate_field(out, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-10);
  }
}

TEST_CASE("silu commutes exactly with field rotation") {
  RotationGroup grp(4);
  auto f = random_tensor<float>({6, 6, 4, 2}, 116);
  auto out = silu(f);
  auto lhs = silu(rotate_field(f, grp, 1));
  auto rhs = rotate_field(out, grp, 1);
  for (size_t i = 0; i < lhs.size(); ++i) REQUIRE(lhs.data[i] == rhs.data[i]);
}

TEST_CASE("group-axis mean turns field rotation into image rotation") {
  RotationGroup grp(4);
  auto f = random_tensor<double>({6, 6, 4, 3}, 117);
  auto mean = group_mean(f);
  CHECK(mean.ndim == 3);
  for (int k = 0; k < 4; ++k) {
    auto lhs = group_mean(rotate_field(f, grp, k));
    auto rhs = rotate_image(mean, grp, k);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }
}

TEST_CASE("conv argument validation") {
  EqConvDesc d{ConvKind::Group, 2, 3, 4, 3};
  auto base = random_tensor<double>({3, 2, 4, 9}, 121);
  auto badbase = random_tensor<double>({3, 2, 2, 9}, 122);
  auto f = random_tensor<double>({6, 6, 4, 2}, 123);
  auto badf = random_tensor<double>({6, 6, 2, 2}, 124);
  CHECK_THROWS(eq_conv_fwd(d, f, badbase));
  CHECK_THROWS(eq_conv_fwd(d, badf, base));
}
