#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "rediffuse/datagen.hpp"
#include "rediffuse/group_action.hpp"
#include "rediffuse/metrics.hpp"
#include "rediffuse/rng.hpp"

using namespace rediffuse;

namespace {

Tensor<double> random_image(int n, uint64_t seed) {
  Tensor<double> img({n, n, 1});
  Rng rng(seed, 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

Tensor<double> structured_image(int n, uint64_t seed) {
  Rng rng(seed, 4);
  return render_ground_truth(n, Texture::Shapes, rng);
}

Tensor<double> add_noise(const Tensor<double>& img, double amp, uint64_t seed) {
  Tensor<double> out = img;
  Rng rng(seed, 5);
  for (auto& v : out.data) {
    v += rng.uniform(-amp, amp);
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return out;
}

}  // namespace

// --- MS-SSIM ---------------------------------------------------------------------

TEST_CASE("ms_ssim: identical images score exactly 1") {
  const Tensor<double> x = structured_image(64, 1);
  CHECK(ms_ssim(x, x, 3) == 1.0);
  CHECK(ms_ssim(x, x, 1) == 1.0);
  const Tensor<double> r = random_image(32, 2);
  CHECK(ms_ssim(r, r, 2) == 1.0);
}

TEST_CASE("ms_ssim: inverted half-and-half image scores low") {
  Tensor<double> x({64, 64, 1});
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) x(i, j, 0) = j < 32 ? 0.0 : 1.0;
  Tensor<double> inv = x;
  for (auto& v : inv.data) v = 1.0 - v;
  CHECK(ms_ssim(x, inv, 3) < 0.2);
}

TEST_CASE("ms_ssim: degradation orders scores") {
  const Tensor<double> x = structured_image(64, 3);
  const double mild = ms_ssim(x, add_noise(x, 0.05, 7), 3);
  const double harsh = ms_ssim(x, add_noise(x, 0.4, 7), 3);
  CHECK(mild > harsh);
  CHECK(mild < 1.0);
  CHECK(harsh > 0.0);
}

TEST_CASE("ms_ssim: undersized inputs are rejected with the minimum size") {
  const Tensor<double> x = random_image(32, 4);
  CHECK_THROWS_WITH_AS(ms_ssim(x, x, 3), doctest::Contains(">= 44"), std::invalid_argument);
  const Tensor<double> tiny = random_image(10, 4);
  CHECK_THROWS_AS(ms_ssim(tiny, tiny, 1), std::invalid_argument);
  const Tensor<double> y = random_image(64, 5);
  CHECK_THROWS_AS(ms_ssim(x, y, 2), std::invalid_argument);  // shape mismatch
}

TEST_CASE("fusion_ms_ssim: clamps the scale count and averages symmetrically") {
  const Tensor<double> a = structured_image(32, 6);
  const Tensor<double> b = structured_image(32, 7);
  const Tensor<double> f = structured_image(32, 8);
  // 32px admits 2 scales (needs 22), not 3 (needs 44)
  const double got = fusion_ms_ssim(f, a, b);
  const double want = 0.5 * (ms_ssim(f, a, 2) + ms_ssim(f, b, 2));
  CHECK(got == doctest::Approx(want).epsilon(1e-15));
  CHECK(fusion_ms_ssim(f, b, a) == got);

  // 64px admits the full 3 scales
  const Tensor<double> a64 = structured_image(64, 9);
  const Tensor<double> f64 = structured_image(64, 10);
  CHECK(fusion_ms_ssim(f64, a64, a64) == doctest::Approx(ms_ssim(f64, a64, 3)).epsilon(1e-15));
}

// --- QMI --------------------------------------------------------------------------

TEST_CASE("qmi: self-fusion reaches the maximum of 2") {
  const Tensor<double> x = structured_image(64, 11);
  CHECK(qmi(x, x, x) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("qmi: independent noise against structured sources scores low") {
  // Posterized primitive renders: structured, piecewise-constant sources.
  // (The plug-in MI estimate carries a finite-sample bias proportional to the
  // joint histogram support, so sources with many near-unique values — e.g.
  // anti-aliasing ramps — would inflate the score for unrelated noise.)
  const auto posterize = [](Tensor<double> img, int levels) {
    for (auto& v : img.data) v = std::round(v * (levels - 1)) / (levels - 1);
    return img;
  };
  Rng ra(50, 4), rb(150, 4);
  const Tensor<double> src_a = posterize(render_ground_truth(64, Texture::Shapes, ra), 16);
  const Tensor<double> src_b = posterize(render_ground_truth(64, Texture::Shapes, rb), 16);
  const Tensor<double> noise = random_image(64, 13);
  CHECK(qmi(noise, src_a, src_b) < 0.2);
}

TEST_CASE("qmi: constant images contribute a zero term") {
  const Tensor<double> x = structured_image(64, 14);
  Tensor<double> flat({64, 64, 1});
  for (auto& v : flat.data) v = 0.5;
  CHECK(qmi(flat, x, x) == 0.0);  // constant fused image: both terms vanish
  const double one_sided = qmi(x, flat, x);
  CHECK(one_sided > 0.0);  // the (source_b, fused) term survives
  CHECK(one_sided == doctest::Approx(qmi(x, x, x) / 2.0).epsilon(1e-9));
}

TEST_CASE("qmi: ordering favours the informative fusion") {
  const FusionPair p = gen_pair(15, 64, Texture::Mixed, 1.5);
  const double good = qmi(p.ground_truth, p.source_a, p.source_b);
  const double bad = qmi(random_image(64, 16), p.source_a, p.source_b);
  CHECK(good > bad);
}

// --- Qabf --------------------------------------------------------------------------

TEST_CASE("qabf: perfect edge transfer scores 1") {
  const Tensor<double> x = structured_image(64, 17);
  CHECK(qabf(x, x, x) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(qabf(x, x, x) == doctest::Approx(1.0).epsilon(1e-9));  // renormalized sigmoids are exact
}

TEST_CASE("qabf: stays in [0,1] and orders degradations") {
  const FusionPair p = gen_pair(18, 64, Texture::Shapes, 1.5);
  const double self_score = qabf(p.ground_truth, p.source_a, p.source_b);
  const double noise_score = qabf(random_image(64, 19), p.source_a, p.source_b);
  for (double q : {self_score, noise_score}) {
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
  }
  CHECK(self_score > noise_score);
}

TEST_CASE("qabf: tiny images are rejected") {
  const Tensor<double> x = random_image(2, 20);
  CHECK_THROWS_AS(qabf(x, x, x), std::invalid_argument);
}

// --- shared invariants ----------------------------------------------------------------

TEST_CASE("metrics: simultaneous quarter-turn rotation moves scores by <= 1e-6") {
  const FusionPair p = gen_pair(23, 64, Texture::Mixed, 1.2);
  const Tensor<double> fused = add_noise(p.ground_truth, 0.1, 24);

  const double ms0 = fusion_ms_ssim(fused, p.source_a, p.source_b);
  const double qmi0 = qmi(fused, p.source_a, p.source_b);
  const double qabf0 = qabf(fused, p.source_a, p.source_b);
  for (int q : {1, 2, 3}) {
    const Tensor<double> rf = rotate_image_quarter(fused, q);
    const Tensor<double> ra = rotate_image_quarter(p.source_a, q);
    const Tensor<double> rb = rotate_image_quarter(p.source_b, q);
    CHECK(std::abs(fusion_ms_ssim(rf, ra, rb) - ms0) <= 1e-6);
    CHECK(std::abs(qmi(rf, ra, rb) - qmi0) <= 1e-6);
    CHECK(std::abs(qabf(rf, ra, rb) - qabf0) <= 1e-6);
  }
}
