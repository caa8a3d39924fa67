#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "ecgcmr/cmr.hpp"
#include "ecgcmr/error.hpp"

using namespace ecgcmr;
using namespace ecgcmr::cmr;

namespace {

CmrClip random_clip(int t, int h, int w, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  CmrClip c(t, h, w, View::short_axis);
  for (auto& v : c.pixels) v = u(rng);
  return c;
}

CmrClip constant_clip(int t, int h, int w, float v) {
  CmrClip c(t, h, w, View::short_axis);
  std::fill(c.pixels.begin(), c.pixels.end(), v);
  return c;
}

}  // namespace

TEST_CASE("middle slice uses floor(S/2)") {
  for (auto [s, expect] : std::vector<std::pair<int, int>>{{5, 2}, {1, 0}, {4, 2}}) {
    CmrVolume vol(4, 4, s, 3);
    for (int z = 0; z < s; ++z)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          for (int t = 0; t < 3; ++t) vol.at(y, x, z, t) = static_cast<float>(z * 100 + t);
    const auto clip = select_mid_slice(vol);
    CHECK(clip.frames == 3);
    CHECK(clip.at(2, 1, 1) == static_cast<float>(expect * 100 + 2));
  }
}

TEST_CASE("canonical crops are 80x80 and 96x96") {
  HeartMask sa(128, 128, View::short_axis), la(128, 128, View::long_axis);
  sa.at(60, 70) = 1;
  la.at(64, 64) = 1;
  const auto c_sa = crop_to_heart(random_clip(2, 128, 128, 1), sa, 80);
  const auto c_la = crop_to_heart(random_clip(2, 128, 128, 2), la, 96);
  CHECK(c_sa.height == 80);
  CHECK(c_sa.width == 80);
  CHECK(c_la.height == 96);
  CHECK(c_la.width == 96);
}

TEST_CASE("single-pixel mask at the center gives the center +-4 window") {
  HeartMask m(32, 32, View::short_axis);
  m.at(16, 16) = 1;
  const auto w = heart_crop_window(m, 8);
  CHECK(w.top == 12);
  CHECK(w.left == 12);
  CHECK(w.size == 8);
  const auto clip = random_clip(2, 32, 32, 4);
  const auto c = crop_to_heart(clip, m, 8);
  for (int t = 0; t < 2; ++t)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) REQUIRE(c.at(t, y, x) == clip.at(t, 12 + y, 12 + x));
  HeartMask empty(8, 8, View::short_axis);
  CHECK_THROWS_AS(heart_crop_window(empty, 4), Error);
}

TEST_CASE("crop near the border zero-fills outside the image") {
  HeartMask m(16, 16, View::short_axis);
  m.at(0, 0) = 1;
  const auto c = crop_to_heart(constant_clip(1, 16, 16, 0.7f), m, 8);
  CHECK(c.at(0, 0, 0) == 0.0f);
  CHECK(c.at(0, 7, 7) == 0.7f);
}

TEST_CASE("normalization constants") {
  const auto half = normalize_resize(constant_clip(3, 10, 10, 0.5f), 6);
  for (float v : half.pixels) CHECK(v == 0.0f);
  const auto one = normalize_resize(constant_clip(3, 10, 10, 1.0f), 6);
  for (float v : one.pixels) CHECK(v == 1.0f);
  std::size_t clamped = 0;
  normalize_resize(constant_clip(1, 4, 4, 1.5f), 4, &clamped);
  CHECK(clamped == 16);
}

TEST_CASE("bilinear resize of a 2x2 checkerboard matches direct evaluation") {
  const std::vector<float> board = {0.0f, 1.0f, 1.0f, 0.0f};
  const std::vector<double> ref_img = {0.0, 1.0, 1.0, 0.0};
  const auto out = resize_bilinear(board.data(), 2, 2, 4, 4);
  REQUIRE(out.size() == 16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(out[y * 4 + x] == doctest::Approx(oracle::bilinear_at(ref_img, 2, 2, 4, 4, y, x)));
  CHECK(out[0] == 0.0f);
  CHECK(out[1] == doctest::Approx(0.25));
  CHECK(out[5] == doctest::Approx(0.375));
}

TEST_CASE("identity augmentation equals normalize_resize") {
  AugmentPolicy off;
  off.max_rotation_deg = 0.0;
  off.hflip_prob = off.vflip_prob = 0.0;
  off.scale_min = off.scale_max = 1.0;
  off.aspect_min = off.aspect_max = 1.0;
  const auto clip = random_clip(3, 20, 20, 7);
  const auto ref = normalize_resize(clip, 16);
  for (std::uint64_t seed : {0u, 3u}) CHECK(augment_cmr(clip, seed, off, 16).pixels == ref.pixels);
}

TEST_CASE("flips are involutions and rotation by zero is exact") {
  const auto clip = random_clip(2, 9, 7, 5);
  CHECK(hflip(hflip(clip)).pixels == clip.pixels);
  CHECK(vflip(vflip(clip)).pixels == clip.pixels);
  CHECK(hflip(clip).at(1, 2, 0) == clip.at(1, 2, 6));
  CHECK(rotate(clip, 0.0).pixels == clip.pixels);
}

TEST_CASE("constant 0.5 clips normalize to zero under any geometry") {
  AugmentPolicy wild;
  wild.max_rotation_deg = 45.0;
  wild.hflip_prob = wild.vflip_prob = 1.0;
  const auto clip = constant_clip(4, 24, 24, 0.5f);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto out = augment_cmr(clip, seed, wild, 16);
    for (float v : out.pixels) REQUIRE(std::abs(v) < 1e-6f);
  }
}

TEST_CASE("one transform is shared by every frame") {
  CmrClip clip(3, 16, 16, View::short_axis);
  const auto base = random_clip(1, 16, 16, 9);
  for (int t = 0; t < 3; ++t) std::copy(base.pixels.begin(), base.pixels.end(), clip.frame(t).begin());
  const auto out = augment_cmr(clip, 42, AugmentPolicy{}, 12);
  for (std::size_t i = 0; i < out.frame_size(); ++i) {
    REQUIRE(out.frame(0)[i] == out.frame(1)[i]);
    REQUIRE(out.frame(0)[i] == out.frame(2)[i]);
  }
}

TEST_CASE("evaluation path is normalize_resize only") {
  AugmentPolicy wild;
  wild.hflip_prob = 1.0;
  const auto clip = random_clip(2, 20, 20, 11);
  const auto ref = normalize_resize(clip, 16);
  CHECK(prepare_for_model(clip, Mode::eval, 1, wild, 16).pixels == ref.pixels);
  CHECK(prepare_for_model(clip, Mode::train, 1, wild, 16).pixels != ref.pixels);
}

TEST_CASE("policy validation") {
  AugmentPolicy p;
  p.hflip_prob = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  AugmentPolicy q;
  q.scale_min = 1.2;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}
