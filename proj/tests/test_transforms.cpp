#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "eolt/errors.hpp"
#include "eolt/gradcheck.hpp"
#include "eolt/io.hpp"
#include "eolt/transforms.hpp"
#include "helpers.hpp"

using namespace eolt;
using eolt::testing::random_image;

TEST_CASE("catalog encode and decode") {
  const Catalog cat({TransformId::normal, TransformId::hsv, TransformId::gaussblur});
  const SubPolicy sp = cat.decode(13);
  CHECK(sp.transform == TransformId::hsv);
  CHECK(sp.magnitude == 4);
  CHECK(cat.decode(0) == SubPolicy{TransformId::normal, 0});
  for (std::size_t i = 0; i < cat.logit_count(); ++i) CHECK(cat.encode(cat.decode(i)) == i);
  CHECK_THROWS(cat.decode(cat.logit_count()));

  const Catalog nine({TransformId::normal, TransformId::uniform, TransformId::hsv, TransformId::lab,
                      TransformId::boxblur, TransformId::gaussblur, TransformId::jpeg, TransformId::hflip,
                      TransformId::contrast});
  CHECK(nine.logit_count() == 81);
  CHECK(Catalog::full().logit_count() == 270);
}

TEST_CASE("thirty transforms in six categories") {
  CHECK(all_transforms().size() == 30);
  const std::array<std::size_t, 6> expect = {6, 5, 4, 7, 3, 5};
  for (std::size_t c = 0; c < 6; ++c) CHECK(transforms_in(kCategories[c]).size() == expect[c]);
  for (TransformId id : all_transforms()) CHECK(parse_transform(transform_name(id)) == id);
  CHECK_FALSE(parse_transform("sepia").has_value());
}

TEST_CASE("flips are involutions") {
  const Tensor x = random_image(9, 7, 1);
  Rng rng(0);
  for (TransformId id : {TransformId::hflip, TransformId::vflip}) {
    for (int m = 0; m < kMagnitudes; ++m) {
      const Tensor once = apply_image(x, {id, m}, rng);
      CHECK_FALSE(once == x);
      CHECK(apply_image(once, {id, m}, rng) == x);
    }
  }
}

TEST_CASE("boxblur fixes a constant image") {
  const Tensor x({3, 16, 16}, 0.37);
  Rng rng(0);
  for (int m = 0; m < kMagnitudes; ++m)
    CHECK(max_abs(apply_image(x, {TransformId::boxblur, m}, rng) - x) <= 1e-15);
}

TEST_CASE("gamma, brightness and identity-like magnitudes") {
  const Tensor x = random_image(8, 8, 2);
  Rng rng(0);
  CHECK(max_abs(apply_image(x, {TransformId::gamma, 4}, rng) - x) == 0.0);
  CHECK(max_abs(apply_image(x, {TransformId::brightness, 4}, rng) - x) == 0.0);
}

TEST_CASE("graymix VJP is the transposed linear map") {
  const Tensor x = random_image(6, 6, 3);
  Rng rng(4);
  const Tensor g = eolt::testing::random_tensor({3, 6, 6}, rng, -1, 1);
  for (int m : {0, 4, 8}) {
    const double w = 0.1 * (m + 1);
    const auto out = apply(x, {TransformId::graymix, m}, rng);
    const Tensor gi = vjp(out.ctx, g);
    const double luma[3] = {0.299, 0.587, 0.114};
    for (std::size_t p = 0; p < 36; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double expect = (1 - w) * g[c * 36 + p] + w * luma[c] * (g[p] + g[36 + p] + g[72 + p]);
        CHECK(gi[c * 36 + p] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("salt VJP zeroes replaced pixels") {
  const Tensor x = random_image(16, 16, 5);
  Rng rng(6);
  const auto out = apply(x, {TransformId::salt, 8}, rng);
  const Tensor& mask = out.ctx.draw;
  REQUIRE(mask.shape() == Shape{16, 16});
  CHECK(sum(mask) > 0.0);
  const Tensor g({3, 16, 16}, 1.0);
  const Tensor gi = vjp(out.ctx, g);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 256; ++p) {
      CHECK(gi[c * 256 + p] == 1.0 - mask[p]);
      if (mask[p] != 0.0) CHECK(out.image[c * 256 + p] == 1.0);
    }
}

TEST_CASE("gaussblur strength grows with magnitude") {
  const auto imgs = synth_images(4, 32, 32, 7);
  Rng rng(0);
  for (const auto& rec : imgs) {
    double prev = -1.0;
    for (int m = 0; m < kMagnitudes; ++m) {
      const Tensor y = apply_image(rec.pixels, {TransformId::gaussblur, m}, rng);
      double mad = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) mad += std::abs(y[i] - rec.pixels[i]);
      mad /= static_cast<double>(y.size());
      CHECK(mad >= prev);
      prev = mad;
    }
  }
}

TEST_CASE("every sub-policy yields output in [0,1] and replays deterministically") {
  const Tensor x = random_image(16, 16, 8);
  for (TransformId id : all_transforms()) {
    for (int m = 0; m < kMagnitudes; ++m) {
      Rng a(42), b(42);
      const auto ya = apply(x, {id, m}, a);
      const auto yb = apply(x, {id, m}, b);
      CHECK(ya.image == yb.image);
      CHECK(apply_with_draw(x, {id, m}, ya.ctx.draw).image == ya.image);
      const auto [lo, hi] = std::minmax_element(ya.image.values().begin(), ya.image.values().end());
      CHECK(*lo >= 0.0);
      CHECK(*hi <= 1.0);
    }
  }
}

TEST_CASE("exact transform VJPs agree with finite differences") {
  const Tensor x = random_image(16, 16, 9);
  Rng rng(10);
  for (TransformId id : all_transforms()) {
    for (int m : {0, 4, 8}) {
      const auto stage = TransformStage::sampled({id, m}, x.shape(), rng);
      const auto r = finite_diff_check(stage, x);
      INFO(stage.name());
      if (is_straight_through(id)) {
        CHECK(r.skipped);
      } else {
        CHECK(r.max_rel_error <= 1e-5);
      }
    }
  }
}

TEST_CASE("undersized images are rejected with the transform's name") {
  Rng rng(0);
  const Tensor tiny({3, 4, 4}, 0.5);
  bool threw = false;
  try {
    apply(tiny, {TransformId::boxblur, 8}, rng);
  } catch (const UnsupportedSizeError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("boxblur") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("transformation splits") {
  const Split intra = build_split(SplitKind::intra);
  CHECK(intra.train.size() == 12);
  CHECK(intra.val.size() == 6);
  CHECK(intra.test.size() == 12);
  std::set<TransformId> seen;
  for (const auto* set : {&intra.train, &intra.val, &intra.test}) seen.insert(set->begin(), set->end());
  CHECK(seen.size() == 30);

  const Split inter = build_split(SplitKind::inter);
  CHECK(inter.train.size() == 11);
  CHECK(inter.test.size() == 8);
  for (TransformId id : inter.test) {
    const Category c = category_of(id);
    CHECK((c == Category::color_space || c == Category::compression));
  }

  const Split all = build_split(SplitKind::all_seen);
  CHECK(all.train.size() == 30);
  CHECK(all.train == all.val);
  CHECK(all.val == all.test);
}
