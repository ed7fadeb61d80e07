#include <cmath>

#include "doctest.h"
#include "eolt/errors.hpp"
#include "eolt/gradcheck.hpp"
#include "eolt/io.hpp"
#include "eolt/models.hpp"
#include "eolt/transforms.hpp"
#include "helpers.hpp"

using namespace eolt;
using eolt::testing::random_image;

TEST_CASE("swap model is deterministic and range-bounded") {
  const Tensor x = random_image(32, 32, 1);
  for (SwapVariant v : {SwapVariant::toy, SwapVariant::blur_bottleneck}) {
    const SwapModel a(3, v), b(3, v);
    const Tensor ya = a(x);
    CHECK(ya == a(x));
    CHECK(ya == b(x));
    CHECK(ya.same_shape(x));
    for (double p : ya.values()) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
  CHECK_FALSE(SwapModel(3)(x) == SwapModel(4)(x));
}

TEST_CASE("swap model VJP matches finite differences on 3x16x16") {
  const Tensor x = random_image(16, 16, 2);
  for (SwapVariant v : {SwapVariant::toy, SwapVariant::blur_bottleneck}) {
    const SwapModel model(5, v);
    const auto r = finite_diff_check(model, x);
    INFO(model.name());
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("swap model rejects unsupported sizes") {
  const SwapModel model(0);
  CHECK_THROWS_AS(model(Tensor({3, 30, 32}, 0.5)), UnsupportedSizeError);
  CHECK_THROWS_AS(model(Tensor({3, 4, 4}, 0.5)), UnsupportedSizeError);
}

TEST_CASE("swap ignores the reserved target input") {
  const SwapModel model(1);
  const Tensor x = random_image(16, 16, 3);
  const Tensor t = random_image(16, 16, 4);
  CHECK(model.swap(x, &t) == model.swap(x));
}

TEST_CASE("embedder produces deterministic unit vectors") {
  const IdentityEmbedder emb(7);
  const auto imgs = synth_images(4, 32, 32, 11);
  for (const auto& rec : imgs) {
    const Tensor e = emb.embed(rec.pixels);
    CHECK(e.size() == IdentityEmbedder::kDim);
    CHECK(std::abs(l2_norm(e) - 1.0) <= 1e-9);
    CHECK(e == emb.embed(rec.pixels));
  }
  Rng rng(0);
  const Tensor& x = imgs[0].pixels;
  CHECK(emb.embed(x) != emb.embed(apply_image(x, {TransformId::hflip, 0}, rng)));
  CHECK(finite_diff_check(emb, random_image(16, 16, 5)).max_rel_error <= 1e-5);
}

TEST_CASE("cosine similarity examples") {
  CHECK(cosine(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(cosine(Tensor::vector({1, 0}), Tensor::vector({s, s})) == doctest::Approx(0.7071).epsilon(1e-4));
  const IdentityEmbedder emb(2);
  const Tensor a = random_image(32, 32, 6), b = random_image(32, 32, 7);
  CHECK(id_similarity(emb, a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(id_similarity(emb, a, b) - id_similarity(emb, b, a)) <= 1e-12);
}

TEST_CASE("model descriptor records name, seed and precision") {
  const SwapModel m(9, SwapVariant::blur_bottleneck, Precision::f32);
  CHECK(m.descriptor().str() == "blur-bottleneck/seed=9/f32");
}
