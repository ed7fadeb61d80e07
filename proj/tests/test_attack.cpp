#include <cmath>

#include "doctest.h"
#include "eolt/attack.hpp"
#include "eolt/models.hpp"
#include "helpers.hpp"

using namespace eolt;
using eolt::testing::random_image;

namespace {

class Identity : public DiffStage {
 public:
  std::string name() const override { return "identity"; }
  Tensor forward(const Tensor& x, Context&) const override { return x; }
  Tensor vjp(const Context&, const Tensor& g) const override { return g; }
};

bool feasible(const Tensor& delta, const Tensor& x, double eps) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (std::abs(delta[i]) > eps + 1e-9) return false;
    const double v = x[i] + delta[i];
    if (v < 0.0 || v > 1.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adversarial loss examples") {
  const Identity id;
  const Tensor a({3, 2, 2}, 0.4);
  CHECK(adv_loss(id, a, a) == 0.0);
  CHECK(adv_loss(id, a, a + Tensor({3, 2, 2}, 0.1)) == doctest::Approx(0.01).epsilon(1e-12));
  const Tensor x = Tensor::vector({0.5, 0.5, 0.5});
  const Tensor d = Tensor::vector({0.1, 0.0, -0.1});
  CHECK(adv_loss(id, x, x + d) == doctest::Approx(0.02 / 3).epsilon(1e-12));
  CHECK_THROWS(adv_loss(id, x, Tensor({2})));
}

TEST_CASE("budget validation") {
  CHECK_NOTHROW(AttackBudget{}.validate());
  CHECK_THROWS(AttackBudget{0.05, 0.1, 10}.validate());
  CHECK_THROWS(AttackBudget{0.05, 0.0, 10}.validate());
  CHECK_THROWS(AttackBudget{0.05, 0.01, 0}.validate());
  CHECK_THROWS(AttackBudget{1.5, 0.01, 10}.validate());
}

TEST_CASE("projection clips to the ball and the pixel box") {
  Tensor delta = Tensor::vector({0.08, -0.08, 0.03});
  const Tensor x = Tensor::vector({0.5, 0.5, 0.99});
  project(delta, x, 0.05);
  CHECK(delta[0] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(delta[1] == doctest::Approx(-0.05).epsilon(1e-12));
  CHECK(delta[2] == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("fgsm on a linear model steps by epsilon along the gradient sign") {
  const LinearToyModel model({1.0, -2.0, 0.5}, {0.0, 0.1, 0.2});
  const Tensor x = random_image(4, 4, 1);
  Rng rng(2);
  const AttackBudget budget{0.05, 0.01, 1, InitMode::uniform};
  const auto r = fgsm(model, x, TransformSampler::none(), budget, rng);
  CHECK(feasible(r.delta, x, 0.05));
  for (double d : r.delta.values()) CHECK(std::abs(std::abs(d) - 0.05) <= 1e-12);

  Rng rng0(2);
  const auto z = fgsm(model, x, TransformSampler::none(), {0.05, 0.01, 1, InitMode::zero}, rng0);
  CHECK(max_abs(z.delta) == 0.0);
}

TEST_CASE("pgd one step from zero moves by alpha") {
  // Brightening makes F(t(x)) exceed F(x), so the gradient sign is +1 everywhere.
  const Identity id;
  const Tensor x({3, 1, 1}, 0.4);
  Rng rng(0);
  const auto r = pgd(id, x, TransformSampler::fixed({TransformId::brightness, 8}), {0.05, 0.01, 1, InitMode::zero},
                     rng);
  for (double d : r.delta.values()) CHECK(d == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("pgd saturates at epsilon when alpha * N >= epsilon") {
  const Identity id;
  const Tensor x({3, 1, 1}, 0.4);
  Rng rng(0);
  const auto r = pgd(id, x, TransformSampler::fixed({TransformId::brightness, 8}), {0.05, 0.01, 8, InitMode::zero},
                     rng);
  for (double d : r.delta.values()) CHECK(d == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("pgd on the linear toy saturates at epsilon with a non-decreasing trace") {
  const LinearToyModel model({1.5, -0.7, 2.0}, {0.1, 0.0, -0.1});
  const Tensor x = random_image(8, 8, 3);
  const AttackBudget budget{0.05, 0.01, 150, InitMode::uniform};
  Rng rng(4);
  const auto r = pgd(model, x, TransformSampler::none(), budget, rng);
  CHECK(r.loss_trace.size() == 151);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] >= r.loss_trace[i - 1]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool boxed = x[i] + r.delta[i] <= 0.0 || x[i] + r.delta[i] >= 1.0;
    if (!boxed) CHECK(std::abs(std::abs(r.delta[i]) - 0.05) <= 1e-12);
  }
  Rng rng2(4);
  const auto f = fgsm(model, x, TransformSampler::none(), budget, rng2);
  CHECK(r.final_loss() >= f.final_loss());
}

TEST_CASE("pgd stays feasible every step on the surrogate with transforms") {
  const SwapModel model(0, SwapVariant::blur_bottleneck);
  const Tensor x = random_image(16, 16, 5);
  const AttackBudget budget{0.05, 0.01, 10};
  Rng rng(6);
  bool ok = true;
  const auto sampler = TransformSampler::uniform({all_transforms().begin(), all_transforms().end()}, 2);
  const auto r = pgd(model, x, sampler, budget, rng,
                     [&](int, const Tensor& d, double) { ok = ok && feasible(d, x, budget.epsilon); });
  CHECK(ok);
  CHECK(r.loss_trace.size() == 11);
  CHECK(r.x_adv == ops::clamp01(x + r.delta));
}

TEST_CASE("eot gradient conventions") {
  const SwapModel model(1);
  const Tensor x = random_image(16, 16, 7);
  Rng drng(8);
  Tensor delta = eolt::testing::random_tensor(x.shape(), drng, -0.05, 0.05);
  project(delta, x, 0.05);
  Rng r1(9), r2(9);
  const Tensor plain = eot_gradient(model, x, delta, TransformSampler::none(), r1);
  const Tensor clean = model(x);
  const auto direct = adv_loss_grad(model, clean, x + delta, std::nullopt, r2);
  CHECK(plain == direct.grad);

  const SubPolicy a{TransformId::gaussblur, 3}, b{TransformId::hflip, 0};
  Rng r3(1), r4(1);
  const Tensor strat = eot_gradient(model, x, delta, TransformSampler::stratified({a, b}), r3);
  const Tensor ga = adv_loss_grad(model, clean, x + delta, a, r4).grad;
  const Tensor gb = adv_loss_grad(model, clean, x + delta, b, r4).grad;
  CHECK(max_abs(strat - 0.5 * (ga + gb)) <= 1e-15);

  // An identity-like fixed sub-policy reproduces the plain gradient.
  Rng r5(2);
  const Tensor ident = eot_gradient(model, x, delta, TransformSampler::fixed({TransformId::gamma, 4}, 3), r5);
  CHECK(max_abs(ident - plain) <= 1e-15);
}

TEST_CASE("eot gradient variance shrinks with more samples") {
  const SwapModel model(2);
  const Tensor x = random_image(16, 16, 10);
  Rng drng(11);
  Tensor delta = eolt::testing::random_tensor(x.shape(), drng, -0.05, 0.05);
  project(delta, x, 0.05);
  const std::vector<TransformId> set = {TransformId::normal, TransformId::gaussblur, TransformId::hflip,
                                        TransformId::contrast};
  std::vector<double> spread;
  for (std::size_t m : {1u, 4u, 16u}) {
    const auto sampler = TransformSampler::uniform(set, m);
    std::vector<Tensor> grads;
    for (std::uint64_t s = 0; s < 24; ++s) {
      Rng rng(100 + s);
      grads.push_back(eot_gradient(model, x, delta, sampler, rng));
    }
    Tensor mean_g = Tensor::zeros_like(x);
    for (const auto& g : grads) mean_g.axpy(1.0 / grads.size(), g);
    double var = 0.0;
    for (const auto& g : grads) var += dot(g - mean_g, g - mean_g);
    spread.push_back(var / grads.size());
  }
  CHECK(spread[1] < spread[0]);
  CHECK(spread[2] < spread[1]);
}

TEST_CASE("samplers draw the requested number of sub-policies") {
  Rng rng(3);
  CHECK(TransformSampler::none(3).draw(rng).size() == 3);
  for (const auto& sp : TransformSampler::none(2).draw(rng)) CHECK_FALSE(sp.has_value());
  const auto u = TransformSampler::uniform({TransformId::jpeg}, 5).draw(rng);
  CHECK(u.size() == 5);
  for (const auto& sp : u) CHECK(sp->transform == TransformId::jpeg);
}
