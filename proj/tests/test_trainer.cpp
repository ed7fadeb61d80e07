#include <cmath>
#include <numeric>

#include "doctest.h"
#include "eolt/errors.hpp"
#include "eolt/io.hpp"
#include "eolt/models.hpp"
#include "eolt/ops.hpp"
#include "eolt/trainer.hpp"
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

const Catalog kThree({TransformId::normal, TransformId::gaussblur, TransformId::hflip});

// Fraction of the trajectory's draws that hit the rewarded sub-policy.
RolloutFn bandit(std::size_t winner) {
  return [winner](std::size_t, const Trajectory& t, Rng&, const Rng&) {
    double hits = 0.0;
    for (std::size_t i : t.indices) hits += i == winner ? 1.0 : 0.0;
    return hits / static_cast<double>(t.indices.size());
  };
}

}  // namespace

TEST_CASE("reward examples") {
  const Identity id;
  const Tensor x = Tensor({3, 1, 1}, 0.5);
  const std::vector<TransformId> gamma = {TransformId::gamma};
  CHECK(compute_reward(id, x, x, gamma, Rng(0), 4) == 0.0);

  Tensor adv = x;
  adv[0] += 0.1;
  adv[2] -= 0.1;
  CHECK(compute_reward(id, x, adv, gamma, Rng(0), 4) == doctest::Approx(0.006667).epsilon(1e-4));

  const Tensor img = random_image(16, 16, 1);
  const Tensor img_adv = ops::clamp01(img + Tensor(img.shape(), 0.03));
  const std::vector<TransformId> set = {TransformId::gaussblur, TransformId::hflip, TransformId::contrast};
  double manual = 0.0;
  for (TransformId t : set) manual += compute_reward(id, img, img_adv, std::vector<TransformId>{t}, Rng(3), 4);
  CHECK(compute_reward(id, img, img_adv, set, Rng(3), 4) == doctest::Approx(manual / 3).epsilon(1e-12));
  CHECK_THROWS(compute_reward(id, img, img_adv, std::vector<TransformId>{}, Rng(0), 4));
}

TEST_CASE("advantages are centred") {
  const auto a = advantages(std::vector<double>{1, 2, 3});
  CHECK(a == std::vector<double>{-1, 0, 1});
  for (double v : advantages(std::vector<double>{0.4, 0.4, 0.4})) CHECK(v == 0.0);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(1 + rng.below(20));
    for (double& v : r) v = rng.uniform(-100, 100);
    const auto adv = advantages(r);
    CHECK(std::abs(std::accumulate(adv.begin(), adv.end(), 0.0)) <= 1e-9);
  }
}

TEST_CASE("policy loss") {
  const std::vector<double> adv = {-0.5, 0.5}, lp = {std::log(0.5), std::log(0.25)};
  CHECK(policy_loss(adv, lp) == doctest::Approx(0.1733).epsilon(1e-3));
  CHECK(policy_loss(std::vector<double>{0, 0}, lp) == 0.0);
  CHECK(policy_loss(std::vector<double>{-1, 1}, lp) == doctest::Approx(2 * policy_loss(adv, lp)).epsilon(1e-15));
  CHECK_THROWS(policy_loss(std::vector<double>{1}, lp));
}

TEST_CASE("warmup plus cosine schedule") {
  CHECK(lr_schedule(0, 100, 20, 0.1) == 0.0);
  CHECK(lr_schedule(10, 100, 20, 0.1) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(lr_schedule(20, 100, 20, 0.1) == 0.1);
  CHECK(lr_schedule(60, 100, 20, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(lr_schedule(99, 100, 20, 0.1) < 0.1 * 1e-3);
  CHECK_THROWS(lr_schedule(0, 10, 10, 0.1));
  CHECK_THROWS(lr_schedule(10, 10, 2, 0.1));
}

TEST_CASE("momentum SGD") {
  const Tensor g = Tensor::vector({0.3, -1.2});
  Tensor theta = Tensor::vector({1.0, 2.0}), v = Tensor::zeros_like(g);
  sgd_momentum_update(theta, g, v, 0.1, 0.0);
  CHECK(max_abs(theta - Tensor::vector({0.97, 2.12})) <= 1e-15);

  Tensor t0 = Tensor::vector({1.0, 2.0}), v0 = Tensor::zeros_like(g);
  sgd_momentum_update(t0, Tensor::zeros_like(g), v0, 0.1, 0.9);
  CHECK(t0 == Tensor::vector({1.0, 2.0}));

  Tensor t2 = Tensor::vector({0.0, 0.0}), v2 = Tensor::zeros_like(g);
  sgd_momentum_update(t2, g, v2, 0.1, 0.9);
  sgd_momentum_update(t2, g, v2, 0.1, 0.9);
  CHECK(max_abs(t2 + 0.1 * 2.9 * g) <= 1e-15);

  Tensor bad = Tensor::vector({NAN, 0.0});
  bool named = false;
  try {
    sgd_momentum_update(theta, bad, v, 0.1, 0.9, "head.weight");
  } catch (const NonFiniteError& e) {
    named = std::string(e.what()).find("head.weight") != std::string::npos;
  }
  CHECK(named);
}

TEST_CASE("rigged bandit concentrates on the rewarded sub-policy") {
  PolicyNet net(kThree, Backbone::small_cnn, 1);
  const std::vector<Tensor> images = {random_image(32, 32, 4)};
  TrainerConfig cfg;
  cfg.n_traj = 10;
  cfg.traj_len = 6;
  const std::size_t winner = 11;
  PolicyOptimizer opt;
  const Rng root(5);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 300; ++step) {
    const auto rep = reinforce_step(net, opt, images, bandit(winner), cfg, 0.05, root.child("step", step));
    if (step == 0) first = rep.mean_reward;
    last = rep.mean_reward;
  }
  const auto p = ops::softmax(net.logits(images[0]));
  const auto capped = policy_distribution(net, images[0], cfg.cap);
  CHECK(p[winner] > 0.9);
  CHECK(std::abs(capped[winner] - cfg.cap) <= 0.01);
  CHECK(last > first);
}

TEST_CASE("identical trajectories leave the weights unchanged") {
  PolicyNet net(kThree, Backbone::small_cnn, 2);
  const std::vector<Tensor> images = {random_image(32, 32, 6), random_image(32, 32, 7)};
  const auto before = net.to_checkpoint();
  PolicyOptimizer opt;
  const RolloutFn constant = [](std::size_t, const Trajectory&, Rng&, const Rng&) { return 0.25; };
  const auto rep = reinforce_step(net, opt, images, constant, TrainerConfig{}, 0.1, Rng(8));
  const auto after = net.to_checkpoint();
  for (std::size_t k = 0; k < before.entries.size(); ++k) CHECK(before.entries[k].second == after.entries[k].second);
  CHECK(rep.policy_loss == 0.0);
}

TEST_CASE("training is deterministic and zero epochs is a no-op") {
  const SwapModel model(0, SwapVariant::blur_bottleneck);
  std::vector<Tensor> images;
  for (const auto& r : synth_images(4, 16, 16, 9)) images.push_back(r.pixels);
  const std::vector<TransformId> val = {TransformId::gaussblur, TransformId::jpeg};
  TrainerConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 2;
  cfg.n_traj = 3;
  cfg.traj_len = 2;
  cfg.cap = 0.5;
  cfg.lr = 0.05;
  cfg.reward_scale = 1e4;

  PolicyNet a(kThree, Backbone::small_cnn, 3), b(kThree, Backbone::small_cnn, 3);
  const auto ra = train(a, model, images, val, cfg, Rng(10));
  const auto rb = train(b, model, images, val, cfg, Rng(10));
  CHECK(ra.curve.size() == 2);
  CHECK(ra.curve == rb.curve);
  const auto ca = a.to_checkpoint(), cb = b.to_checkpoint();
  for (std::size_t k = 0; k < ca.entries.size(); ++k) CHECK(ca.entries[k].second == cb.entries[k].second);

  cfg.epochs = 0;
  cfg.warmup_epochs = 0;
  PolicyNet c(kThree, Backbone::small_cnn, 3);
  const auto before = c.to_checkpoint();
  const auto rc = train(c, model, images, val, cfg, Rng(10));
  CHECK(rc.curve.empty());
  for (std::size_t k = 0; k < before.entries.size(); ++k)
    CHECK(before.entries[k].second == c.to_checkpoint().entries[k].second);
}

TEST_CASE("trainer config validation") {
  TrainerConfig cfg;
  CHECK_NOTHROW(cfg.validate(81));
  CHECK_THROWS_AS(cfg.validate(4), ConfigError);
  auto bad = cfg;
  bad.warmup_epochs = 5;
  CHECK_THROWS_AS(bad.validate(81), ConfigError);
  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(81), ConfigError);
  bad = cfg;
  bad.n_traj = 0;
  CHECK_THROWS_AS(bad.validate(81), ConfigError);
  bad = cfg;
  bad.reward_scale = -1.0;
  CHECK_THROWS_AS(bad.validate(81), ConfigError);
  bad = cfg;
  bad.alpha = 0.1;
  CHECK_THROWS_AS(bad.validate(81), ConfigError);
}
