#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "eolt/errors.hpp"
#include "eolt/ops.hpp"
#include "eolt/policy.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace eolt;
using eolt::testing::random_image;

namespace {

std::vector<double> random_distribution(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += v = std::exp(3.0 * rng.normal());
  for (double& v : p) v /= s;
  return p;
}

const Catalog kNine({TransformId::normal, TransformId::salt, TransformId::hsv, TransformId::boxblur,
                     TransformId::gaussblur, TransformId::contrast, TransformId::jpeg, TransformId::hflip,
                     TransformId::crop});

void randomise_head(PolicyNet& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : net.network().named_parameters())
    if (name.rfind("head.", 0) == 0)
      for (double& v : t->storage()) v = 0.1 * rng.normal();
}

}  // namespace

TEST_CASE("cap examples") {
  const std::vector<double> uni(81, 1.0 / 81);
  const auto u = cap_probabilities(uni, 1.0 / 6);
  for (double v : u.probs()) CHECK(v == doctest::Approx(1.0 / 81).epsilon(1e-15));

  const auto two = cap_probabilities(std::vector<double>{0.9, 0.1}, 0.5);
  CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.5).epsilon(1e-12));

  const auto three = cap_probabilities(std::vector<double>{0.6, 0.3, 0.1}, 0.5);
  CHECK(three[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(three[1] == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(three[2] == doctest::Approx(0.125).epsilon(1e-12));

  CHECK_THROWS_AS(cap_probabilities(std::vector<double>{0.5, 0.5}, 0.4), std::invalid_argument);
}

TEST_CASE("cap agrees with the bisection oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_distribution(81, rng);
    for (double c : {1.0 / 10, 1.0 / 8, 1.0 / 6, 1.0 / 5}) {
      const auto got = cap_probabilities(p, c);
      const auto want = oracle::water_fill(p, c);
      double s = 0.0, worst = 0.0;
      for (std::size_t i = 0; i < 81; ++i) {
        s += got[i];
        worst = std::max(worst, std::abs(got[i] - want[i]));
        CHECK(got[i] <= c + 1e-9);
      }
      CHECK(worst <= 1e-9);
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("untrained policy is uniform and deterministic") {
  const PolicyNet net(kNine, Backbone::small_cnn, 3);
  const Tensor x = random_image(32, 32, 2);
  const Tensor logits = net.logits(x);
  CHECK(logits.size() == 81);
  CHECK(max_abs(logits) == 0.0);
  const auto dist = policy_distribution(net, x, 1.0 / 6);
  for (double v : dist.probs()) CHECK(v == doctest::Approx(1.0 / 81).epsilon(1e-12));
  CHECK(dist.size() == kNine.logit_count());

  PolicyNet trained = net;
  randomise_head(trained, 4);
  const Tensor l1 = trained.logits(x);
  CHECK(l1 == trained.logits(x));
  CHECK(l1.all_finite());
}

TEST_CASE("trajectory sampling") {
  Rng rng(5);
  std::vector<double> one(9, 0.0);
  one[3] = 1.0;
  const Catalog single({TransformId::jpeg});
  const auto degenerate = sample_trajectory(CappedDistribution(one, 1.0), single, 6, rng);
  CHECK(degenerate.log_prob == 0.0);
  for (std::size_t i : degenerate.indices) CHECK(i == 3);

  const CappedDistribution uni(std::vector<double>(81, 1.0 / 81), 1.0 / 6);
  const auto t = sample_trajectory(uni, kNine, 6, rng);
  CHECK(t.subpolicies.size() == 6);
  CHECK(t.log_prob == doctest::Approx(6 * std::log(1.0 / 81)).epsilon(1e-12));
  for (std::size_t k = 0; k < 6; ++k) CHECK(kNine.encode(t.subpolicies[k]) == t.indices[k]);

  Rng a(7), b(7);
  CHECK(sample_trajectory(uni, kNine, 6, a).indices == sample_trajectory(uni, kNine, 6, b).indices);
}

TEST_CASE("empirical draw frequencies match the capped distribution") {
  Rng rng(8);
  const auto dist = cap_probabilities(random_distribution(81, rng), 1.0 / 6);
  const std::size_t n = 100000;
  std::vector<double> counts(81, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[dist.sample(rng)] += 1.0;
  double chi2 = 0.0;
  std::size_t dof = 0;
  for (std::size_t i = 0; i < 81; ++i) {
    const double expect = n * dist[i];
    const double sigma = std::sqrt(n * dist[i] * (1 - dist[i]));
    CHECK(std::abs(counts[i] - expect) <= 3.0 * sigma + 1.0);
    if (expect > 0) {
      chi2 += (counts[i] - expect) * (counts[i] - expect) / expect;
      ++dof;
    }
  }
  const boost::math::chi_squared chi(static_cast<double>(dof - 1));
  CHECK(boost::math::cdf(complement(chi, chi2)) > 0.001);
}

TEST_CASE("log-probability gradient") {
  CHECK(max_abs(log_prob_logit_gradient(Tensor::vector({0.7}), std::vector<std::size_t>{0})) == 0.0);

  const Tensor logits = Tensor::vector({0.3, -0.4});
  const std::vector<std::size_t> draw = {1};
  const Tensor g = log_prob_logit_gradient(logits, draw);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor lp = logits, lm = logits;
    lp[i] += h;
    lm[i] -= h;
    const double fd = (ops::log_softmax(lp)[1] - ops::log_softmax(lm)[1]) / (2 * h);
    CHECK(std::abs(g[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
  const std::vector<std::size_t> twice = {1, 1};
  CHECK(max_abs(log_prob_logit_gradient(logits, twice) - 2.0 * g) <= 1e-15);
}

TEST_CASE("parameter gradient of the log-probability matches finite differences") {
  PolicyNet net(kNine, Backbone::small_cnn, 9);
  randomise_head(net, 10);
  const Tensor x = random_image(32, 32, 11);
  Trajectory traj;
  traj.indices = {4, 17, 17, 60};
  for (std::size_t i : traj.indices) traj.subpolicies.push_back(kNine.decode(i));
  const auto grads = log_prob_gradient(net, x, traj);

  auto logp = [&](const PolicyNet& n) {
    const Tensor ls = ops::log_softmax(n.logits(x));
    double s = 0.0;
    for (std::size_t i : traj.indices) s += ls[i];
    return s;
  };
  auto params = net.network().named_parameters();
  REQUIRE(grads.size() == params.size());
  Rng rng(12);
  for (std::size_t pi = 0; pi < params.size(); pi += 3) {
    const std::size_t k = rng.below(params[pi].second->size());
    const double h = 1e-6;
    PolicyNet up = net, down = net;
    (*up.network().named_parameters()[pi].second)[k] += h;
    (*down.network().named_parameters()[pi].second)[k] -= h;
    const double fd = (logp(up) - logp(down)) / (2 * h);
    INFO(params[pi].first);
    CHECK(std::abs(grads[pi][k] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("checkpoint round trip and mismatch errors") {
  const auto dir = std::filesystem::temp_directory_path() / "eolt_policy_test";
  std::filesystem::create_directories(dir);
  PolicyNet net(kNine, Backbone::small_cnn, 13);
  randomise_head(net, 14);
  net.save(dir / "p.ckpt");

  PolicyNet fresh(kNine, Backbone::small_cnn, 99);
  fresh.load(dir / "p.ckpt");
  const Tensor x = random_image(32, 32, 15);
  CHECK(fresh.logits(x) == net.logits(x));

  PolicyNet other(Catalog({TransformId::jpeg}), Backbone::small_cnn, 13);
  CHECK_THROWS_AS(other.load(dir / "p.ckpt"), FormatError);
  PolicyNet resnet(kNine, Backbone::preact_resnet18, 13);
  CHECK_THROWS_AS(resnet.load(dir / "p.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}
