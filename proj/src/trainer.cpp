#include "eolt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "eolt/errors.hpp"
#include "parallel.hpp"

namespace eolt {

void TrainerConfig::validate(std::size_t logit_count) const {
  auto fail = [](const std::string& msg) { throw ConfigError("trainer: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1 || n_traj < 1 || traj_len < 1 || inner_pgd_steps < 1) {
    fail("batch_size, n_traj, traj_len and inner_pgd_steps must be positive");
  }
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(reward_scale > 0.0) || !std::isfinite(reward_scale)) fail("reward_scale must be positive and finite");
  if (!(max_grad_norm >= 0.0) || !std::isfinite(max_grad_norm)) fail("max_grad_norm must be >= 0 and finite");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs)) fail("warmup_epochs must be < epochs");
  if (!(cap > 0.0 && cap <= 1.0)) fail("cap must lie in (0, 1]");
  if (cap * static_cast<double>(logit_count) < 1.0 - 1e-12) {
    fail(fmt::format("cap {} infeasible for {} sub-policies", cap, logit_count));
  }
  if (reward_magnitude < 0 || reward_magnitude >= kMagnitudes) fail("reward_magnitude must lie in [0, 8]");
  try {
    inner_budget().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

AttackBudget TrainerConfig::inner_budget() const { return {epsilon, alpha, inner_pgd_steps, InitMode::zero}; }

double compute_reward(const DiffStage& model, const Tensor& clean_output, const Tensor& x_adv,
                      std::span<const TransformId> validation, const Rng& rng, int magnitude) {
  if (validation.empty()) throw std::invalid_argument("compute_reward: empty validation set");
  double total = 0.0;
  for (TransformId t : validation) {
    Rng r = rng.child("reward", static_cast<std::uint64_t>(t));
    total += adv_loss(model, clean_output, apply_image(x_adv, {t, magnitude}, r));
  }
  return total / static_cast<double>(validation.size());
}

std::vector<double> advantages(std::span<const double> rewards) {
  if (rewards.empty()) return {};
  // Mean taken relative to the first reward, so equal rewards centre to exact zeros.
  const double r0 = rewards.front();
  double shift = 0.0;
  for (double r : rewards) shift += r - r0;
  const double mean = r0 + shift / static_cast<double>(rewards.size());
  std::vector<double> out(rewards.begin(), rewards.end());
  for (double& r : out) r -= mean;
  return out;
}

double policy_loss(std::span<const double> adv, std::span<const double> log_probs) {
  if (adv.size() != log_probs.size()) {
    throw std::invalid_argument(fmt::format("policy_loss: {} advantages vs {} log-probabilities", adv.size(),
                                            log_probs.size()));
  }
  if (adv.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < adv.size(); ++j) acc += adv[j] * log_probs[j];
  return -acc / static_cast<double>(adv.size());
}

double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr) {
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument(fmt::format("lr_schedule: warmup {} must be < total {}", warmup_steps, total_steps));
  }
  if (step < 0 || step >= total_steps) {
    throw std::out_of_range(fmt::format("lr_schedule: step {} outside [0, {})", step, total_steps));
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double phase = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

void sgd_momentum_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                         const std::string& name) {
  require_same_shape(theta, grad, name.c_str());
  require_same_shape(theta, velocity, name.c_str());
  if (!grad.all_finite()) throw NonFiniteError("non-finite gradient for " + name);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    theta[i] -= lr * velocity[i];
  }
}

namespace {

struct ImageOutcome {
  RewardRecord record;
  std::vector<Tensor> grads;
};

}  // namespace

StepReport reinforce_step(PolicyNet& net, PolicyOptimizer& opt, const std::vector<Tensor>& images,
                          const RolloutFn& rollout, const TrainerConfig& config, double lr, const Rng& rng) {
  if (images.empty()) throw std::invalid_argument("reinforce_step: empty batch");
  const std::size_t T = static_cast<std::size_t>(config.n_traj);
  std::vector<ImageOutcome> outcomes(images.size());

  detail::parallel_jobs(images.size(), [&](std::size_t i) {
    Rng image_rng = rng.child("image", i);
    Context ctx;
    const Tensor logits = net.forward(images[i], ctx);
    require_finite(logits, "policy logits");
    const CappedDistribution dist = cap_probabilities(ops::softmax(logits).values(), config.cap);
    std::vector<Trajectory> trajs;
    for (std::size_t j = 0; j < T; ++j) {
      Rng draw_rng = image_rng.child("trajectory", j);
      trajs.push_back(sample_trajectory(dist, net.catalog(), static_cast<std::size_t>(config.traj_len), draw_rng));
    }
    RewardRecord& rec = outcomes[i].record;
    std::vector<double> log_probs;
    for (std::size_t j = 0; j < T; ++j) {
      Rng roll_rng = image_rng.child("rollout", j);
      trajs[j].reward = rollout(i, trajs[j], roll_rng, image_rng);
      rec.rewards.push_back(trajs[j].reward);
      log_probs.push_back(trajs[j].log_prob);
    }
    rec.advantages = advantages(rec.rewards);
    rec.baseline = std::accumulate(rec.rewards.begin(), rec.rewards.end(), 0.0) / static_cast<double>(T);
    rec.loss = policy_loss(rec.advantages, log_probs);

    // d loss / d logits with the uncapped softmax log-probabilities.
    Tensor dlogits = Tensor::zeros_like(logits);
    for (std::size_t j = 0; j < T; ++j) {
      if (rec.advantages[j] == 0.0) continue;
      dlogits.axpy(-rec.advantages[j] / static_cast<double>(T), log_prob_logit_gradient(logits, trajs[j].indices));
    }
    outcomes[i].grads = net.backward(ctx, dlogits);
  });

  StepReport report;
  report.lr = lr;
  auto params = net.network().named_parameters();
  std::vector<Tensor> grads = net.network().zero_grads();
  const double inv = 1.0 / static_cast<double>(images.size());
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  for (auto& o : outcomes) {
    for (std::size_t k = 0; k < grads.size(); ++k) grads[k].axpy(inv, o.grads[k]);
    for (double r : o.record.rewards) reward_sum += r;
    reward_count += o.record.rewards.size();
    report.policy_loss += inv * o.record.loss;
    report.records.push_back(std::move(o.record));
  }
  report.mean_reward = reward_sum / static_cast<double>(reward_count);

  double sq = 0.0;
  for (const Tensor& g : grads) sq += dot(g, g);
  report.grad_norm = std::sqrt(sq);
  if (config.max_grad_norm > 0.0 && report.grad_norm > config.max_grad_norm) {
    for (Tensor& g : grads) g *= config.max_grad_norm / report.grad_norm;
  }

  if (opt.velocity.empty()) opt.velocity = net.network().zero_grads();
  for (std::size_t k = 0; k < params.size(); ++k) {
    sgd_momentum_update(*params[k].second, grads[k], opt.velocity[k], lr, config.momentum, params[k].first);
  }
  ++opt.step;
  return report;
}

RolloutFn perturbation_rollout(const DiffStage& model, const std::vector<Tensor>& images,
                               const std::vector<Tensor>& clean_outputs, std::vector<TransformId> validation,
                               const TrainerConfig& config) {
  if (validation.empty()) throw std::invalid_argument("training needs a non-empty validation set");
  return [&model, &images, &clean_outputs, validation = std::move(validation), config](
             std::size_t i, const Trajectory& traj, Rng& rng, const Rng& image_rng) {
    const Tensor& x = images.at(i);
    const AttackResult adv = pgd(model, x, TransformSampler::stratified(traj.subpolicies), config.inner_budget(), rng);
    // Reward noise depends on the image only, not on the trajectory.
    return config.reward_scale * compute_reward(model, clean_outputs.at(i), adv.x_adv, validation,
                                                image_rng.child("reward-noise"), config.reward_magnitude);
  };
}

namespace {

std::vector<Tensor> clean_outputs_of(const DiffStage& model, const std::vector<Tensor>& images) {
  std::vector<Tensor> out(images.size());
  detail::parallel_jobs(images.size(), [&](std::size_t i) { out[i] = model(images[i]); });
  return out;
}

}  // namespace

StepReport train_step(PolicyNet& net, PolicyOptimizer& opt, const DiffStage& model,
                      const std::vector<Tensor>& batch, std::span<const TransformId> validation,
                      const TrainerConfig& config, double lr, const Rng& rng) {
  const std::vector<Tensor> clean = clean_outputs_of(model, batch);
  const RolloutFn rollout =
      perturbation_rollout(model, batch, clean, {validation.begin(), validation.end()}, config);
  return reinforce_step(net, opt, batch, rollout, config, lr, rng);
}

double validation_reward(const PolicyNet& net, const DiffStage& model, const std::vector<Tensor>& images,
                         const std::vector<TransformId>& validation, const TrainerConfig& config, const Rng& rng) {
  const std::vector<Tensor> clean = clean_outputs_of(model, images);
  TrainerConfig unscaled = config;
  unscaled.reward_scale = 1.0;
  const RolloutFn rollout = perturbation_rollout(model, images, clean, validation, unscaled);
  std::vector<double> per_image(images.size());
  detail::parallel_jobs(images.size(), [&](std::size_t i) {
    Rng image_rng = rng.child("image", i);
    const CappedDistribution dist = policy_distribution(net, images[i], config.cap);
    double acc = 0.0;
    for (int j = 0; j < config.n_traj; ++j) {
      Rng draw_rng = image_rng.child("trajectory", static_cast<std::uint64_t>(j));
      Rng roll_rng = image_rng.child("rollout", static_cast<std::uint64_t>(j));
      const Trajectory t = sample_trajectory(dist, net.catalog(), static_cast<std::size_t>(config.traj_len), draw_rng);
      acc += rollout(i, t, roll_rng, image_rng);
    }
    per_image[i] = acc / config.n_traj;
  });
  return std::accumulate(per_image.begin(), per_image.end(), 0.0) / static_cast<double>(images.size());
}

TrainResult train(PolicyNet& net, const DiffStage& model, const std::vector<Tensor>& images,
                  const std::vector<TransformId>& validation, const TrainerConfig& config, const Rng& rng,
                  const TrainOptions& options) {
  config.validate(net.catalog().logit_count());
  if (images.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult result;
  if (config.epochs == 0) return result;

  const std::size_t n = images.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * config.epochs;
  const long warmup_steps = steps_per_epoch * config.warmup_epochs;

  std::ofstream log;
  if (!options.log_csv.empty()) {
    if (options.log_csv.has_parent_path()) std::filesystem::create_directories(options.log_csv.parent_path());
    log.open(options.log_csv);
    if (!log) throw FormatError("cannot write " + options.log_csv.string());
    log << "epoch,step,lr,mean_reward,policy_loss,grad_norm\n";
  }
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  const Rng validation_rng = rng.child("validation");
  PolicyOptimizer opt;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Seeded Fisher-Yates shuffle.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = rng.child("shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (long s = 0; s < steps_per_epoch; ++s) {
      std::vector<Tensor> batch_images;
      for (std::size_t k = static_cast<std::size_t>(s) * batch; k < std::min(n, static_cast<std::size_t>(s + 1) * batch);
           ++k)
        batch_images.push_back(images[order[k]]);
      const long global = epoch * steps_per_epoch + s;
      const double lr = lr_schedule(global, total_steps, warmup_steps, config.lr);
      StepReport rep = train_step(net, opt, model, batch_images, validation, config, lr,
                                  rng.child("step", static_cast<std::uint64_t>(global)));
      if (log) {
        log << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", epoch, global, lr, rep.mean_reward, rep.policy_loss,
                           rep.grad_norm);
      }
      result.steps.push_back(std::move(rep));
    }
    result.curve.push_back(validation_reward(net, model, images, validation, config, validation_rng));
    if (!options.checkpoint_dir.empty()) {
      net.save(options.checkpoint_dir / fmt::format("policy_epoch{}.ckpt", epoch + 1));
    }
    if (options.progress) {
      options.progress(fmt::format("epoch {}/{}: validation reward {:.6g}", epoch + 1, config.epochs,
                                   result.curve.back()));
    }
  }
  return result;
}

}  // namespace eolt
