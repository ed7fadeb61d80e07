#pragma once

// REINFORCE with a per-image baseline for the transformation policy.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eolt/attack.hpp"
#include "eolt/policy.hpp"

namespace eolt {

struct TrainerConfig {
  int epochs = 5;
  int batch_size = 8;
  int n_traj = 10;   // trajectories per image
  int traj_len = 6;  // sub-policies per trajectory
  double lr = 0.001;
  double momentum = 0.9;
  int warmup_epochs = 2;
  double cap = 1.0 / 6.0;
  int inner_pgd_steps = 1;
  /// Budget of the inner perturbation step; `steps` is taken from inner_pgd_steps.
  double epsilon = 0.05;
  double alpha = 0.01;
  /// Magnitude index at which validation transforms are scored.
  int reward_magnitude = 4;
  /// Multiplies rewards before the baseline is subtracted. Image-space MSE
  /// rewards are small, so without it the policy gradient is tiny.
  double reward_scale = 1.0;
  /// Global L2 bound on the batch gradient before the momentum update; 0
  /// disables clipping. Without it an unnormalised backbone can diverge once
  /// the capped sampler keeps pushing down the logits of losing sub-policies.
  double max_grad_norm = 1.0;

  /// Throws ConfigError describing the first violated constraint.
  void validate(std::size_t logit_count) const;
  AttackBudget inner_budget() const;
};

struct RewardRecord {
  std::vector<double> rewards;
  double baseline = 0.0;
  std::vector<double> advantages;
  double loss = 0.0;
};

/// Mean over S_v of the MSE between F(t(x_adv)) and F(x). Each validation
/// transform draws its noise from a stream keyed by the transform, so
/// trajectories of the same image are scored under the same realisations.
double compute_reward(const DiffStage& model, const Tensor& clean_output, const Tensor& x_adv,
                      std::span<const TransformId> validation, const Rng& rng, int magnitude = 4);

std::vector<double> advantages(std::span<const double> rewards);
/// -(1/T) * sum_j adv_j * log_prob_j
double policy_loss(std::span<const double> advantages, std::span<const double> log_probs);
/// Linear warmup to base_lr, then cosine decay towards 0.
double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr);
/// v = momentum * v + grad; theta -= lr * v. Throws NonFiniteError naming the
/// parameter if grad is not finite.
void sgd_momentum_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum,
                         const std::string& name = "parameter");

/// Reward for one trajectory of image `image_index`. `traj_rng` is private to
/// the trajectory; `image_rng` is shared by all trajectories of the image.
using RolloutFn =
    std::function<double(std::size_t image_index, const Trajectory& traj, Rng& traj_rng, const Rng& image_rng)>;

struct StepReport {
  std::vector<RewardRecord> records;  // one per image
  double mean_reward = 0.0;
  /// Norm of the batch gradient before clipping.
  double grad_norm = 0.0;
  double policy_loss = 0.0;
  double lr = 0.0;
};

/// Optimiser state carried between steps.
struct PolicyOptimizer {
  std::vector<Tensor> velocity;
  long step = 0;
};

/// One REINFORCE update on a batch: sample trajectories from the capped
/// policy, score them with `rollout`, centre the rewards per image and apply
/// one momentum-SGD step with the mean gradient over the batch.
StepReport reinforce_step(PolicyNet& net, PolicyOptimizer& opt, const std::vector<Tensor>& images,
                          const RolloutFn& rollout, const TrainerConfig& config, double lr, const Rng& rng);

/// Rollout used in training: one averaged-gradient PGD step over the
/// trajectory's sub-policies, scored by compute_reward on `validation`.
RolloutFn perturbation_rollout(const DiffStage& model, const std::vector<Tensor>& images,
                               const std::vector<Tensor>& clean_outputs, std::vector<TransformId> validation,
                               const TrainerConfig& config);

/// train_step over a batch of images with the perturbation rollout.
StepReport train_step(PolicyNet& net, PolicyOptimizer& opt, const DiffStage& model,
                      const std::vector<Tensor>& batch, std::span<const TransformId> validation,
                      const TrainerConfig& config, double lr, const Rng& rng);

struct TrainOptions {
  std::filesystem::path log_csv;         // empty: no log
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  /// Mean validation reward per epoch, measured on the training images with
  /// the same random streams every epoch.
  std::vector<double> curve;
  std::vector<StepReport> steps;
};

/// Epoch loop over seeded shuffles of `images`. The policy's catalog is the
/// perturbation set; rewards use `validation`.
TrainResult train(PolicyNet& net, const DiffStage& model, const std::vector<Tensor>& images,
                  const std::vector<TransformId>& validation, const TrainerConfig& config, const Rng& rng,
                  const TrainOptions& options = {});

/// Mean reward of n_traj fresh trajectories per image under the current
/// policy, with streams derived from `rng` only.
double validation_reward(const PolicyNet& net, const DiffStage& model, const std::vector<Tensor>& images,
                         const std::vector<TransformId>& validation, const TrainerConfig& config, const Rng& rng);

}  // namespace eolt
