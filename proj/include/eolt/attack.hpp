#pragma once

// Gradient-based protective perturbations: FGSM, PGD, EOT and EOLT under an
// l-infinity budget, maximising the MSE between F(t(x + delta)) and F(x).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eolt/ops.hpp"
#include "eolt/policy.hpp"
#include "eolt/rng.hpp"
#include "eolt/transforms.hpp"

namespace eolt {

enum class InitMode { zero, uniform };

std::string_view init_mode_name(InitMode m);
std::optional<InitMode> parse_init_mode(std::string_view name);

struct AttackBudget {
  double epsilon = 0.05;
  double alpha = 0.01;
  int steps = 150;
  /// Starting point. With `zero` the MSE objective has a vanishing gradient
  /// at delta = 0 whenever the sampled transform is the identity, so the
  /// default starts from a uniform draw in [-epsilon, epsilon].
  InitMode init = InitMode::uniform;

  /// Throws std::invalid_argument unless 0 < alpha <= epsilon <= 1, steps >= 1.
  void validate() const;
};

/// Where the transforms applied inside each attack step come from.
class TransformSampler {
 public:
  enum class Mode { none, fixed, uniform, policy, stratified };

  static TransformSampler none(std::size_t m = 1);
  static TransformSampler fixed(SubPolicy sp, std::size_t m = 1);
  /// Equal probability for every sub-policy of the given transforms.
  static TransformSampler uniform(std::vector<TransformId> transforms, std::size_t m = 1);
  static TransformSampler policy(CappedDistribution dist, Catalog catalog, std::size_t m = 1);
  /// Every listed sub-policy exactly once per step (m = list size).
  static TransformSampler stratified(std::vector<SubPolicy> list);

  Mode mode() const { return mode_; }
  std::size_t samples_per_step() const { return m_; }
  const CappedDistribution& distribution() const { return dist_; }
  const Catalog& catalog() const { return catalog_; }

  /// m sub-policies for one step; nullopt stands for the identity transform.
  std::vector<std::optional<SubPolicy>> draw(Rng& rng) const;

 private:
  TransformSampler(Mode mode, std::size_t m) : mode_(mode), m_(m) {}

  Mode mode_;
  std::size_t m_;
  std::optional<SubPolicy> fixed_;
  Catalog catalog_;
  CappedDistribution dist_;
  std::vector<SubPolicy> list_;
};

struct AttackResult {
  Tensor x_adv;
  Tensor delta;
  /// Objective at the start of each step, then once more at the final point.
  std::vector<double> loss_trace;

  double final_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.back(); }
};

/// Per-element mean squared difference.
double mse(const Tensor& a, const Tensor& b);
/// MSE between model(transformed) and the cached clean output.
double adv_loss(const DiffStage& model, const Tensor& clean_output, const Tensor& transformed);

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Objective and input gradient through an optional transform and the model.
LossGrad adv_loss_grad(const DiffStage& model, const Tensor& clean_output, const Tensor& input,
                       const std::optional<SubPolicy>& sp, Rng& rng);

/// Mean objective and gradient over one round of sampler draws at x + delta.
LossGrad eot_loss_grad(const DiffStage& model, const Tensor& clean_output, const Tensor& x, const Tensor& delta,
                       const TransformSampler& sampler, Rng& rng);
Tensor eot_gradient(const DiffStage& model, const Tensor& x, const Tensor& delta, const TransformSampler& sampler,
                    Rng& rng);

/// Called after every PGD step with (step, delta, objective before the step).
using StepObserver = std::function<void(int, const Tensor&, double)>;

AttackResult fgsm(const DiffStage& model, const Tensor& x, const TransformSampler& sampler,
                  const AttackBudget& budget, Rng& rng);
/// Throws NonFiniteError naming the step when a gradient is not finite.
AttackResult pgd(const DiffStage& model, const Tensor& x, const TransformSampler& sampler, const AttackBudget& budget,
                 Rng& rng, const StepObserver& observer = {});
/// PGD with transforms drawn from the policy's capped distribution for x,
/// computed once per image.
AttackResult eolt_attack(const DiffStage& model, const Tensor& x, const PolicyNet& policy, double cap,
                         const AttackBudget& budget, Rng& rng, std::size_t m = 1);

/// Brings delta back into the feasible set: |delta| <= epsilon and
/// x + delta in [0, 1].
void project(Tensor& delta, const Tensor& x, double epsilon);

}  // namespace eolt
