#include "eolt/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "eolt/errors.hpp"

namespace eolt {

std::string_view init_mode_name(InitMode m) { return m == InitMode::zero ? "zero" : "uniform"; }

std::optional<InitMode> parse_init_mode(std::string_view name) {
  if (name == "zero") return InitMode::zero;
  if (name == "uniform") return InitMode::uniform;
  return std::nullopt;
}

void AttackBudget::validate() const {
  if (!(alpha > 0.0 && alpha <= epsilon && epsilon <= 1.0)) {
    throw std::invalid_argument("attack budget needs 0 < alpha <= epsilon <= 1 (alpha=" + std::to_string(alpha) +
                                ", epsilon=" + std::to_string(epsilon) + ")");
  }
  if (steps < 1) throw std::invalid_argument("attack budget needs steps >= 1");
}

// ---------------------------------------------------------------- sampler

TransformSampler TransformSampler::none(std::size_t m) {
  if (m == 0) throw std::invalid_argument("samples per step must be >= 1");
  return TransformSampler(Mode::none, m);
}

TransformSampler TransformSampler::fixed(SubPolicy sp, std::size_t m) {
  TransformSampler s = none(m);
  s.mode_ = Mode::fixed;
  s.fixed_ = sp;
  return s;
}

TransformSampler TransformSampler::uniform(std::vector<TransformId> transforms, std::size_t m) {
  TransformSampler s = none(m);
  s.mode_ = Mode::uniform;
  s.catalog_ = Catalog(std::move(transforms));
  const std::size_t k = s.catalog_.logit_count();
  s.dist_ = CappedDistribution(std::vector<double>(k, 1.0 / static_cast<double>(k)), 1.0);
  return s;
}

TransformSampler TransformSampler::policy(CappedDistribution dist, Catalog catalog, std::size_t m) {
  if (dist.size() != catalog.logit_count()) {
    throw DimensionError("policy sampler: distribution size " + std::to_string(dist.size()) + " vs catalog " +
                         std::to_string(catalog.logit_count()));
  }
  TransformSampler s = none(m);
  s.mode_ = Mode::policy;
  s.catalog_ = std::move(catalog);
  s.dist_ = std::move(dist);
  return s;
}

TransformSampler TransformSampler::stratified(std::vector<SubPolicy> list) {
  TransformSampler s = none(std::max<std::size_t>(list.size(), 1));
  if (list.empty()) throw std::invalid_argument("stratified sampler needs at least one sub-policy");
  s.mode_ = Mode::stratified;
  s.list_ = std::move(list);
  return s;
}

std::vector<std::optional<SubPolicy>> TransformSampler::draw(Rng& rng) const {
  std::vector<std::optional<SubPolicy>> out;
  out.reserve(m_);
  switch (mode_) {
    case Mode::none: out.assign(m_, std::nullopt); break;
    case Mode::fixed: out.assign(m_, fixed_); break;
    case Mode::uniform:
    case Mode::policy:
      for (std::size_t k = 0; k < m_; ++k) out.emplace_back(catalog_.decode(dist_.sample(rng)));
      break;
    case Mode::stratified: out.assign(list_.begin(), list_.end()); break;
  }
  return out;
}

// ---------------------------------------------------------------- objective

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double adv_loss(const DiffStage& model, const Tensor& clean_output, const Tensor& transformed) {
  const Tensor y = model(transformed);
  require_same_shape(y, clean_output, "adv_loss");
  return mse(y, clean_output);
}

LossGrad adv_loss_grad(const DiffStage& model, const Tensor& clean_output, const Tensor& input,
                       const std::optional<SubPolicy>& sp, Rng& rng) {
  std::optional<TransformOutput> t;
  if (sp) t = apply(input, *sp, rng);
  const Tensor& model_in = t ? t->image : input;
  Context ctx;
  const Tensor y = model.forward(model_in, ctx);
  require_same_shape(y, clean_output, "adv_loss");
  LossGrad out;
  out.loss = mse(y, clean_output);
  Tensor gy = (y - clean_output) * (2.0 / static_cast<double>(y.size()));
  Tensor g = model.vjp(ctx, gy);
  out.grad = t ? vjp(t->ctx, g) : std::move(g);
  return out;
}

LossGrad eot_loss_grad(const DiffStage& model, const Tensor& clean_output, const Tensor& x, const Tensor& delta,
                       const TransformSampler& sampler, Rng& rng) {
  require_same_shape(x, delta, "eot_gradient");
  const Tensor input = x + delta;
  const auto draws = sampler.draw(rng);
  LossGrad total{0.0, Tensor::zeros_like(x)};
  for (const auto& sp : draws) {
    LossGrad one = adv_loss_grad(model, clean_output, input, sp, rng);
    total.loss += one.loss;
    total.grad += one.grad;
  }
  const double inv = 1.0 / static_cast<double>(draws.size());
  total.loss *= inv;
  total.grad *= inv;
  return total;
}

Tensor eot_gradient(const DiffStage& model, const Tensor& x, const Tensor& delta, const TransformSampler& sampler,
                    Rng& rng) {
  return eot_loss_grad(model, model(x), x, delta, sampler, rng).grad;
}

// ---------------------------------------------------------------- attacks

void project(Tensor& delta, const Tensor& x, double epsilon) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double d = std::clamp(delta[i], -epsilon, epsilon);
    delta[i] = std::clamp(x[i] + d, 0.0, 1.0) - x[i];
  }
}

namespace {

constexpr double kFeasibilitySlack = 1e-12;

Tensor initial_delta(const Tensor& x, const AttackBudget& budget, Rng& rng) {
  Tensor delta = Tensor::zeros_like(x);
  if (budget.init == InitMode::uniform) {
    for (double& v : delta.storage()) v = rng.uniform(-budget.epsilon, budget.epsilon);
    project(delta, x, budget.epsilon);
  }
  return delta;
}

void check_feasible(const Tensor& delta, const Tensor& x, double epsilon, int step) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double v = x[i] + delta[i];
    if (std::abs(delta[i]) > epsilon + kFeasibilitySlack || v < -kFeasibilitySlack || v > 1.0 + kFeasibilitySlack) {
      throw std::logic_error("infeasible perturbation after step " + std::to_string(step));
    }
  }
}

void check_input(const Tensor& x) {
  if (x.ndim() != 3) throw DimensionError("attack input must be CxHxW, got " + shape_str(x.shape()));
  require_finite(x, "attack input");
}

AttackResult finish(const Tensor& x, Tensor delta, std::vector<double> trace) {
  AttackResult r;
  r.x_adv = ops::clamp01(x + delta);
  r.delta = std::move(delta);
  r.loss_trace = std::move(trace);
  return r;
}

}  // namespace

AttackResult fgsm(const DiffStage& model, const Tensor& x, const TransformSampler& sampler,
                  const AttackBudget& budget, Rng& rng) {
  budget.validate();
  check_input(x);
  const Tensor clean = model(x);
  Tensor delta = initial_delta(x, budget, rng);
  const LossGrad lg = eot_loss_grad(model, clean, x, delta, sampler, rng);
  require_finite(lg.grad, "fgsm gradient");
  delta = ops::sign(lg.grad) * budget.epsilon;
  project(delta, x, budget.epsilon);
  check_feasible(delta, x, budget.epsilon, 1);
  const double final_loss = eot_loss_grad(model, clean, x, delta, sampler, rng).loss;
  return finish(x, std::move(delta), {lg.loss, final_loss});
}

AttackResult pgd(const DiffStage& model, const Tensor& x, const TransformSampler& sampler, const AttackBudget& budget,
                 Rng& rng, const StepObserver& observer) {
  budget.validate();
  check_input(x);
  const Tensor clean = model(x);
  Tensor delta = initial_delta(x, budget, rng);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(budget.steps) + 1);
  for (int step = 0; step < budget.steps; ++step) {
    const LossGrad lg = eot_loss_grad(model, clean, x, delta, sampler, rng);
    if (!lg.grad.all_finite() || !std::isfinite(lg.loss)) {
      throw NonFiniteError("pgd: non-finite gradient at step " + std::to_string(step));
    }
    trace.push_back(lg.loss);
    delta.axpy(budget.alpha, ops::sign(lg.grad));
    project(delta, x, budget.epsilon);
    check_feasible(delta, x, budget.epsilon, step);
    if (observer) observer(step, delta, lg.loss);
  }
  trace.push_back(eot_loss_grad(model, clean, x, delta, sampler, rng).loss);
  return finish(x, std::move(delta), std::move(trace));
}

AttackResult eolt_attack(const DiffStage& model, const Tensor& x, const PolicyNet& policy, double cap,
                         const AttackBudget& budget, Rng& rng, std::size_t m) {
  const auto sampler = TransformSampler::policy(policy_distribution(policy, x, cap), policy.catalog(), m);
  return pgd(model, x, sampler, budget, rng);
}

}  // namespace eolt
