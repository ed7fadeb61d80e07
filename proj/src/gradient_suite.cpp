#include "eolt/gradient_suite.hpp"

#include <functional>
#include <memory>

#include "eolt/models.hpp"
#include "eolt/policy.hpp"
#include "eolt/rng.hpp"
#include "eolt/transforms.hpp"

namespace eolt {

namespace {

// A stage assembled from a forward function and its VJP. The VJP receives
// the forward input.
class FnStage : public DiffStage {
 public:
  using Fwd = std::function<Tensor(const Tensor&)>;
  using Vjp = std::function<Tensor(const Tensor&, const Tensor&)>;
  FnStage(std::string name, Fwd f, Vjp v) : name_(std::move(name)), f_(std::move(f)), v_(std::move(v)) {}
  std::string name() const override { return name_; }
  Tensor forward(const Tensor& x, Context& ctx) const override {
    ctx.saved = {x};
    return f_(x);
  }
  Tensor vjp(const Context& ctx, const Tensor& g) const override { return v_(ctx.saved[0], g); }

 private:
  std::string name_;
  Fwd f_;
  Vjp v_;
};

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

std::vector<GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options) {
  std::vector<GradCheckReport> reports;
  const std::size_t h = options.height, w = options.width;
  const Shape image_shape{3, h, w};
  Rng rng = Rng(options.check.seed).child("gradient-suite");

  auto run = [&](const DiffStage& stage, const Tensor& input) {
    GradCheckReport r = finite_diff_check(stage, input, options.check);
    if (options.on_report) options.on_report(r);
    reports.push_back(std::move(r));
  };

  Rng op_rng = rng.child("ops");
  const Tensor image = random_tensor(image_shape, op_rng, 0.05, 0.95);
  const Tensor signed_image = random_tensor(image_shape, op_rng, -1.0, 1.0);

  const Tensor kernel = random_tensor({4, 3, 3, 3}, op_rng, -1.0, 1.0);
  run(FnStage(
          "conv2d",
          [&](const Tensor& x) { return ops::conv2d(x, kernel, 2, 1); },
          [&](const Tensor&, const Tensor& g) { return ops::conv2d_vjp_input(g, kernel, 2, 1, h, w); }),
      signed_image);

  const Tensor weight = random_tensor({5, 7}, op_rng, -1.0, 1.0);
  const Tensor bias = random_tensor({5}, op_rng, -1.0, 1.0);
  run(FnStage(
          "linear", [&](const Tensor& x) { return ops::linear(x, weight, bias); },
          [&](const Tensor&, const Tensor& g) { return ops::linear_vjp_input(g, weight); }),
      random_tensor({7}, op_rng, -1.0, 1.0));

  run(FnStage("relu", ops::relu, ops::relu_vjp), signed_image);
  run(FnStage(
          "sigmoid", ops::sigmoid,
          [](const Tensor& x, const Tensor& g) { return ops::sigmoid_vjp(ops::sigmoid(x), g); }),
      signed_image);
  run(FnStage(
          "global_avg_pool", ops::global_avg_pool,
          [](const Tensor& x, const Tensor& g) { return ops::global_avg_pool_vjp(x.shape(), g); }),
      signed_image);
  run(FnStage(
          "softmax", ops::softmax,
          [](const Tensor& x, const Tensor& g) { return ops::softmax_vjp(ops::softmax(x), g); }),
      random_tensor({81}, op_rng, -2.0, 2.0));
  run(FnStage("clamp01", ops::clamp01, ops::clamp01_vjp), random_tensor(image_shape, op_rng, -0.5, 1.5));
  run(FnStage("l2_normalize", ops::l2_normalize, ops::l2_normalize_vjp), random_tensor({64}, op_rng, -1.0, 1.0));

  Tensor grid = ops::identity_grid(h, w);
  for (double& v : grid.storage()) v += op_rng.uniform(-2.5, 2.5);
  run(FnStage(
          "bilinear_grid_sample", [&](const Tensor& x) { return ops::bilinear_grid_sample(x, grid); },
          [&](const Tensor&, const Tensor& g) { return ops::bilinear_grid_sample_vjp(g, grid, h, w); }),
      signed_image);

  Rng t_rng = rng.child("transforms");
  for (TransformId id : all_transforms()) {
    for (int m = 0; m < kMagnitudes; ++m) {
      Rng draw_rng = t_rng.child(transform_name(id), static_cast<std::uint64_t>(m));
      const TransformStage stage = TransformStage::sampled({id, m}, image_shape, draw_rng);
      run(stage, image);
    }
  }

  const std::uint64_t seed = options.check.seed;
  run(SwapModel(seed, SwapVariant::toy), image);
  run(SwapModel(seed, SwapVariant::blur_bottleneck), image);
  run(IdentityEmbedder(seed), image);

  // An untrained head is zero, which would make the check vacuous.
  for (Backbone b : {Backbone::small_cnn, Backbone::preact_resnet18}) {
    PolicyNet net(Catalog::full(), b, seed);
    Sequential seq = net.network();
    Rng head_rng = rng.child("policy-head", static_cast<std::uint64_t>(b));
    for (auto& [name, p] : seq.named_parameters())
      if (name.starts_with("head."))
        for (double& v : p->storage()) v = head_rng.normal() * 0.1;
    run(seq, image);
  }
  return reports;
}

}  // namespace eolt
