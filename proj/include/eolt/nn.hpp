#pragma once

// Small feed-forward network framework on top of the ops. A Sequential is a
// DiffStage (input gradient only) and can additionally accumulate gradients
// for its parameters, which the policy trainer needs.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eolt/ops.hpp"
#include "eolt/rng.hpp"
#include "eolt/tensor.hpp"

namespace eolt {

enum class Precision { f64, f32 };

std::string_view precision_name(Precision p);
std::optional<Precision> parse_precision(std::string_view name);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Tensor forward(const Tensor& x, Context& ctx) const = 0;
  /// Returns the input gradient. If `grads` is non-empty it holds one tensor
  /// per parameter (same order as parameters()) and receives accumulated
  /// parameter gradients.
  virtual Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const = 0;
  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::vector<const Tensor*> parameters() const { return {}; }
  virtual std::vector<std::string> parameter_names() const { return {}; }
  virtual bool straight_through() const { return false; }
};

/// Weights drawn from N(0, 2 / fan_in).
Tensor he_normal(const Shape& shape, double fan_in, Rng& rng);

class Conv2d : public Layer {
 public:
  Conv2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t padding);
  /// He-initialised weights, zero bias.
  static Conv2d init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t padding,
                     Rng& rng);

  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
  std::vector<Tensor*> parameters() override { return {&weight_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&weight_, &bias_}; }
  std::vector<std::string> parameter_names() const override { return {"weight", "bias"}; }

 private:
  Tensor weight_, bias_;
  std::size_t stride_, padding_;
};

/// Kernel layout Cin x Cout x K x K.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t padding);
  /// fan_in counts the inputs that reach one output: Cin * (K / stride)^2.
  static ConvTranspose2d init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                              std::size_t padding, Rng& rng);

  std::string kind() const override { return "conv_transpose2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
  std::vector<Tensor*> parameters() override { return {&weight_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&weight_, &bias_}; }
  std::vector<std::string> parameter_names() const override { return {"weight", "bias"}; }

 private:
  Tensor weight_, bias_;
  std::size_t stride_, padding_;
};

class Linear : public Layer {
 public:
  Linear(Tensor weight, Tensor bias);
  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);

  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
  std::vector<Tensor*> parameters() override { return {&weight_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&weight_, &bias_}; }
  std::vector<std::string> parameter_names() const override { return {"weight", "bias"}; }

 private:
  Tensor weight_, bias_;
};

class Relu : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

class Sigmoid : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

class Clamp01 : public Layer {
 public:
  std::string kind() const override { return "clamp01"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Clamp01>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

class GlobalAvgPool : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

class L2Normalize : public Layer {
 public:
  std::string kind() const override { return "l2_normalize"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<L2Normalize>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

/// y = scale * x + shift, elementwise.
class Affine : public Layer {
 public:
  Affine(double scale, double shift) : scale_(scale), shift_(shift) {}
  std::string kind() const override { return "affine"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Affine>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;

 private:
  double scale_, shift_;
};

/// s(z) = 0.5 + 0.5 * tanh(2 * (z - 0.5)): unit slope at 0.5, range (0, 1).
class TanhSquash : public Layer {
 public:
  std::string kind() const override { return "tanh_squash"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<TanhSquash>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
};

class Sequential;

/// y = x + gain * branch(x). The branch is frozen: its parameters are not
/// exposed and receive no gradients.
class Residual : public Layer {
 public:
  Residual(const Sequential& branch, double gain);
  Residual(const Residual& other);
  std::string kind() const override { return "residual"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Residual>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;

 private:
  std::unique_ptr<Sequential> branch_;
  double gain_;
};

/// Wraps a parameter-free DiffStage, e.g. a fixed blur.
class StageLayer : public Layer {
 public:
  explicit StageLayer(std::shared_ptr<const DiffStage> stage) : stage_(std::move(stage)) {}
  std::string kind() const override { return stage_->name(); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<StageLayer>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override { return stage_->forward(x, ctx); }
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const override {
    return stage_->vjp(ctx, grad_out);
  }
  bool straight_through() const override { return stage_->straight_through(); }

 private:
  std::shared_ptr<const DiffStage> stage_;
};

/// Pre-activation residual block: conv(relu(conv(relu(x)))) + shortcut(x).
/// The shortcut is a strided 1x1 convolution when the shape changes.
class PreActBlock : public Layer {
 public:
  PreActBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  std::string kind() const override { return "preact_block"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PreActBlock>(*this); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const override;
  std::vector<Tensor*> parameters() override;
  std::vector<const Tensor*> parameters() const override;
  std::vector<std::string> parameter_names() const override;

 private:
  Conv2d conv1_, conv2_;
  std::optional<Conv2d> shortcut_;
};

class Sequential : public DiffStage {
 public:
  explicit Sequential(std::string name = "sequential") : name_(std::move(name)) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <class L>
  Sequential& add(std::string label, L layer) {
    layers_.emplace_back(std::move(label), std::make_unique<L>(std::move(layer)));
    return *this;
  }

  void set_precision(Precision p) { precision_ = p; }
  Precision precision() const { return precision_; }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i).second; }

  std::string name() const override { return name_; }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor vjp(const Context& ctx, const Tensor& grad_out) const override;
  bool straight_through() const override;

  /// Backward pass accumulating parameter gradients into `grads`, which must
  /// come from zero_grads(). Returns the input gradient.
  Tensor backward(const Context& ctx, const Tensor& grad_out, std::vector<Tensor>& grads) const;
  std::vector<Tensor> zero_grads() const;

  /// "label.weight" style names paired with the live tensors.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  std::size_t parameter_count() const;

 private:
  std::string name_;
  Precision precision_ = Precision::f64;
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

}  // namespace eolt
