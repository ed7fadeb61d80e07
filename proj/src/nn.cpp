#include "eolt/nn.hpp"

#include <cmath>

#include "eolt/errors.hpp"

namespace eolt {

std::string_view precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

std::optional<Precision> parse_precision(std::string_view name) {
  if (name == "f64") return Precision::f64;
  if (name == "f32") return Precision::f32;
  return std::nullopt;
}

Tensor he_normal(const Shape& shape, double fan_in, Rng& rng) {
  Tensor w(shape);
  const double sd = std::sqrt(2.0 / fan_in);
  for (double& v : w.storage()) v = sd * rng.normal();
  return w;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t padding)
    : weight_(std::move(weight)), bias_(std::move(bias)), stride_(stride), padding_(padding) {
  if (weight_.ndim() != 4 || bias_.size() != weight_.dim(0)) {
    throw DimensionError("Conv2d: weight " + shape_str(weight_.shape()) + " and bias " + shape_str(bias_.shape()));
  }
}

Conv2d Conv2d::init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t padding,
                    Rng& rng) {
  return Conv2d(he_normal({out, in, k, k}, static_cast<double>(in * k * k), rng), Tensor({out}), stride, padding);
}

Tensor Conv2d::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::conv2d(x, weight_, stride_, padding_, bias_);
}

Tensor Conv2d::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const {
  const Tensor& x = ctx.saved.at(0);
  if (!grads.empty()) {
    grads[0] += ops::conv2d_vjp_kernel(x, grad_out, stride_, padding_, weight_.dim(2), weight_.dim(3));
    grads[1] += ops::conv2d_vjp_bias(grad_out);
  }
  return ops::conv2d_vjp_input(grad_out, weight_, stride_, padding_, x.dim(1), x.dim(2));
}

// ---------------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(Tensor weight, Tensor bias, std::size_t stride, std::size_t padding)
    : weight_(std::move(weight)), bias_(std::move(bias)), stride_(stride), padding_(padding) {
  if (weight_.ndim() != 4 || bias_.size() != weight_.dim(1)) {
    throw DimensionError("ConvTranspose2d: weight " + shape_str(weight_.shape()) + " and bias " +
                         shape_str(bias_.shape()));
  }
}

ConvTranspose2d ConvTranspose2d::init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                                      std::size_t padding, Rng& rng) {
  const double reach = static_cast<double>(k) / static_cast<double>(stride);
  return ConvTranspose2d(he_normal({in, out, k, k}, static_cast<double>(in) * reach * reach, rng), Tensor({out}),
                         stride, padding);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::conv_transpose2d(x, weight_, stride_, padding_, bias_);
}

// The transposed convolution is the input-adjoint of conv2d with the same
// kernel, so its own adjoints are plain conv2d and the conv2d kernel VJP
// with the roles of input and output swapped.
Tensor ConvTranspose2d::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const {
  const Tensor& x = ctx.saved.at(0);
  if (!grads.empty()) {
    grads[0] += ops::conv2d_vjp_kernel(grad_out, x, stride_, padding_, weight_.dim(2), weight_.dim(3));
    grads[1] += ops::conv2d_vjp_bias(grad_out);
  }
  return ops::conv2d(grad_out, weight_, stride_, padding_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.ndim() != 2 || bias_.size() != weight_.dim(0)) {
    throw DimensionError("Linear: weight " + shape_str(weight_.shape()) + " and bias " + shape_str(bias_.shape()));
  }
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return Linear(he_normal({out, in}, static_cast<double>(in), rng), Tensor({out}));
}

Linear Linear::zeros(std::size_t in, std::size_t out) { return Linear(Tensor({out, in}), Tensor({out})); }

Tensor Linear::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::linear(x.reshaped({x.size()}), weight_, bias_);
}

Tensor Linear::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const {
  const Tensor& x = ctx.saved.at(0);
  if (!grads.empty()) {
    grads[0] += ops::linear_vjp_weight(x.reshaped({x.size()}), grad_out);
    grads[1] += grad_out;
  }
  return ops::linear_vjp_input(grad_out, weight_).reshaped(x.shape());
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::relu(x);
}
Tensor Relu::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  return ops::relu_vjp(ctx.saved.at(0), grad_out);
}

Tensor Sigmoid::forward(const Tensor& x, Context& ctx) const {
  Tensor y = ops::sigmoid(x);
  ctx.saved = {y};
  return y;
}
Tensor Sigmoid::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  return ops::sigmoid_vjp(ctx.saved.at(0), grad_out);
}

Tensor Clamp01::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::clamp01(x);
}
Tensor Clamp01::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  return ops::clamp01_vjp(ctx.saved.at(0), grad_out);
}

Tensor GlobalAvgPool::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {Tensor({x.ndim()}, std::vector<double>(x.shape().begin(), x.shape().end()))};
  return ops::global_avg_pool(x);
}
Tensor GlobalAvgPool::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  Shape shape;
  for (double d : ctx.saved.at(0).storage()) shape.push_back(static_cast<std::size_t>(d));
  return ops::global_avg_pool_vjp(shape, grad_out);
}

Tensor L2Normalize::forward(const Tensor& x, Context& ctx) const {
  ctx.saved = {x};
  return ops::l2_normalize(x);
}
Tensor L2Normalize::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  return ops::l2_normalize_vjp(ctx.saved.at(0), grad_out);
}

Tensor Affine::forward(const Tensor& x, Context&) const {
  Tensor y = x * scale_;
  for (double& v : y.storage()) v += shift_;
  return y;
}
Tensor Affine::backward(const Context&, const Tensor& grad_out, std::span<Tensor>) const { return grad_out * scale_; }

Tensor TanhSquash::forward(const Tensor& x, Context& ctx) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.5 + 0.5 * std::tanh(2.0 * (x[i] - 0.5));
  ctx.saved = {y};
  return y;
}
Tensor TanhSquash::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  const Tensor& y = ctx.saved.at(0);
  Tensor g(grad_out.shape());
  // d/dz = (1 - tanh^2) with tanh = 2y - 1
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = 2.0 * y[i] - 1.0;
    g[i] = grad_out[i] * (1.0 - t * t);
  }
  return g;
}

Residual::Residual(const Sequential& branch, double gain)
    : branch_(std::make_unique<Sequential>(branch)), gain_(gain) {}

Residual::Residual(const Residual& other) : branch_(std::make_unique<Sequential>(*other.branch_)), gain_(other.gain_) {}

Tensor Residual::forward(const Tensor& x, Context& ctx) const {
  ctx.children.assign(1, {});
  Tensor y = branch_->forward(x, ctx.children[0]);
  y *= gain_;
  y += x;
  return y;
}

Tensor Residual::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor>) const {
  Tensor g = branch_->vjp(ctx.children.at(0), grad_out);
  g *= gain_;
  g += grad_out;
  return g;
}

// ---------------------------------------------------------------- PreActBlock

PreActBlock::PreActBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : conv1_(Conv2d::init(in, out, 3, stride, 1, rng)), conv2_(Conv2d::init(out, out, 3, 1, 1, rng)) {
  if (stride != 1 || in != out) shortcut_ = Conv2d::init(in, out, 1, stride, 0, rng);
}

Tensor PreActBlock::forward(const Tensor& x, Context& ctx) const {
  ctx.children.assign(3, {});
  ctx.saved = {x};
  const Tensor a = ops::relu(x);
  const Tensor h = conv1_.forward(a, ctx.children[0]);
  ctx.saved.push_back(h);
  Tensor y = conv2_.forward(ops::relu(h), ctx.children[1]);
  y += shortcut_ ? shortcut_->forward(x, ctx.children[2]) : x;
  return y;
}

Tensor PreActBlock::backward(const Context& ctx, const Tensor& grad_out, std::span<Tensor> grads) const {
  const Tensor& x = ctx.saved.at(0);
  const Tensor& h = ctx.saved.at(1);
  const bool want = !grads.empty();
  Tensor gh = conv2_.backward(ctx.children[1], grad_out, want ? grads.subspan(2, 2) : std::span<Tensor>{});
  gh = ops::relu_vjp(h, gh);
  Tensor ga = conv1_.backward(ctx.children[0], gh, want ? grads.subspan(0, 2) : std::span<Tensor>{});
  Tensor gx = ops::relu_vjp(x, ga);
  if (shortcut_) {
    gx += shortcut_->backward(ctx.children[2], grad_out, want ? grads.subspan(4, 2) : std::span<Tensor>{});
  } else {
    gx += grad_out;
  }
  return gx;
}

std::vector<Tensor*> PreActBlock::parameters() {
  std::vector<Tensor*> out;
  for (Conv2d* c : {&conv1_, &conv2_}) {
    auto p = c->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (shortcut_) {
    auto p = shortcut_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Tensor*> PreActBlock::parameters() const {
  std::vector<const Tensor*> out;
  for (const Conv2d* c : {&conv1_, &conv2_}) {
    auto p = c->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (shortcut_) {
    auto p = std::as_const(*shortcut_).parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<std::string> PreActBlock::parameter_names() const {
  std::vector<std::string> names = {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"};
  if (shortcut_) {
    names.emplace_back("shortcut.weight");
    names.emplace_back("shortcut.bias");
  }
  return names;
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) : name_(other.name_), precision_(other.precision_) {
  for (const auto& [label, layer] : other.layers_) layers_.emplace_back(label, layer->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Context& ctx) const {
  ctx.children.assign(layers_.size(), {});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].second->forward(h, ctx.children[i]);
    if (precision_ == Precision::f32) round_to_f32(h);
  }
  return h;
}

Tensor Sequential::vjp(const Context& ctx, const Tensor& grad_out) const {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i].second->backward(ctx.children.at(i), g, {});
    if (precision_ == Precision::f32) round_to_f32(g);
  }
  return g;
}

bool Sequential::straight_through() const {
  for (const auto& entry : layers_)
    if (entry.second->straight_through()) return true;
  return false;
}

Tensor Sequential::backward(const Context& ctx, const Tensor& grad_out, std::vector<Tensor>& grads) const {
  std::vector<std::size_t> offsets(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    offsets[i + 1] = offsets[i] + std::as_const(*layers_[i].second).parameters().size();
  if (grads.size() != offsets.back()) throw std::invalid_argument("Sequential::backward: gradient buffer mismatch");
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::span<Tensor> slot(grads.data() + offsets[i], offsets[i + 1] - offsets[i]);
    g = layers_[i].second->backward(ctx.children.at(i), g, slot);
    if (precision_ == Precision::f32) round_to_f32(g);
  }
  return g;
}

std::vector<Tensor> Sequential::zero_grads() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(Tensor::zeros_like(*t));
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [label, layer] : layers_) {
    const auto names = layer->parameter_names();
    const auto params = layer->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) out.emplace_back(label + "." + names[k], params[k]);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Sequential::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [label, layer] : layers_) {
    const Layer& l = *layer;
    const auto names = l.parameter_names();
    const auto params = l.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) out.emplace_back(label + "." + names[k], params[k]);
  }
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->size();
  return n;
}

}  // namespace eolt
