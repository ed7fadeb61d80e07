#include "eolt/models.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "eolt/errors.hpp"
#include "eolt/kernels.hpp"

namespace eolt {

std::string ModelDescriptor::str() const {
  return name + "/seed=" + std::to_string(seed) + "/" + std::string(precision_name(precision));
}

std::string_view swap_variant_name(SwapVariant v) { return v == SwapVariant::toy ? "toy" : "blur-bottleneck"; }

std::optional<SwapVariant> parse_swap_variant(std::string_view name) {
  if (name == "toy") return SwapVariant::toy;
  if (name == "blur-bottleneck") return SwapVariant::blur_bottleneck;
  return std::nullopt;
}

namespace {

// Gaussian blur with sigma 1.5, the fixed front end of the bottleneck variant.
class FixedGaussBlur : public DiffStage {
 public:
  FixedGaussBlur() {
    const int radius = 5;  // ceil(3 * 1.5)
    taps_.resize(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      taps_[static_cast<std::size_t>(k + radius)] = std::exp(-k * k / (2.0 * 1.5 * 1.5));
      total += taps_[static_cast<std::size_t>(k + radius)];
    }
    for (double& t : taps_) t /= total;
  }
  std::string name() const override { return "gaussblur(1.5)"; }
  Tensor forward(const Tensor& x, Context&) const override {
    return kernels::parallel::filter_axis(kernels::parallel::filter_axis(x, taps_, 2), taps_, 1);
  }
  Tensor vjp(const Context&, const Tensor& g) const override {
    return kernels::parallel::filter_axis_adjoint(kernels::parallel::filter_axis_adjoint(g, taps_, 1), taps_, 2);
  }

 private:
  std::vector<double> taps_;
};

}  // namespace

namespace {

constexpr double kEditGain = 5.0;
constexpr double kCoarseGain = 5.0;
// First-layer units stay silent until a local contrast pattern exceeds this.
constexpr double kDetectorThreshold = 0.3;

// Zero-mean first-layer kernels with a negative bias: flat and slowly varying
// regions produce no edit, structured contrast above the threshold does.
Sequential edit_branch(const std::string& name, const Rng& root, bool blurred, Precision precision) {
  Rng r1 = root.child("enc1"), r2 = root.child("enc2"), r3 = root.child("dec1"), r4 = root.child("dec2");
  Conv2d enc1 = Conv2d::init(3, 16, 3, 2, 1, r1);
  Tensor& w = *enc1.parameters()[0];
  for (std::size_t o = 0; o < w.size(); o += 9) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 9; ++k) mean += w[o + k] / 9.0;
    for (std::size_t k = 0; k < 9; ++k) w[o + k] -= mean;
  }
  for (double& b : enc1.parameters()[1]->storage()) b = -kDetectorThreshold;
  Sequential body(name);
  if (blurred) body.add("blur", StageLayer(std::make_shared<FixedGaussBlur>()));
  body.add("enc1", std::move(enc1))
      .add("relu1", Relu{})
      .add("enc2", Conv2d::init(16, 32, 3, 2, 1, r2))
      .add("relu2", Relu{})
      .add("dec1", ConvTranspose2d::init(32, 16, 4, 2, 1, r3))
      .add("relu3", Relu{})
      .add("dec2", ConvTranspose2d::init(16, 3, 4, 2, 1, r4));
  body.set_precision(precision);
  return body;
}

}  // namespace

SwapModel::SwapModel(std::uint64_t seed, SwapVariant variant, Precision precision)
    : descriptor_{std::string(swap_variant_name(variant)), seed, precision}, variant_(variant), net_("swap") {
  Rng root = Rng(seed).child("swap-model");
  // The skip path carries the source through; the branches add edits. The
  // bottleneck variant adds a second branch that only sees a blurred input.
  net_.add("body", Residual(edit_branch("swap-body", root, false, precision), kEditGain));
  if (variant == SwapVariant::blur_bottleneck)
    net_.add("coarse", Residual(edit_branch("swap-coarse", root.child("coarse"), true, precision), kCoarseGain));
  net_.add("squash", TanhSquash{}).add("clamp", Clamp01{});
  net_.set_precision(precision);
}

void SwapModel::check_shape(const Tensor& x) const {
  if (x.ndim() != 3 || x.dim(0) != 3) {
    throw DimensionError("swap model expects 3xHxW, got " + shape_str(x.shape()));
  }
  if (x.dim(1) < 8 || x.dim(2) < 8 || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0) {
    throw UnsupportedSizeError("swap model needs H, W >= 8 and divisible by 4, got " + shape_str(x.shape()));
  }
}

Tensor SwapModel::forward(const Tensor& x, Context& ctx) const {
  check_shape(x);
  return net_.forward(x, ctx);
}

Tensor SwapModel::vjp(const Context& ctx, const Tensor& grad_out) const { return net_.vjp(ctx, grad_out); }

Tensor SwapModel::swap(const Tensor& source, const Tensor*) const {
  Context ctx;
  return forward(source, ctx);
}

IdentityEmbedder::IdentityEmbedder(std::uint64_t seed, Precision precision)
    : descriptor_{"embedder", seed, precision}, net_("embedder") {
  Rng root = Rng(seed).child("embedder");
  Rng r1 = root.child("conv1"), r2 = root.child("conv2"), r3 = root.child("proj");
  // Centre the pixels so the first layer sees signed contrast rather than a
  // large common offset. The projection bias keeps flat images off the origin.
  net_.add("center", Affine(2.0, -1.0))
      .add("conv1", Conv2d::init(3, 8, 3, 2, 1, r1))
      .add("relu1", Relu{})
      .add("conv2", Conv2d::init(8, 16, 3, 2, 1, r2))
      .add("relu2", Relu{})
      .add("pool", GlobalAvgPool{})
      .add("proj", Linear(he_normal({kDim, 16}, 16.0, r3), 0.1 * he_normal({kDim}, 16.0, r3)))
      .add("norm", L2Normalize{});
  net_.set_precision(precision);
}

double cosine(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine");
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double id_similarity(const IdentityEmbedder& embedder, const Tensor& a, const Tensor& b) {
  return cosine(embedder.embed(a), embedder.embed(b));
}

Tensor LinearToyModel::forward(const Tensor& x, Context&) const {
  require_chw(x, "LinearToyModel");
  Tensor y(x.shape());
  const std::size_t n = x.dim(1) * x.dim(2);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < n; ++i) y[c * n + i] = gain_[c % 3] * x[c * n + i] + offset_[c % 3];
  return y;
}

Tensor LinearToyModel::vjp(const Context&, const Tensor& grad_out) const {
  Tensor g(grad_out.shape());
  const std::size_t n = grad_out.dim(1) * grad_out.dim(2);
  for (std::size_t c = 0; c < grad_out.dim(0); ++c)
    for (std::size_t i = 0; i < n; ++i) g[c * n + i] = gain_[c % 3] * grad_out[c * n + i];
  return g;
}

}  // namespace eolt
