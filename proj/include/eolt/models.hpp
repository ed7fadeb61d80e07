#pragma once

// Fixed-weight surrogate networks: the face-swap generator F and the
// identity embedder used by the similarity metric.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "eolt/nn.hpp"

namespace eolt {

struct ModelDescriptor {
  std::string name;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;

  /// "blur-bottleneck/seed=3/f64"
  std::string str() const;
};

enum class SwapVariant { toy, blur_bottleneck };

std::string_view swap_variant_name(SwapVariant v);
std::optional<SwapVariant> parse_swap_variant(std::string_view name);

/// Residual encoder-decoder with frozen random weights:
/// F(x) = clamp01(squash(x + g * dec(enc(x)))). The blur-bottleneck variant
/// adds a second residual edit whose encoder sees a fixed Gaussian blur of its
/// input. H and W must be multiples of 4 and at least 8.
class SwapModel : public DiffStage {
 public:
  explicit SwapModel(std::uint64_t seed = 0, SwapVariant variant = SwapVariant::toy,
                     Precision precision = Precision::f64);

  std::string name() const override { return descriptor_.str(); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor vjp(const Context& ctx, const Tensor& grad_out) const override;

  /// Swap with an optional target face. The target is accepted for interface
  /// compatibility with conditioned generators and is currently unused.
  Tensor swap(const Tensor& source, const Tensor* target = nullptr) const;

  const ModelDescriptor& descriptor() const { return descriptor_; }
  SwapVariant variant() const { return variant_; }
  const Sequential& network() const { return net_; }

 private:
  void check_shape(const Tensor& x) const;

  ModelDescriptor descriptor_;
  SwapVariant variant_;
  Sequential net_;
};

/// Maps an image to a unit vector of dimension 64.
class IdentityEmbedder : public DiffStage {
 public:
  static constexpr std::size_t kDim = 64;

  explicit IdentityEmbedder(std::uint64_t seed = 0, Precision precision = Precision::f64);

  std::string name() const override { return descriptor_.str(); }
  Tensor forward(const Tensor& x, Context& ctx) const override { return net_.forward(x, ctx); }
  Tensor vjp(const Context& ctx, const Tensor& grad_out) const override { return net_.vjp(ctx, grad_out); }

  Tensor embed(const Tensor& x) const { return net_(x); }
  const ModelDescriptor& descriptor() const { return descriptor_; }

 private:
  ModelDescriptor descriptor_;
  Sequential net_;
};

/// Cosine similarity of two vectors.
double cosine(const Tensor& a, const Tensor& b);
/// cos(embed(a), embed(b)).
double id_similarity(const IdentityEmbedder& embedder, const Tensor& a, const Tensor& b);

/// Per-channel affine map y_c = a_c * x_c + b_c. Linear, unclamped; used
/// where attacks need closed-form behaviour.
class LinearToyModel : public DiffStage {
 public:
  LinearToyModel(std::array<double, 3> gain, std::array<double, 3> offset) : gain_(gain), offset_(offset) {}

  std::string name() const override { return "linear-toy"; }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor vjp(const Context& ctx, const Tensor& grad_out) const override;

 private:
  std::array<double, 3> gain_, offset_;
};

}  // namespace eolt
