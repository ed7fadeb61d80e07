#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eolt/ops.hpp"
#include "eolt/rng.hpp"
#include "eolt/tensor.hpp"

namespace eolt {

enum class Category : std::uint8_t { noise, color_space, blur, stylization, compression, geometric };

inline constexpr std::array<Category, 6> kCategories = {Category::noise,       Category::color_space,
                                                       Category::blur,        Category::stylization,
                                                       Category::compression, Category::geometric};

enum class TransformId : std::uint8_t {
  normal, uniform, speckle, poisson, salt, pepper,              // noise
  hsv, lab, xyz, yuv, graymix,                                  // colour space
  boxblur, medblur, motionblur, gaussblur,                      // blur
  brightness, contrast, saturation, hue, gamma, solarize, sharp,  // stylization
  jpeg, fft, precision,                                         // compression
  affine, crop, hflip, vflip, swirl,                            // geometric
};

inline constexpr int kTransformCount = 30;
inline constexpr int kMagnitudes = 9;

std::span<const TransformId> all_transforms();
std::string_view transform_name(TransformId id);
std::optional<TransformId> parse_transform(std::string_view name);
Category category_of(TransformId id);
std::string_view category_name(Category c);
/// Column label used in category tables, e.g. "Color-space".
std::string_view category_label(Category c);
std::vector<TransformId> transforms_in(Category c);

/// Stage whose VJP is a straight-through estimate rather than exact.
bool is_straight_through(TransformId id);
/// Stage that consumes randomness.
bool is_stochastic(TransformId id);
/// Human-readable magnitude grid, e.g. "sigma = 0.5 + 0.25*i".
std::string magnitude_grid(TransformId id);
/// Smallest H and W the transform accepts at this magnitude.
std::size_t min_extent(TransformId id, int magnitude);

struct SubPolicy {
  TransformId transform = TransformId::normal;
  int magnitude = 0;

  friend bool operator==(const SubPolicy&, const SubPolicy&) = default;
};

/// "gaussblur@4"
std::string subpolicy_name(const SubPolicy& sp);

/// Ordered list of transformations, each discretised into kMagnitudes
/// sub-policies. Sub-policy index i decodes to (entries[i / 9], i % 9).
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<TransformId> entries);
  static Catalog full();

  const std::vector<TransformId>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t logit_count() const { return entries_.size() * kMagnitudes; }
  bool contains(TransformId id) const;

  SubPolicy decode(std::size_t index) const;
  std::size_t encode(const SubPolicy& sp) const;

  /// One line per transform: name, category and magnitude grid.
  std::string describe() const;
  std::uint64_t fingerprint() const;

 private:
  std::vector<TransformId> entries_;
};

/// Everything vjp needs from a forward application. `draw` is the realised
/// randomness; replaying apply_with_draw with it reproduces the output.
struct TransformContext {
  SubPolicy sp;
  Tensor input;
  Tensor pre_clamp;
  Tensor draw;
  Tensor aux;
};

struct TransformOutput {
  Tensor image;
  TransformContext ctx;
};

/// Applies a sub-policy to a 3xHxW image in [0, 1]; output is clamped to [0, 1].
TransformOutput apply(const Tensor& image, const SubPolicy& sp, Rng& rng);
/// Deterministic replay with a previously realised draw.
TransformOutput apply_with_draw(const Tensor& image, const SubPolicy& sp, const Tensor& draw);
/// Forward only, no context retained.
Tensor apply_image(const Tensor& image, const SubPolicy& sp, Rng& rng);
/// Gradient with respect to the transform input.
Tensor vjp(const TransformContext& ctx, const Tensor& grad_out);

/// A sub-policy with its randomness frozen, viewed as a DiffStage.
class TransformStage : public DiffStage {
 public:
  TransformStage(SubPolicy sp, Tensor draw) : sp_(sp), draw_(std::move(draw)) {}
  /// Realises a draw for images of the given shape.
  static TransformStage sampled(SubPolicy sp, const Shape& image_shape, Rng& rng);

  std::string name() const override { return subpolicy_name(sp_); }
  Tensor forward(const Tensor& x, Context& ctx) const override;
  Tensor vjp(const Context& ctx, const Tensor& grad_out) const override;
  bool straight_through() const override { return is_straight_through(sp_.transform); }

 private:
  SubPolicy sp_;
  Tensor draw_;
};

enum class SplitKind { all_seen, intra, inter };

std::string_view split_name(SplitKind kind);
std::optional<SplitKind> parse_split(std::string_view name);

/// Perturbation (train), validation and test transformation sets.
struct Split {
  std::vector<TransformId> train;
  std::vector<TransformId> val;
  std::vector<TransformId> test;
};

Split build_split(SplitKind kind);

}  // namespace eolt
