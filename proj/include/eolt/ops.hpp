#pragma once

// Differentiable primitives. Each forward op has a matching vector-Jacobian
// product; ops are pure functions of their arguments.

#include <cstddef>
#include <string>
#include <vector>

#include "eolt/tensor.hpp"

namespace eolt {

/// Values a stage saves during forward for its VJP.
struct Context {
  std::vector<Tensor> saved;
  std::vector<Context> children;
};

/// A pipeline stage with a forward pass and a vector-Jacobian product.
///
/// vjp must return a tensor shaped like the forward input and must be a pure
/// function of (ctx, grad_out).
class DiffStage {
 public:
  virtual ~DiffStage() = default;
  virtual std::string name() const = 0;
  virtual Tensor forward(const Tensor& x, Context& ctx) const = 0;
  virtual Tensor vjp(const Context& ctx, const Tensor& grad_out) const = 0;
  /// True when vjp is a straight-through (identity-like) estimate rather than
  /// the exact derivative; gradient checks skip such stages.
  virtual bool straight_through() const { return false; }

  Tensor operator()(const Tensor& x) const {
    Context ctx;
    return forward(x, ctx);
  }
};

namespace ops {

/// Zero-padded cross-correlation. input CxHxW, kernel OxCxKhxKw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              const Tensor& bias = {});
Tensor conv2d_vjp_input(const Tensor& grad_out, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        std::size_t in_h, std::size_t in_w);
Tensor conv2d_vjp_kernel(const Tensor& input, const Tensor& grad_out, std::size_t stride, std::size_t padding,
                         std::size_t kh, std::size_t kw);
/// Sum of grad_out over spatial positions, one entry per output channel.
Tensor conv2d_vjp_bias(const Tensor& grad_out);

/// Transposed convolution; kernel CinxCoutxKhxKw, output extent
/// (in-1)*stride - 2*padding + K.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        const Tensor& bias = {});

/// w·x + b. input n, weight m x n, bias m (may be empty).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {});
Tensor linear_vjp_input(const Tensor& grad_out, const Tensor& weight);
Tensor linear_vjp_weight(const Tensor& input, const Tensor& grad_out);

Tensor relu(const Tensor& input);
Tensor relu_vjp(const Tensor& input, const Tensor& grad_out);

Tensor sigmoid(const Tensor& input);
/// VJP given the forward output.
Tensor sigmoid_vjp(const Tensor& output, const Tensor& grad_out);

/// CxHxW -> C.
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_vjp(const Shape& input_shape, const Tensor& grad_out);

/// Max-subtracted softmax over a flat vector.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
/// VJP given the forward output.
Tensor softmax_vjp(const Tensor& probs, const Tensor& grad_out);

Tensor clamp01(const Tensor& input);
/// Passes the gradient where 0 <= input <= 1, zero where the clamp was active.
Tensor clamp01_vjp(const Tensor& input, const Tensor& grad_out);

/// Bilinear sampling with border replication. grid H'xW'x2 of (x, y) pixel
/// coordinates. The grid is a constant: only the input receives a gradient.
Tensor bilinear_grid_sample(const Tensor& input, const Tensor& grid);
Tensor bilinear_grid_sample_vjp(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w);

/// Identity sampling grid of size h x w.
Tensor identity_grid(std::size_t h, std::size_t w);

/// Bilinear resize of a CxHxW image (align-corners convention).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// v / ||v||, and its VJP given the forward input.
Tensor l2_normalize(const Tensor& input);
Tensor l2_normalize_vjp(const Tensor& input, const Tensor& grad_out);

/// sign with sign(0) = 0.
Tensor sign(const Tensor& input);

}  // namespace ops
}  // namespace eolt
