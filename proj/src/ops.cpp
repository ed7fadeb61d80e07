#include "eolt/ops.hpp"

#include <algorithm>
#include <cmath>

#include "eolt/errors.hpp"
#include "eolt/kernels.hpp"

namespace eolt::ops {

namespace {

void check_conv(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  if (input.ndim() != 3 || kernel.ndim() != 4 || input.dim(0) != kernel.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              const Tensor& bias) {
  check_conv(input, kernel, stride);
  if (!bias.empty() && bias.size() != kernel.dim(0)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " vs kernel " + shape_str(kernel.shape()));
  }
  const kernels::ConvGeometry geo{stride, padding};
  if (kernels::conv_out_extent(input.dim(1), kernel.dim(2), geo) == 0 ||
      kernels::conv_out_extent(input.dim(2), kernel.dim(3), geo) == 0) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  return kernels::parallel::conv2d_forward(input, kernel, bias, geo);
}

Tensor conv2d_vjp_input(const Tensor& grad_out, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        std::size_t in_h, std::size_t in_w) {
  if (grad_out.ndim() != 3 || kernel.ndim() != 4 || grad_out.dim(0) != kernel.dim(0)) {
    throw DimensionError("conv2d vjp: grad " + shape_str(grad_out.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  return kernels::parallel::conv2d_backward_input(grad_out, kernel, {stride, padding}, in_h, in_w);
}

Tensor conv2d_vjp_kernel(const Tensor& input, const Tensor& grad_out, std::size_t stride, std::size_t padding,
                         std::size_t kh, std::size_t kw) {
  return kernels::parallel::conv2d_backward_weight(input, grad_out, {stride, padding}, kh, kw);
}

Tensor conv2d_vjp_bias(const Tensor& grad_out) {
  const std::size_t O = grad_out.dim(0), n = grad_out.dim(1) * grad_out.dim(2);
  Tensor gb({O});
  for (std::size_t o = 0; o < O; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += grad_out[o * n + i];
    gb[o] = s;
  }
  return gb;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        const Tensor& bias) {
  if (input.ndim() != 3 || kernel.ndim() != 4 || input.dim(0) != kernel.dim(0)) {
    throw DimensionError("conv_transpose2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  const long oh = static_cast<long>((input.dim(1) - 1) * stride + kernel.dim(2)) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((input.dim(2) - 1) * stride + kernel.dim(3)) - 2 * static_cast<long>(padding);
  if (oh <= 0 || ow <= 0) throw DimensionError("conv_transpose2d: empty output");
  Tensor out = kernels::parallel::conv2d_backward_input(input, kernel, {stride, padding}, static_cast<std::size_t>(oh),
                                                        static_cast<std::size_t>(ow));
  if (!bias.empty()) {
    const std::size_t n = out.dim(1) * out.dim(2);
    for (std::size_t c = 0; c < out.dim(0); ++c)
      for (std::size_t i = 0; i < n; ++i) out[c * n + i] += bias[c];
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2 || input.size() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (!bias.empty() && bias.size() != m) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = bias.empty() ? 0.0 : bias[i];
    const double* row = weight.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * input[j];
    out[i] = acc;
  }
  return out;
}

Tensor linear_vjp_input(const Tensor& grad_out, const Tensor& weight) {
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (grad_out.size() != m) {
    throw DimensionError("linear vjp: grad " + shape_str(grad_out.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  Tensor gin({n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = weight.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) gin[j] += row[j] * grad_out[i];
  }
  return gin;
}

Tensor linear_vjp_weight(const Tensor& input, const Tensor& grad_out) {
  const std::size_t m = grad_out.size(), n = input.size();
  Tensor gw({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) gw[i * n + j] = grad_out[i] * input[j];
  return gw;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_vjp(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu vjp");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-input[i]));
  return out;
}

Tensor sigmoid_vjp(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "sigmoid vjp");
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  return g;
}

Tensor global_avg_pool(const Tensor& input) {
  require_chw(input, "global_avg_pool");
  const std::size_t C = input.dim(0), n = input.dim(1) * input.dim(2);
  Tensor out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += input[c * n + i];
    out[c] = s / static_cast<double>(n);
  }
  return out;
}

Tensor global_avg_pool_vjp(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.size() != input_shape[0]) {
    throw DimensionError("global_avg_pool vjp: grad " + shape_str(grad_out.shape()) + " vs input " +
                         shape_str(input_shape));
  }
  const std::size_t n = input_shape[1] * input_shape[2];
  Tensor g(input_shape);
  for (std::size_t c = 0; c < input_shape[0]; ++c)
    for (std::size_t i = 0; i < n; ++i) g[c * n + i] = grad_out[c] / static_cast<double>(n);
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  Tensor out(logits.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out.storage()) v /= z;
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("log_softmax: empty input");
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

Tensor softmax_vjp(const Tensor& probs, const Tensor& grad_out) {
  require_same_shape(probs, grad_out, "softmax vjp");
  const double inner = dot(probs, grad_out);
  Tensor g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_out[i] - inner);
  return g;
}

Tensor clamp01(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::clamp(input[i], 0.0, 1.0);
  return out;
}

Tensor clamp01_vjp(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "clamp01 vjp");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = (input[i] >= 0.0 && input[i] <= 1.0) ? grad_out[i] : 0.0;
  return g;
}

Tensor bilinear_grid_sample(const Tensor& input, const Tensor& grid) {
  require_chw(input, "grid_sample");
  if (grid.ndim() != 3 || grid.dim(2) != 2) {
    throw DimensionError("grid_sample: grid must be H'xW'x2, got " + shape_str(grid.shape()));
  }
  return kernels::parallel::grid_sample_forward(input, grid);
}

Tensor bilinear_grid_sample_vjp(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w) {
  if (grid.ndim() != 3 || grid.dim(2) != 2) {
    throw DimensionError("grid_sample vjp: grid must be H'xW'x2, got " + shape_str(grid.shape()));
  }
  if (grad_out.ndim() != 3 || grad_out.dim(1) != grid.dim(0) || grad_out.dim(2) != grid.dim(1)) {
    throw DimensionError("grid_sample vjp: grad " + shape_str(grad_out.shape()) + " vs grid " +
                         shape_str(grid.shape()));
  }
  return kernels::parallel::grid_sample_backward(grad_out, grid, in_h, in_w);
}

Tensor identity_grid(std::size_t h, std::size_t w) {
  Tensor grid({h, w, 2});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      grid[(y * w + x) * 2] = static_cast<double>(x);
      grid[(y * w + x) * 2 + 1] = static_cast<double>(y);
    }
  }
  return grid;
}

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_chw(input, "resize");
  const std::size_t H = input.dim(1), W = input.dim(2);
  if (H == out_h && W == out_w) return input;
  Tensor grid({out_h, out_w, 2});
  const double sy = out_h > 1 ? static_cast<double>(H - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(W - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      grid[(y * out_w + x) * 2] = static_cast<double>(x) * sx;
      grid[(y * out_w + x) * 2 + 1] = static_cast<double>(y) * sy;
    }
  }
  return bilinear_grid_sample(input, grid);
}

Tensor l2_normalize(const Tensor& input) {
  const double n = l2_norm(input);
  if (!(n > 0.0)) throw NonFiniteError("l2_normalize: zero-norm input");
  return input * (1.0 / n);
}

Tensor l2_normalize_vjp(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "l2_normalize vjp");
  const double n = l2_norm(input);
  const double proj = dot(input, grad_out) / (n * n);
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = (grad_out[i] - input[i] * proj) / n;
  return g;
}

Tensor sign(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? 1.0 : (input[i] < 0.0 ? -1.0 : 0.0);
  return out;
}

}  // namespace eolt::ops
