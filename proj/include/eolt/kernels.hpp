#pragma once

// Compute kernels behind the differentiable ops. Every kernel exists twice:
// `serial` holds the textbook loop nest kept as the reference, `parallel`
// holds the version the library dispatches to: convolutions as im2col plus a
// single-threaded GEMM, everything else OpenMP loops. Each output element of
// a parallel kernel is accumulated by exactly one thread in a fixed order, so
// results do not depend on the thread count.

#include <cstddef>
#include <span>

#include "eolt/tensor.hpp"

namespace eolt::kernels {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a strided, zero-padded correlation.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

namespace serial {
// input CxHxW, weight OxCxKhxKw, bias O or empty -> OxH'xW'
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& geo);
// Transpose of conv2d_forward w.r.t. its input: grad OxH'xW' -> CxHxW.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& geo,
                             std::size_t in_h, std::size_t in_w);
Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geo,
                              std::size_t kh, std::size_t kw);
// Bilinear sampling with border replication; grid H'xW'x2 holds (x, y) source coordinates.
Tensor grid_sample_forward(const Tensor& input, const Tensor& grid);
Tensor grid_sample_backward(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w);
// 1-D correlation with replicated borders along columns (axis 2) or rows (axis 1).
Tensor filter_axis(const Tensor& input, std::span<const double> taps, int axis);
Tensor filter_axis_adjoint(const Tensor& grad_out, std::span<const double> taps, int axis);
}  // namespace serial

namespace parallel {
// input CxHxW, weight OxCxKhxKw, bias O or empty -> OxH'xW'
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& geo);
// Transpose of conv2d_forward w.r.t. its input: grad OxH'xW' -> CxHxW.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& geo,
                             std::size_t in_h, std::size_t in_w);
Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geo,
                              std::size_t kh, std::size_t kw);
// Bilinear sampling with border replication; grid H'xW'x2 holds (x, y) source coordinates.
Tensor grid_sample_forward(const Tensor& input, const Tensor& grid);
Tensor grid_sample_backward(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w);
// 1-D correlation with replicated borders along columns (axis 2) or rows (axis 1).
Tensor filter_axis(const Tensor& input, std::span<const double> taps, int axis);
Tensor filter_axis_adjoint(const Tensor& grad_out, std::span<const double> taps, int axis);
}  // namespace parallel

/// Number of worker threads the parallel kernels and the harness use.
int worker_count();
void set_worker_count(int n);

}  // namespace eolt::kernels
