#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// GEMM order must not depend on the OpenMP thread count.
#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include "eolt/kernels.hpp"

namespace eolt::kernels {

int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_worker_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace parallel {

namespace {

// Range of output columns whose source column ox*stride + k - pad lies in [0, extent).
struct Span1 {
  std::size_t lo, hi;
};

Span1 valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t k, const ConvGeometry& geo) {
  const long s = static_cast<long>(geo.stride);
  const long shift = static_cast<long>(k) - static_cast<long>(geo.padding);
  long lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  long hi = (static_cast<long>(in_extent) - 1 - shift);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long>(hi, static_cast<long>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Unfolds the receptive fields into a (C*KH*KW) x (OH*OW) matrix, zeros where
// the window leaves the image.
RowMat im2col(const Tensor& input, std::size_t KH, std::size_t KW, std::size_t OH, std::size_t OW,
              const ConvGeometry& geo) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t s = geo.stride;
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(C * KH * KW), static_cast<Eigen::Index>(OH * OW));
  const double* in = input.data();
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(C); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const Span1 rows = valid_outputs(OH, H, ky, geo);
      for (std::size_t kx = 0; kx < KW; ++kx) {
        const Span1 cols = valid_outputs(OW, W, kx, geo);
        double* dst = col.data() + ((c * KH + ky) * KW + kx) * OH * OW;
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const double* src = in + (c * H + oy * s + ky - geo.padding) * W + kx - geo.padding;
          double* row = dst + oy * OW;
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) row[ox] = src[ox * s];
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatters column entries back onto the image. Each thread
// owns one channel, so every output element is summed in a fixed order.
Tensor col2im(const RowMat& col, std::size_t C, std::size_t H, std::size_t W, std::size_t KH, std::size_t KW,
              std::size_t OH, std::size_t OW, const ConvGeometry& geo) {
  const std::size_t s = geo.stride;
  Tensor out({C, H, W});
  double* dst = out.data();
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(C); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    for (std::size_t ky = 0; ky < KH; ++ky) {
      const Span1 rows = valid_outputs(OH, H, ky, geo);
      for (std::size_t kx = 0; kx < KW; ++kx) {
        const Span1 cols = valid_outputs(OW, W, kx, geo);
        const double* src = col.data() + ((c * KH + ky) * KW + kx) * OH * OW;
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          double* row = dst + (c * H + oy * s + ky - geo.padding) * W + kx - geo.padding;
          const double* crow = src + oy * OW;
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) row[ox * s] += crow[ox];
        }
      }
    }
  }
  return out;
}

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& geo) {
  const std::size_t H = input.dim(1), W = input.dim(2);
  const std::size_t O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t OH = conv_out_extent(H, KH, geo), OW = conv_out_extent(W, KW, geo);
  const std::size_t K = weight.size() / O;
  const RowMat col = im2col(input, KH, KW, OH, OW, geo);
  Tensor out({O, OH, OW});
  MatMap y(out.data(), idx(O), idx(OH * OW));
  y.noalias() = ConstMatMap(weight.data(), idx(O), idx(K)) * col;
  if (!bias.empty()) y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), idx(O));
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& geo,
                             std::size_t in_h, std::size_t in_w) {
  const std::size_t O = weight.dim(0), C = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t OH = grad_out.dim(1), OW = grad_out.dim(2);
  RowMat col(idx(C * KH * KW), idx(OH * OW));
  col.noalias() = ConstMatMap(weight.data(), idx(O), idx(C * KH * KW)).transpose() *
                  ConstMatMap(grad_out.data(), idx(O), idx(OH * OW));
  return col2im(col, C, in_h, in_w, KH, KW, OH, OW, geo);
}

Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geo,
                              std::size_t kh, std::size_t kw) {
  const std::size_t C = input.dim(0);
  const std::size_t O = grad_out.dim(0), OH = grad_out.dim(1), OW = grad_out.dim(2);
  const RowMat col = im2col(input, kh, kw, OH, OW, geo);
  Tensor gw({O, C, kh, kw});
  MatMap(gw.data(), idx(O), idx(C * kh * kw)).noalias() =
      ConstMatMap(grad_out.data(), idx(O), idx(OH * OW)) * col.transpose();
  return gw;
}

namespace {

inline void bilinear_setup(double x, double y, std::size_t h, std::size_t w, std::size_t& x0, std::size_t& x1,
                           std::size_t& y0, std::size_t& y1, double& wx, double& wy) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x0 = static_cast<std::size_t>(x);
  y0 = static_cast<std::size_t>(y);
  x1 = std::min(x0 + 1, w - 1);
  y1 = std::min(y0 + 1, h - 1);
  wx = x - static_cast<double>(x0);
  wy = y - static_cast<double>(y0);
}

}  // namespace

Tensor grid_sample_forward(const Tensor& input, const Tensor& grid) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = grid.dim(0), OW = grid.dim(1);
  Tensor out({C, OH, OW});
  const double* in = input.data();
  double* dst = out.data();

#pragma omp parallel for schedule(static)
  for (long yl = 0; yl < static_cast<long>(OH); ++yl) {
    const std::size_t y = static_cast<std::size_t>(yl);
    for (std::size_t x = 0; x < OW; ++x) {
      const double* g = grid.data() + (y * OW + x) * 2;
      std::size_t x0, x1, y0, y1;
      double wx, wy;
      bilinear_setup(g[0], g[1], H, W, x0, x1, y0, y1, wx, wy);
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx, w10 = wy * (1 - wx), w11 = wy * wx;
      for (std::size_t c = 0; c < C; ++c) {
        const double* p = in + c * H * W;
        dst[(c * OH + y) * OW + x] =
            w00 * p[y0 * W + x0] + w01 * p[y0 * W + x1] + w10 * p[y1 * W + x0] + w11 * p[y1 * W + x1];
      }
    }
  }
  return out;
}

Tensor grid_sample_backward(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w) {
  const std::size_t C = grad_out.dim(0), OH = grid.dim(0), OW = grid.dim(1);
  Tensor gin({C, in_h, in_w});
  double* dst = gin.data();

#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(C); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    double* p = dst + c * in_h * in_w;
    const double* go = grad_out.data() + c * OH * OW;
    for (std::size_t i = 0; i < OH * OW; ++i) {
      const double* g = grid.data() + i * 2;
      std::size_t x0, x1, y0, y1;
      double wx, wy;
      bilinear_setup(g[0], g[1], in_h, in_w, x0, x1, y0, y1, wx, wy);
      p[y0 * in_w + x0] += (1 - wy) * (1 - wx) * go[i];
      p[y0 * in_w + x1] += (1 - wy) * wx * go[i];
      p[y1 * in_w + x0] += wy * (1 - wx) * go[i];
      p[y1 * in_w + x1] += wy * wx * go[i];
    }
  }
  return gin;
}

Tensor filter_axis(const Tensor& input, std::span<const double> taps, int axis) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t K = taps.size(), r = K / 2;
  Tensor out(input.shape());
  const double* in = input.data();
  double* dst = out.data();

  if (axis == 2) {
#pragma omp parallel
    {
      std::vector<double> padded(W + 2 * r);
#pragma omp for schedule(static)
      for (long line = 0; line < static_cast<long>(C * H); ++line) {
        const double* src = in + static_cast<std::size_t>(line) * W;
        for (std::size_t j = 0; j < W + 2 * r; ++j) {
          const long sx = std::clamp<long>(static_cast<long>(j) - static_cast<long>(r), 0, static_cast<long>(W) - 1);
          padded[j] = src[sx];
        }
        double* row = dst + static_cast<std::size_t>(line) * W;
        for (std::size_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::size_t k = 0; k < K; ++k) acc += taps[k] * padded[x + k];
          row[x] = acc;
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (long line = 0; line < static_cast<long>(C * H); ++line) {
      const std::size_t c = static_cast<std::size_t>(line) / H, y = static_cast<std::size_t>(line) % H;
      double* row = dst + static_cast<std::size_t>(line) * W;
      for (std::size_t k = 0; k < K; ++k) {
        const long sy = std::clamp<long>(static_cast<long>(y + k) - static_cast<long>(r), 0, static_cast<long>(H) - 1);
        const double* src = in + (c * H + static_cast<std::size_t>(sy)) * W;
        const double t = taps[k];
        for (std::size_t x = 0; x < W; ++x) row[x] += t * src[x];
      }
    }
  }
  return out;
}

Tensor filter_axis_adjoint(const Tensor& grad_out, std::span<const double> taps, int axis) {
  const std::size_t C = grad_out.dim(0), H = grad_out.dim(1), W = grad_out.dim(2);
  const long K = static_cast<long>(taps.size()), r = K / 2;
  Tensor gin(grad_out.shape());
  const double* g = grad_out.data();
  double* dst = gin.data();
  const std::size_t n = axis == 2 ? W : H;

  // Padded position j reads source clamp(j - r); output i reads padded i..i+K-1.
  // Gather: gin[s] = sum over padded j mapping to s of sum_k taps[k] * g[j - k].
  auto padded_grad = [&](long j, auto&& fetch) {
    double acc = 0.0;
    for (long k = 0; k < K; ++k) {
      const long i = j - k;
      if (i >= 0 && i < static_cast<long>(n)) acc += taps[static_cast<std::size_t>(k)] * fetch(i);
    }
    return acc;
  };
  auto source_range = [&](long s, long& jlo, long& jhi) {
    jlo = s == 0 ? 0 : s + r;
    jhi = s == static_cast<long>(n) - 1 ? static_cast<long>(n) - 1 + 2 * r : s + r;
  };

  if (axis == 2) {
#pragma omp parallel for schedule(static)
    for (long line = 0; line < static_cast<long>(C * H); ++line) {
      const double* grow = g + static_cast<std::size_t>(line) * W;
      double* row = dst + static_cast<std::size_t>(line) * W;
      auto fetch = [&](long i) { return grow[i]; };
      for (long s = 0; s < static_cast<long>(W); ++s) {
        long jlo, jhi;
        source_range(s, jlo, jhi);
        double acc = 0.0;
        for (long j = jlo; j <= jhi; ++j) acc += padded_grad(j, fetch);
        row[s] = acc;
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (long line = 0; line < static_cast<long>(C * H); ++line) {
      const std::size_t c = static_cast<std::size_t>(line) / H;
      const long s = static_cast<long>(static_cast<std::size_t>(line) % H);
      double* row = dst + static_cast<std::size_t>(line) * W;
      long jlo, jhi;
      source_range(s, jlo, jhi);
      for (long j = jlo; j <= jhi; ++j) {
        for (long k = 0; k < K; ++k) {
          const long i = j - k;
          if (i < 0 || i >= static_cast<long>(H)) continue;
          const double t = taps[static_cast<std::size_t>(k)];
          const double* grow = g + (c * H + static_cast<std::size_t>(i)) * W;
          for (std::size_t x = 0; x < W; ++x) row[x] += t * grow[x];
        }
      }
    }
  }
  return gin;
}

}  // namespace parallel
}  // namespace eolt::kernels
