// Reference loop nests. Straightforward index arithmetic, no blocking,
// no threading; the parallel kernels are checked against these.

#include <algorithm>
#include <cmath>

#include "eolt/kernels.hpp"

namespace eolt::kernels {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const std::size_t padded = in + 2 * g.padding;
  if (padded < kernel) return 0;
  return (padded - kernel) / g.stride + 1;
}

namespace serial {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvGeometry& geo) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t OH = conv_out_extent(H, KH, geo), OW = conv_out_extent(W, KW, geo);
  Tensor out({O, OH, OW});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < KH; ++ky) {
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
              const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              acc += weight[((o * C + c) * KH + ky) * KW + kx] * input.at(c, iy, ix);
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& geo,
                             std::size_t in_h, std::size_t in_w) {
  const std::size_t O = weight.dim(0), C = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t OH = grad_out.dim(1), OW = grad_out.dim(2);
  Tensor gin({C, in_h, in_w});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double g = grad_out.at(o, oy, ox);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < KH; ++ky) {
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
              const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(in_h) || ix >= static_cast<long>(in_w)) continue;
              gin.at(c, iy, ix) += weight[((o * C + c) * KH + ky) * KW + kx] * g;
            }
          }
        }
      }
    }
  }
  return gin;
}

Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geo,
                              std::size_t kh, std::size_t kw) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = grad_out.dim(0), OH = grad_out.dim(1), OW = grad_out.dim(2);
  Tensor gw({O, C, kh, kw});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
              const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              acc += grad_out.at(o, oy, ox) * input.at(c, iy, ix);
            }
          }
          gw[((o * C + c) * kh + ky) * kw + kx] = acc;
        }
      }
    }
  }
  return gw;
}

namespace {

struct Bilinear {
  std::size_t x0, x1, y0, y1;
  double wx, wy;
};

Bilinear bilinear_weights(double x, double y, std::size_t h, std::size_t w) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  Bilinear b{};
  b.x0 = static_cast<std::size_t>(std::floor(x));
  b.y0 = static_cast<std::size_t>(std::floor(y));
  b.x1 = std::min(b.x0 + 1, w - 1);
  b.y1 = std::min(b.y0 + 1, h - 1);
  b.wx = x - static_cast<double>(b.x0);
  b.wy = y - static_cast<double>(b.y0);
  return b;
}

}  // namespace

Tensor grid_sample_forward(const Tensor& input, const Tensor& grid) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = grid.dim(0), OW = grid.dim(1);
  Tensor out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < OH; ++y) {
      for (std::size_t x = 0; x < OW; ++x) {
        const double* g = grid.data() + (y * OW + x) * 2;
        const Bilinear b = bilinear_weights(g[0], g[1], H, W);
        out.at(c, y, x) = (1 - b.wy) * ((1 - b.wx) * input.at(c, b.y0, b.x0) + b.wx * input.at(c, b.y0, b.x1)) +
                          b.wy * ((1 - b.wx) * input.at(c, b.y1, b.x0) + b.wx * input.at(c, b.y1, b.x1));
      }
    }
  }
  return out;
}

Tensor grid_sample_backward(const Tensor& grad_out, const Tensor& grid, std::size_t in_h, std::size_t in_w) {
  const std::size_t C = grad_out.dim(0), OH = grid.dim(0), OW = grid.dim(1);
  Tensor gin({C, in_h, in_w});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < OH; ++y) {
      for (std::size_t x = 0; x < OW; ++x) {
        const double* g = grid.data() + (y * OW + x) * 2;
        const Bilinear b = bilinear_weights(g[0], g[1], in_h, in_w);
        const double go = grad_out.at(c, y, x);
        gin.at(c, b.y0, b.x0) += (1 - b.wy) * (1 - b.wx) * go;
        gin.at(c, b.y0, b.x1) += (1 - b.wy) * b.wx * go;
        gin.at(c, b.y1, b.x0) += b.wy * (1 - b.wx) * go;
        gin.at(c, b.y1, b.x1) += b.wy * b.wx * go;
      }
    }
  }
  return gin;
}

Tensor filter_axis(const Tensor& input, std::span<const double> taps, int axis) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const long r = static_cast<long>(taps.size() / 2);
  Tensor out(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long off = static_cast<long>(k) - r;
          if (axis == 2) {
            const long sx = std::clamp<long>(static_cast<long>(x) + off, 0, static_cast<long>(W) - 1);
            acc += taps[k] * input.at(c, y, sx);
          } else {
            const long sy = std::clamp<long>(static_cast<long>(y) + off, 0, static_cast<long>(H) - 1);
            acc += taps[k] * input.at(c, sy, x);
          }
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor filter_axis_adjoint(const Tensor& grad_out, std::span<const double> taps, int axis) {
  const std::size_t C = grad_out.dim(0), H = grad_out.dim(1), W = grad_out.dim(2);
  const long r = static_cast<long>(taps.size() / 2);
  Tensor gin(grad_out.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double g = grad_out.at(c, y, x);
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long off = static_cast<long>(k) - r;
          if (axis == 2) {
            const long sx = std::clamp<long>(static_cast<long>(x) + off, 0, static_cast<long>(W) - 1);
            gin.at(c, y, sx) += taps[k] * g;
          } else {
            const long sy = std::clamp<long>(static_cast<long>(y) + off, 0, static_cast<long>(H) - 1);
            gin.at(c, sy, x) += taps[k] * g;
          }
        }
      }
    }
  }
  return gin;
}

}  // namespace serial
}  // namespace eolt::kernels
