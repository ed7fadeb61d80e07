#include "eolt/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <map>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "dual.hpp"
#include "eolt/errors.hpp"
#include "eolt/kernels.hpp"

namespace eolt {

namespace {

using detail::Dual;
using detail::select_max;
using detail::select_min;
using detail::value;

constexpr std::array<TransformId, kTransformCount> kAll = {
    TransformId::normal,     TransformId::uniform,    TransformId::speckle,   TransformId::poisson,
    TransformId::salt,       TransformId::pepper,     TransformId::hsv,       TransformId::lab,
    TransformId::xyz,        TransformId::yuv,        TransformId::graymix,   TransformId::boxblur,
    TransformId::medblur,    TransformId::motionblur, TransformId::gaussblur, TransformId::brightness,
    TransformId::contrast,   TransformId::saturation, TransformId::hue,       TransformId::gamma,
    TransformId::solarize,   TransformId::sharp,      TransformId::jpeg,      TransformId::fft,
    TransformId::precision,  TransformId::affine,     TransformId::crop,      TransformId::hflip,
    TransformId::vflip,      TransformId::swirl};

constexpr std::array<std::string_view, kTransformCount> kNames = {
    "normal",     "uniform",  "speckle",   "poisson",    "salt",     "pepper", "hsv",      "lab",
    "xyz",        "yuv",      "graymix",   "boxblur",    "medblur",  "motionblur", "gaussblur", "brightness",
    "contrast",   "saturation", "hue",     "gamma",      "solarize", "sharp",  "jpeg",     "fft",
    "precision",  "affine",   "crop",      "hflip",      "vflip",    "swirl"};

int idx(TransformId id) { return static_cast<int>(id); }

// ---------------------------------------------------------------- magnitude grids

double noise_sigma(int i) { return 0.02 + 0.01 * i; }
double speckle_sigma(int i) { return 0.05 + 0.025 * i; }
double poisson_lambda(int i) { return 256.0 / std::pow(2.0, i / 2.0); }
double replace_prob(int i) { return 0.01 + 0.005 * i; }
double chroma_factor(int i) { return i == 4 ? 1.05 : 0.6 + 0.1 * i; }
double graymix_weight(int i) { return 0.1 * (i + 1); }
std::size_t box_size(int i) { return 3 + 2 * static_cast<std::size_t>(i / 2); }
std::size_t motion_length(int i) { return 3 + 2 * static_cast<std::size_t>(i); }
double gauss_sigma(int i) { return 0.5 + 0.25 * i; }
double style_factor(int i) { return 0.5 + 0.125 * i; }
double hue_angle(int i) { return -0.5 + 0.125 * i; }
double gamma_exponent(int i) { return std::pow(2.0, (i - 4) / 4.0); }
double solarize_threshold(int i) { return 0.95 - 0.05 * i; }
double sharp_amount(int i) { return 0.25 * (i + 1); }
int jpeg_quality(int i) { return 90 - 10 * i; }
double fft_radius(int i) { return 0.9 - 0.1 * i; }
int precision_bits(int i) { return 8 - (i * 7) / 8; }
double affine_degrees(int i) { return 2.0 + 2.0 * i; }
double crop_fraction(int i) { return 0.95 - 0.04 * i; }
double swirl_strength(int i) { return 0.5 * (i + 1); }

std::size_t gauss_radius(double sigma) { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

std::vector<double> gauss_taps(double sigma) {
  const long r = static_cast<long>(gauss_radius(sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (long k = -r; k <= r; ++k) {
    taps[static_cast<std::size_t>(k + r)] = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(k + r)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

std::vector<double> box_taps(std::size_t k) { return std::vector<double>(k, 1.0 / static_cast<double>(k)); }

// ---------------------------------------------------------------- 3x3 colour matrices

struct Mat3 {
  std::array<std::array<double, 3>, 3> m{};

  template <class T>
  std::array<T, 3> operator()(const std::array<T, 3>& p) const {
    std::array<T, 3> r;
    for (int i = 0; i < 3; ++i) r[i] = p[0] * m[i][0] + p[1] * m[i][1] + p[2] * m[i][2];
    return r;
  }

  Mat3 inverse() const {
    const auto& a = m;
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    Mat3 r;
    r.m[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
    r.m[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
    r.m[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
    r.m[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
    r.m[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
    r.m[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
    r.m[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
    r.m[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
    r.m[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
    return r;
  }
};

const Mat3 kRgbToXyz{{{{0.4124564, 0.3575761, 0.1804375},
                       {0.2126729, 0.7151522, 0.0721750},
                       {0.0193339, 0.1191920, 0.9503041}}}};
const Mat3 kXyzToRgb = kRgbToXyz.inverse();
const Mat3 kRgbToYuv{{{{0.299, 0.587, 0.114}, {-0.14713, -0.28886, 0.436}, {0.615, -0.51499, -0.10001}}}};
const Mat3 kYuvToRgb = kRgbToYuv.inverse();
const Mat3 kRgbToYiq{{{{0.299, 0.587, 0.114}, {0.595716, -0.274453, -0.321263}, {0.211456, -0.522591, 0.311135}}}};
const Mat3 kYiqToRgb = kRgbToYiq.inverse();
constexpr std::array<double, 3> kD65White = {0.95047, 1.0, 1.08883};

template <class T>
using Px = std::array<T, 3>;

template <class T>
T luma(const Px<T>& p) {
  return p[0] * 0.299 + p[1] * 0.587 + p[2] * 0.114;
}

// ---------------------------------------------------------------- per-pixel maps

struct HsvScale {
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    // Scaling HSV saturation with hue and value fixed moves every channel
    // along the line towards V = max(r, g, b); saturation saturates at 1.
    const T v = select_max(select_max(p[0], p[1]), p[2]);
    const T mn = select_min(select_min(p[0], p[1]), p[2]);
    const T c = v - mn;
    if (value(c) <= 1e-12) return p;
    const T k = select_min(T(f), v / c);
    return {v - (v - p[0]) * k, v - (v - p[1]) * k, v - (v - p[2]) * k};
  }
};

template <class T>
T srgb_to_linear(const T& c) {
  using detail::pow;
  if (value(c) <= 0.04045) return c / 12.92;
  return pow((c + 0.055) / 1.055, 2.4);
}

template <class T>
T linear_to_srgb(const T& c) {
  using detail::pow;
  if (value(c) <= 0.0031308) return c * 12.92;
  return pow(c, 1.0 / 2.4) * 1.055 - 0.055;
}

constexpr double kLabDelta = 6.0 / 29.0;

template <class T>
T lab_f(const T& t) {
  using detail::cbrt;
  if (value(t) > kLabDelta * kLabDelta * kLabDelta) return cbrt(t);
  return t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}

template <class T>
T lab_finv(const T& f) {
  if (value(f) > kLabDelta) return f * f * f;
  return (f - 4.0 / 29.0) * (3.0 * kLabDelta * kLabDelta);
}

struct LabScale {
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    const Px<T> lin = {srgb_to_linear(p[0]), srgb_to_linear(p[1]), srgb_to_linear(p[2])};
    const Px<T> xyz = kRgbToXyz(lin);
    const T fx = lab_f(xyz[0] / kD65White[0]);
    const T fy = lab_f(xyz[1] / kD65White[1]);
    const T fz = lab_f(xyz[2] / kD65White[2]);
    // L is carried implicitly by fy; a and b are scaled.
    const T a = (fx - fy) * (500.0 * f);
    const T b = (fy - fz) * (200.0 * f);
    const T gx = fy + a / 500.0;
    const T gz = fy - b / 200.0;
    const Px<T> xyz2 = {lab_finv(gx) * kD65White[0], lab_finv(fy) * kD65White[1], lab_finv(gz) * kD65White[2]};
    const Px<T> lin2 = kXyzToRgb(xyz2);
    return {linear_to_srgb(lin2[0]), linear_to_srgb(lin2[1]), linear_to_srgb(lin2[2])};
  }
};

struct MatrixChromaScale {
  const Mat3* to;
  const Mat3* from;
  int keep;  // channel left unscaled (the luma-like one)
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    Px<T> q = (*to)(p);
    for (int c = 0; c < 3; ++c)
      if (c != keep) q[c] = q[c] * f;
    return (*from)(q);
  }
};

struct GrayMix {
  double w;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    const T g = luma(p);
    return {p[0] * (1.0 - w) + g * w, p[1] * (1.0 - w) + g * w, p[2] * (1.0 - w) + g * w};
  }
};

struct Brightness {
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    return {p[0] * f, p[1] * f, p[2] * f};
  }
};

struct Contrast {
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    return {(p[0] - 0.5) * f + 0.5, (p[1] - 0.5) * f + 0.5, (p[2] - 0.5) * f + 0.5};
  }
};

struct Saturation {
  double f;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    const T g = luma(p);
    return {g + (p[0] - g) * f, g + (p[1] - g) * f, g + (p[2] - g) * f};
  }
};

struct HueRotate {
  double theta;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    Px<T> q = kRgbToYiq(p);
    const double cs = std::cos(theta), sn = std::sin(theta);
    const T i = q[1] * cs - q[2] * sn;
    const T qq = q[1] * sn + q[2] * cs;
    q[1] = i;
    q[2] = qq;
    return kYiqToRgb(q);
  }
};

struct Gamma {
  double g;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    using detail::pow;
    Px<T> r;
    for (int c = 0; c < 3; ++c) r[c] = value(p[c]) <= 0.0 ? T(0.0) : pow(p[c], g);
    return r;
  }
};

struct Solarize {
  double tau;
  template <class T>
  Px<T> operator()(const Px<T>& p) const {
    Px<T> r;
    for (int c = 0; c < 3; ++c) r[c] = value(p[c]) > tau ? 1.0 - p[c] : p[c];
    return r;
  }
};

template <class Fn>
Tensor pixelwise(const Tensor& x, const Fn& fn) {
  const std::size_t n = x.dim(1) * x.dim(2);
  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
#pragma omp parallel for schedule(static)
  for (long il = 0; il < static_cast<long>(n); ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    const Px<double> r = fn(Px<double>{src[i], src[n + i], src[2 * n + i]});
    dst[i] = r[0];
    dst[n + i] = r[1];
    dst[2 * n + i] = r[2];
  }
  return out;
}

template <class Fn>
Tensor pixelwise_vjp(const Tensor& x, const Tensor& g, const Fn& fn) {
  const std::size_t n = x.dim(1) * x.dim(2);
  Tensor gx(x.shape());
  const double* src = x.data();
  const double* gs = g.data();
  double* dst = gx.data();
#pragma omp parallel for schedule(static)
  for (long il = 0; il < static_cast<long>(n); ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    Px<Dual<3>> p;
    for (int c = 0; c < 3; ++c) {
      p[c] = Dual<3>(src[c * n + i]);
      p[c].d[c] = 1.0;
    }
    const Px<Dual<3>> r = fn(p);
    for (int j = 0; j < 3; ++j) {
      dst[j * n + i] = gs[i] * r[0].d[j] + gs[n + i] * r[1].d[j] + gs[2 * n + i] * r[2].d[j];
    }
  }
  return gx;
}

// ---------------------------------------------------------------- blur helpers

Tensor separable(const Tensor& x, const std::vector<double>& row_taps, const std::vector<double>& col_taps) {
  Tensor y = kernels::parallel::filter_axis(x, row_taps, 2);
  return col_taps.empty() ? y : kernels::parallel::filter_axis(y, col_taps, 1);
}

Tensor separable_adjoint(const Tensor& g, const std::vector<double>& row_taps, const std::vector<double>& col_taps) {
  Tensor gy = col_taps.empty() ? g : kernels::parallel::filter_axis_adjoint(g, col_taps, 1);
  return kernels::parallel::filter_axis_adjoint(gy, row_taps, 2);
}

Tensor median_filter(const Tensor& x, std::size_t k) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long r = static_cast<long>(k / 2);
  Tensor out(x.shape());
#pragma omp parallel
  {
    std::vector<double> window(k * k);
#pragma omp for schedule(static)
    for (long line = 0; line < static_cast<long>(C * H); ++line) {
      const std::size_t c = static_cast<std::size_t>(line) / H;
      const long y = static_cast<long>(static_cast<std::size_t>(line) % H);
      for (long xx = 0; xx < static_cast<long>(W); ++xx) {
        std::size_t n = 0;
        for (long dy = -r; dy <= r; ++dy) {
          const long sy = std::clamp<long>(y + dy, 0, static_cast<long>(H) - 1);
          for (long dx = -r; dx <= r; ++dx) {
            const long sx = std::clamp<long>(xx + dx, 0, static_cast<long>(W) - 1);
            window[n++] = x.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
        }
        auto mid = window.begin() + static_cast<long>(n / 2);
        std::nth_element(window.begin(), mid, window.end());
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) = *mid;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- jpeg

constexpr std::array<int, 64> kLumaQuant = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                            14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                            18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                            49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

std::array<double, 64> quant_table(int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> q{};
  for (int i = 0; i < 64; ++i) q[i] = std::clamp((kLumaQuant[i] * scale + 50) / 100, 1, 255);
  return q;
}

const std::array<double, 64>& dct_matrix() {
  static const std::array<double, 64> d = [] {
    std::array<double, 64> m{};
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) m[u * 8 + x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return m;
  }();
  return d;
}

// out = A * B * A^T (transpose_a = false) or A^T * B * A (transpose_a = true), 8x8.
void sandwich(const double* b, double* out, bool transpose_a) {
  const auto& d = dct_matrix();
  auto a = [&](int i, int j) { return transpose_a ? d[j * 8 + i] : d[i * 8 + j]; };
  double tmp[64];
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += a(i, k) * b[k * 8 + j];
      tmp[i * 8 + j] = s;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[i * 8 + k] * a(j, k);
      out[i * 8 + j] = s;
    }
}

std::size_t round8(std::size_t n) { return (n + 7) / 8 * 8; }

Tensor jpeg_forward(const Tensor& x, int quality) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t HP = round8(H), WP = round8(W);
  const auto q = quant_table(quality);
  Tensor out(x.shape());
#pragma omp parallel for schedule(static)
  for (long job = 0; job < static_cast<long>(C * (HP / 8) * (WP / 8)); ++job) {
    const std::size_t c = static_cast<std::size_t>(job) / ((HP / 8) * (WP / 8));
    const std::size_t rem = static_cast<std::size_t>(job) % ((HP / 8) * (WP / 8));
    const std::size_t by = rem / (WP / 8) * 8, bx = rem % (WP / 8) * 8;
    double block[64], coef[64];
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        block[i * 8 + j] = 255.0 * x.at(c, std::min(by + i, H - 1), std::min(bx + j, W - 1)) - 128.0;
    sandwich(block, coef, false);
    for (int k = 0; k < 64; ++k) coef[k] = std::round(coef[k] / q[k]) * q[k];
    sandwich(coef, block, true);
    for (std::size_t i = 0; i < 8 && by + i < H; ++i)
      for (std::size_t j = 0; j < 8 && bx + j < W; ++j) out.at(c, by + i, bx + j) = (block[i * 8 + j] + 128.0) / 255.0;
  }
  return out;
}

// Adjoint of the jpeg pipeline with the rounding step passed straight through.
Tensor jpeg_vjp(const Tensor& g) {
  const std::size_t C = g.dim(0), H = g.dim(1), W = g.dim(2);
  const std::size_t HP = round8(H), WP = round8(W);
  Tensor gx(g.shape());
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(C); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    for (std::size_t by = 0; by < HP; by += 8) {
      for (std::size_t bx = 0; bx < WP; bx += 8) {
        double block[64] = {}, coef[64];
        // adjoint of crop: zero outside the image
        for (std::size_t i = 0; i < 8 && by + i < H; ++i)
          for (std::size_t j = 0; j < 8 && bx + j < W; ++j) block[i * 8 + j] = g.at(c, by + i, bx + j) / 255.0;
        sandwich(block, coef, false);  // adjoint of the inverse DCT
        sandwich(coef, block, true);   // adjoint of the forward DCT
        // adjoint of replicate padding: fold onto the clamped source pixel
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 8; ++j)
            gx.at(c, std::min(by + i, H - 1), std::min(bx + j, W - 1)) += 255.0 * block[i * 8 + j];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- fft low-pass

class FftPlans {
 public:
  struct Pair {
    fftw_plan forward;
    fftw_plan backward;
  };

  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  Pair get(std::size_t h, std::size_t w) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = plans_.find({h, w});
    if (it != plans_.end()) return it->second;
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * h * w));
    Pair p{fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE),
           fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE)};
    fftw_free(buf);
    plans_.emplace(std::make_pair(h, w), p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::pair<std::size_t, std::size_t>, Pair> plans_;
};

// Zeroes every frequency whose radius, relative to Nyquist, exceeds rho.
// The frequency mask is real and symmetric, so the operator is self-adjoint.
Tensor fft_lowpass(const Tensor& x, double rho) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto plans = FftPlans::instance().get(H, W);
  Tensor out(x.shape());
  auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * H * W));
  auto freq = [](std::size_t k, std::size_t n) {
    const double s = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
    return 2.0 * s / static_cast<double>(n);
  };
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      buf[i][0] = x[c * H * W + i];
      buf[i][1] = 0.0;
    }
    fftw_execute_dft(plans.forward, buf, buf);
    for (std::size_t ky = 0; ky < H; ++ky) {
      const double fy = freq(ky, H);
      for (std::size_t kx = 0; kx < W; ++kx) {
        const double fx = freq(kx, W);
        if (std::sqrt(fy * fy + fx * fx) > rho) {
          buf[ky * W + kx][0] = 0.0;
          buf[ky * W + kx][1] = 0.0;
        }
      }
    }
    fftw_execute_dft(plans.backward, buf, buf);
    const double scale = 1.0 / static_cast<double>(H * W);
    for (std::size_t i = 0; i < H * W; ++i) out[c * H * W + i] = buf[i][0] * scale;
  }
  fftw_free(buf);
  return out;
}

// ---------------------------------------------------------------- geometric grids

Tensor rotation_grid(std::size_t h, std::size_t w, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  Tensor grid({h, w, 2});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      grid[(y * w + x) * 2] = cx + cs * dx + sn * dy;
      grid[(y * w + x) * 2 + 1] = cy - sn * dx + cs * dy;
    }
  }
  return grid;
}

Tensor crop_grid(std::size_t h, std::size_t w, double fraction) {
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  Tensor grid({h, w, 2});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      grid[(y * w + x) * 2] = cx + (static_cast<double>(x) - cx) * fraction;
      grid[(y * w + x) * 2 + 1] = cy + (static_cast<double>(y) - cy) * fraction;
    }
  }
  return grid;
}

Tensor swirl_grid(std::size_t h, std::size_t w, double strength) {
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double radius = std::log(2.0) * static_cast<double>(std::min(h, w)) / 2.0;
  Tensor grid({h, w, 2});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double rho = std::sqrt(dx * dx + dy * dy);
      const double theta = strength * std::exp(-rho / radius) + std::atan2(dy, dx);
      grid[(y * w + x) * 2] = cx + rho * std::cos(theta);
      grid[(y * w + x) * 2 + 1] = cy + rho * std::sin(theta);
    }
  }
  return grid;
}

Tensor flip(const Tensor& x, bool horizontal) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        out.at(c, y, xx) = horizontal ? x.at(c, y, W - 1 - xx) : x.at(c, H - 1 - y, xx);
  return out;
}

Tensor geometric_grid(const SubPolicy& sp, std::size_t h, std::size_t w) {
  switch (sp.transform) {
    case TransformId::affine: return rotation_grid(h, w, affine_degrees(sp.magnitude));
    case TransformId::crop: return crop_grid(h, w, crop_fraction(sp.magnitude));
    case TransformId::swirl: return swirl_grid(h, w, swirl_strength(sp.magnitude));
    default: return {};
  }
}

// ---------------------------------------------------------------- dispatch

template <class Visitor>
auto visit_pixelwise(const SubPolicy& sp, Visitor&& vis) {
  const int i = sp.magnitude;
  switch (sp.transform) {
    case TransformId::hsv: return vis(HsvScale{chroma_factor(i)});
    case TransformId::lab: return vis(LabScale{chroma_factor(i)});
    case TransformId::xyz: return vis(MatrixChromaScale{&kRgbToXyz, &kXyzToRgb, 1, chroma_factor(i)});
    case TransformId::yuv: return vis(MatrixChromaScale{&kRgbToYuv, &kYuvToRgb, 0, chroma_factor(i)});
    case TransformId::graymix: return vis(GrayMix{graymix_weight(i)});
    case TransformId::brightness: return vis(Brightness{style_factor(i)});
    case TransformId::contrast: return vis(Contrast{style_factor(i)});
    case TransformId::saturation: return vis(Saturation{style_factor(i)});
    case TransformId::hue: return vis(HueRotate{hue_angle(i)});
    case TransformId::gamma: return vis(Gamma{gamma_exponent(i)});
    case TransformId::solarize: return vis(Solarize{solarize_threshold(i)});
    default: throw std::logic_error("not a pixelwise transform");
  }
}

bool is_pixelwise(TransformId id) {
  switch (id) {
    case TransformId::hsv:
    case TransformId::lab:
    case TransformId::xyz:
    case TransformId::yuv:
    case TransformId::graymix:
    case TransformId::brightness:
    case TransformId::contrast:
    case TransformId::saturation:
    case TransformId::hue:
    case TransformId::gamma:
    case TransformId::solarize: return true;
    default: return false;
  }
}

void check_subpolicy(const SubPolicy& sp) {
  if (sp.magnitude < 0 || sp.magnitude >= kMagnitudes) {
    throw std::out_of_range("magnitude " + std::to_string(sp.magnitude) + " outside [0, 8]");
  }
  if (idx(sp.transform) < 0 || idx(sp.transform) >= kTransformCount) throw std::out_of_range("unknown transform");
}

void check_image(const Tensor& image, const SubPolicy& sp) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw DimensionError(std::string(transform_name(sp.transform)) + ": expected 3xHxW image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t need = min_extent(sp.transform, sp.magnitude);
  if (image.dim(1) < need || image.dim(2) < need) {
    throw UnsupportedSizeError(std::string(transform_name(sp.transform)) + " needs H, W >= " + std::to_string(need) +
                               ", got " + shape_str(image.shape()));
  }
}

Tensor draw_for(const SubPolicy& sp, const Tensor& image, Rng& rng) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  const int i = sp.magnitude;
  switch (sp.transform) {
    case TransformId::normal:
    case TransformId::speckle: {
      Tensor z(image.shape());
      for (double& v : z.storage()) v = rng.normal();
      return z;
    }
    case TransformId::uniform: {
      Tensor u(image.shape());
      for (double& v : u.storage()) v = rng.uniform(-1.0, 1.0);
      return u;
    }
    case TransformId::poisson: {
      // The frozen quantity is the additive shot-noise field itself.
      const double lambda = poisson_lambda(i);
      Tensor n(image.shape());
      for (std::size_t k = 0; k < n.size(); ++k) n[k] = std::sqrt(std::max(image[k], 1e-4) / lambda) * rng.normal();
      return n;
    }
    case TransformId::salt:
    case TransformId::pepper: {
      const double p = replace_prob(i);
      Tensor m({H, W});
      for (double& v : m.storage()) v = rng.uniform() < p ? 1.0 : 0.0;
      return m;
    }
    default: return {};
  }
}

Tensor forward_pre_clamp(const Tensor& x, const SubPolicy& sp, const Tensor& draw, Tensor& aux) {
  const int i = sp.magnitude;
  const std::size_t H = x.dim(1), W = x.dim(2);
  if (is_stochastic(sp.transform)) {
    const Shape want = (sp.transform == TransformId::salt || sp.transform == TransformId::pepper)
                           ? Shape{H, W}
                           : x.shape();
    if (draw.shape() != want) {
      throw DimensionError(std::string(transform_name(sp.transform)) + ": draw " + shape_str(draw.shape()) +
                           " does not match image " + shape_str(x.shape()));
    }
  }
  if (is_pixelwise(sp.transform)) {
    return visit_pixelwise(sp, [&](const auto& fn) { return pixelwise(x, fn); });
  }
  switch (sp.transform) {
    case TransformId::normal: return x + noise_sigma(i) * draw;
    case TransformId::uniform: return x + noise_sigma(i) * draw;
    case TransformId::speckle: {
      Tensor y(x.shape());
      const double s = speckle_sigma(i);
      for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] * (1.0 + s * draw[k]);
      return y;
    }
    case TransformId::poisson: return x + draw;
    case TransformId::salt:
    case TransformId::pepper: {
      const double fill = sp.transform == TransformId::salt ? 1.0 : 0.0;
      Tensor y = x;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < H * W; ++k)
          if (draw[k] != 0.0) y[c * H * W + k] = fill;
      return y;
    }
    case TransformId::boxblur: {
      const auto taps = box_taps(box_size(i));
      return separable(x, taps, taps);
    }
    case TransformId::medblur: return median_filter(x, box_size(i));
    case TransformId::motionblur: return separable(x, box_taps(motion_length(i)), {});
    case TransformId::gaussblur: {
      const auto taps = gauss_taps(gauss_sigma(i));
      return separable(x, taps, taps);
    }
    case TransformId::sharp: {
      const auto taps = gauss_taps(1.0);
      const double a = sharp_amount(i);
      return (1.0 + a) * x - a * separable(x, taps, taps);
    }
    case TransformId::jpeg: return jpeg_forward(x, jpeg_quality(i));
    case TransformId::fft: return fft_lowpass(x, fft_radius(i));
    case TransformId::precision: {
      const double levels = std::pow(2.0, precision_bits(i)) - 1.0;
      Tensor y(x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) y[k] = std::round(x[k] * levels) / levels;
      return y;
    }
    case TransformId::affine:
    case TransformId::crop:
    case TransformId::swirl:
      aux = geometric_grid(sp, H, W);
      return ops::bilinear_grid_sample(x, aux);
    case TransformId::hflip: return flip(x, true);
    case TransformId::vflip: return flip(x, false);
    default: throw std::logic_error("unhandled transform");
  }
}

}  // namespace

// ---------------------------------------------------------------- public API

std::span<const TransformId> all_transforms() { return kAll; }

std::string_view transform_name(TransformId id) { return kNames.at(static_cast<std::size_t>(idx(id))); }

std::optional<TransformId> parse_transform(std::string_view name) {
  for (std::size_t k = 0; k < kNames.size(); ++k)
    if (kNames[k] == name) return kAll[k];
  return std::nullopt;
}

Category category_of(TransformId id) {
  const int k = idx(id);
  if (k < 6) return Category::noise;
  if (k < 11) return Category::color_space;
  if (k < 15) return Category::blur;
  if (k < 22) return Category::stylization;
  if (k < 25) return Category::compression;
  return Category::geometric;
}

std::string_view category_name(Category c) {
  switch (c) {
    case Category::noise: return "noise";
    case Category::color_space: return "color-space";
    case Category::blur: return "blur";
    case Category::stylization: return "stylization";
    case Category::compression: return "compression";
    case Category::geometric: return "geometric";
  }
  return "?";
}

std::string_view category_label(Category c) {
  switch (c) {
    case Category::noise: return "Noise";
    case Category::color_space: return "Color-space";
    case Category::blur: return "Blur";
    case Category::stylization: return "Stylization";
    case Category::compression: return "Compression";
    case Category::geometric: return "Geometric";
  }
  return "?";
}

std::vector<TransformId> transforms_in(Category c) {
  std::vector<TransformId> out;
  for (TransformId id : kAll)
    if (category_of(id) == c) out.push_back(id);
  return out;
}

bool is_straight_through(TransformId id) {
  return id == TransformId::medblur || id == TransformId::salt || id == TransformId::pepper ||
         id == TransformId::precision || id == TransformId::jpeg;
}

bool is_stochastic(TransformId id) { return idx(id) < 6; }

std::string magnitude_grid(TransformId id) {
  switch (id) {
    case TransformId::normal: return "add N(0, s^2), s = 0.02 + 0.01*i";
    case TransformId::uniform: return "add U(-a, a), a = 0.02 + 0.01*i";
    case TransformId::speckle: return "x*(1 + n), n ~ N(0, s^2), s = 0.05 + 0.025*i";
    case TransformId::poisson: return "x + sqrt(max(x, 1e-4)/lambda)*z, lambda = 256/2^(i/2)";
    case TransformId::salt: return "pixel -> 1 with p = 0.01 + 0.005*i";
    case TransformId::pepper: return "pixel -> 0 with p = 0.01 + 0.005*i";
    case TransformId::hsv: return "HSV saturation * f, f = 0.6 + 0.1*i (1.05 at i=4)";
    case TransformId::lab: return "Lab a,b * f, f = 0.6 + 0.1*i (1.05 at i=4)";
    case TransformId::xyz: return "XYZ X,Z * f, f = 0.6 + 0.1*i (1.05 at i=4)";
    case TransformId::yuv: return "YUV U,V * f, f = 0.6 + 0.1*i (1.05 at i=4)";
    case TransformId::graymix: return "(1-w)*x + w*gray, w = 0.1*(i+1)";
    case TransformId::boxblur: return "k x k mean, k = 3 + 2*floor(i/2)";
    case TransformId::medblur: return "k x k median, k = 3 + 2*floor(i/2)";
    case TransformId::motionblur: return "horizontal mean, length = 3 + 2*i";
    case TransformId::gaussblur: return "gaussian, sigma = 0.5 + 0.25*i, radius = ceil(3*sigma)";
    case TransformId::brightness: return "x*f, f = 0.5 + 0.125*i";
    case TransformId::contrast: return "(x-0.5)*f + 0.5, f = 0.5 + 0.125*i";
    case TransformId::saturation: return "gray + f*(x-gray), f = 0.5 + 0.125*i";
    case TransformId::hue: return "YIQ chroma rotation, theta = -0.5 + 0.125*i rad";
    case TransformId::gamma: return "x^g, g = 2^((i-4)/4)";
    case TransformId::solarize: return "x > t -> 1-x, t = 0.95 - 0.05*i";
    case TransformId::sharp: return "x + a*(x - gauss_1(x)), a = 0.25*(i+1)";
    case TransformId::jpeg: return "8x8 DCT quantisation, quality = 90 - 10*i";
    case TransformId::fft: return "low-pass, radius = (0.9 - 0.1*i)*nyquist";
    case TransformId::precision: return "quantise to b bits, b = 8 - floor(7*i/8)";
    case TransformId::affine: return "rotate by 2 + 2*i degrees";
    case TransformId::crop: return "central crop c = 0.95 - 0.04*i, resize back";
    case TransformId::hflip: return "horizontal flip (all levels identical)";
    case TransformId::vflip: return "vertical flip (all levels identical)";
    case TransformId::swirl: return "swirl, strength = 0.5*(i+1), radius = min(H,W)/2";
  }
  return "";
}

std::size_t min_extent(TransformId id, int magnitude) {
  switch (id) {
    case TransformId::boxblur:
    case TransformId::medblur: return box_size(magnitude) / 2 + 1;
    case TransformId::motionblur: return motion_length(magnitude) / 2 + 1;
    case TransformId::gaussblur: return gauss_radius(gauss_sigma(magnitude)) + 1;
    case TransformId::sharp: return gauss_radius(1.0) + 1;
    case TransformId::jpeg: return 8;
    case TransformId::crop: return 4;
    case TransformId::fft:
    case TransformId::affine:
    case TransformId::swirl: return 2;
    default: return 1;
  }
}

std::string subpolicy_name(const SubPolicy& sp) {
  return std::string(transform_name(sp.transform)) + "@" + std::to_string(sp.magnitude);
}

Catalog::Catalog(std::vector<TransformId> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("catalog must not be empty");
}

Catalog Catalog::full() { return Catalog(std::vector<TransformId>(kAll.begin(), kAll.end())); }

bool Catalog::contains(TransformId id) const {
  return std::find(entries_.begin(), entries_.end(), id) != entries_.end();
}

SubPolicy Catalog::decode(std::size_t index) const {
  if (index >= logit_count()) {
    throw std::out_of_range("sub-policy index " + std::to_string(index) + " outside [0, " +
                            std::to_string(logit_count()) + ")");
  }
  return {entries_[index / kMagnitudes], static_cast<int>(index % kMagnitudes)};
}

std::size_t Catalog::encode(const SubPolicy& sp) const {
  check_subpolicy(sp);
  const auto it = std::find(entries_.begin(), entries_.end(), sp.transform);
  if (it == entries_.end()) {
    throw std::out_of_range(std::string(transform_name(sp.transform)) + " is not in the catalog");
  }
  return static_cast<std::size_t>(it - entries_.begin()) * kMagnitudes + static_cast<std::size_t>(sp.magnitude);
}

std::string Catalog::describe() const {
  std::ostringstream os;
  for (TransformId id : entries_) {
    os << transform_name(id) << " [" << category_name(category_of(id)) << "] " << magnitude_grid(id) << '\n';
  }
  return os.str();
}

std::uint64_t Catalog::fingerprint() const { return fnv1a64(describe()); }

TransformOutput apply_with_draw(const Tensor& image, const SubPolicy& sp, const Tensor& draw) {
  check_subpolicy(sp);
  check_image(image, sp);
  TransformOutput out;
  out.ctx.sp = sp;
  out.ctx.input = image;
  out.ctx.draw = draw;
  out.ctx.pre_clamp = forward_pre_clamp(image, sp, draw, out.ctx.aux);
  out.image = ops::clamp01(out.ctx.pre_clamp);
  return out;
}

TransformOutput apply(const Tensor& image, const SubPolicy& sp, Rng& rng) {
  check_subpolicy(sp);
  check_image(image, sp);
  return apply_with_draw(image, sp, draw_for(sp, image, rng));
}

Tensor apply_image(const Tensor& image, const SubPolicy& sp, Rng& rng) { return apply(image, sp, rng).image; }

Tensor vjp(const TransformContext& ctx, const Tensor& grad_out) {
  if (!grad_out.same_shape(ctx.input)) {
    throw DimensionError(subpolicy_name(ctx.sp) + " vjp: grad " + shape_str(grad_out.shape()) + " vs input " +
                         shape_str(ctx.input.shape()));
  }
  const Tensor g = ops::clamp01_vjp(ctx.pre_clamp, grad_out);
  const SubPolicy& sp = ctx.sp;
  const int i = sp.magnitude;
  const std::size_t H = g.dim(1), W = g.dim(2);
  if (is_pixelwise(sp.transform)) {
    return visit_pixelwise(sp, [&](const auto& fn) { return pixelwise_vjp(ctx.input, g, fn); });
  }
  switch (sp.transform) {
    case TransformId::normal:
    case TransformId::uniform:
    case TransformId::poisson:
    case TransformId::medblur:
    case TransformId::precision: return g;
    case TransformId::speckle: {
      Tensor gx(g.shape());
      const double s = speckle_sigma(i);
      for (std::size_t k = 0; k < g.size(); ++k) gx[k] = g[k] * (1.0 + s * ctx.draw[k]);
      return gx;
    }
    case TransformId::salt:
    case TransformId::pepper: {
      Tensor gx = g;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < H * W; ++k)
          if (ctx.draw[k] != 0.0) gx[c * H * W + k] = 0.0;
      return gx;
    }
    case TransformId::boxblur: {
      const auto taps = box_taps(box_size(i));
      return separable_adjoint(g, taps, taps);
    }
    case TransformId::motionblur: return separable_adjoint(g, box_taps(motion_length(i)), {});
    case TransformId::gaussblur: {
      const auto taps = gauss_taps(gauss_sigma(i));
      return separable_adjoint(g, taps, taps);
    }
    case TransformId::sharp: {
      const auto taps = gauss_taps(1.0);
      const double a = sharp_amount(i);
      return (1.0 + a) * g - a * separable_adjoint(g, taps, taps);
    }
    case TransformId::jpeg: return jpeg_vjp(g);
    case TransformId::fft: return fft_lowpass(g, fft_radius(i));
    case TransformId::affine:
    case TransformId::crop:
    case TransformId::swirl: return ops::bilinear_grid_sample_vjp(g, ctx.aux, H, W);
    case TransformId::hflip: return flip(g, true);
    case TransformId::vflip: return flip(g, false);
    default: throw std::logic_error("unhandled transform");
  }
}

TransformStage TransformStage::sampled(SubPolicy sp, const Shape& image_shape, Rng& rng) {
  const Tensor probe(image_shape, 0.5);
  return TransformStage(sp, draw_for(sp, probe, rng));
}

Tensor TransformStage::forward(const Tensor& x, Context& ctx) const {
  TransformOutput out = apply_with_draw(x, sp_, draw_);
  ctx.saved = {std::move(out.ctx.input), std::move(out.ctx.pre_clamp), std::move(out.ctx.draw),
               std::move(out.ctx.aux)};
  return std::move(out.image);
}

Tensor TransformStage::vjp(const Context& ctx, const Tensor& grad_out) const {
  TransformContext tc{sp_, ctx.saved.at(0), ctx.saved.at(1), ctx.saved.at(2), ctx.saved.at(3)};
  return eolt::vjp(tc, grad_out);
}

std::string_view split_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::all_seen: return "all_seen";
    case SplitKind::intra: return "intra";
    case SplitKind::inter: return "inter";
  }
  return "?";
}

std::optional<SplitKind> parse_split(std::string_view name) {
  if (name == "all_seen" || name == "all-seen") return SplitKind::all_seen;
  if (name == "intra") return SplitKind::intra;
  if (name == "inter") return SplitKind::inter;
  return std::nullopt;
}

Split build_split(SplitKind kind) {
  using T = TransformId;
  auto join = [](std::initializer_list<Category> cats) {
    std::vector<TransformId> out;
    for (Category c : cats)
      for (TransformId id : transforms_in(c)) out.push_back(id);
    return out;
  };
  switch (kind) {
    case SplitKind::all_seen: {
      std::vector<TransformId> all(kAll.begin(), kAll.end());
      return {all, all, all};
    }
    case SplitKind::intra:
      return {{T::speckle, T::pepper, T::yuv, T::graymix, T::boxblur, T::motionblur, T::brightness, T::saturation,
               T::sharp, T::jpeg, T::hflip, T::vflip},
              {T::poisson, T::lab, T::medblur, T::hue, T::fft, T::affine},
              {T::normal, T::uniform, T::salt, T::hsv, T::xyz, T::gaussblur, T::contrast, T::gamma, T::solarize,
               T::precision, T::crop, T::swirl}};
    case SplitKind::inter:
      return {join({Category::blur, Category::stylization}), join({Category::noise, Category::geometric}),
              join({Category::color_space, Category::compression})};
  }
  return {};
}

}  // namespace eolt
