#include <cmath>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "eolt/errors.hpp"
#include "eolt/gradcheck.hpp"
#include "eolt/io.hpp"
#include "eolt/kernels.hpp"
#include "eolt/ops.hpp"
#include "helpers.hpp"

using namespace eolt;
using eolt::testing::random_tensor;

namespace {

class LambdaStage : public DiffStage {
 public:
  using Fwd = std::function<Tensor(const Tensor&)>;
  using Bwd = std::function<Tensor(const Tensor& x, const Tensor& g)>;
  LambdaStage(std::string name, Fwd f, Bwd b, bool st = false)
      : name_(std::move(name)), f_(std::move(f)), b_(std::move(b)), st_(st) {}
  std::string name() const override { return name_; }
  Tensor forward(const Tensor& x, Context& ctx) const override {
    ctx.saved = {x};
    return f_(x);
  }
  Tensor vjp(const Context& ctx, const Tensor& g) const override { return b_(ctx.saved[0], g); }
  bool straight_through() const override { return st_; }

 private:
  std::string name_;
  Fwd f_;
  Bwd b_;
  bool st_;
};

}  // namespace

TEST_CASE("conv2d on ones with same padding sums the 3x3 window") {
  const Tensor x({1, 3, 3}, 1.0);
  const Tensor k({1, 1, 3, 3}, 1.0);
  const Tensor y = ops::conv2d(x, k, 1, 1);
  CHECK(y.at(0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0) == 4.0);
}

TEST_CASE("conv2d with a zero kernel is zero") {
  Rng rng(1);
  const Tensor x = random_tensor({3, 8, 8}, rng);
  const Tensor y = ops::conv2d(x, Tensor({4, 3, 3, 3}), 1, 1);
  CHECK(max_abs(y) == 0.0);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(2);
  const Tensor a = random_tensor({3, 8, 8}, rng, -1, 1);
  const Tensor b = random_tensor({3, 8, 8}, rng, -1, 1);
  const Tensor k = random_tensor({5, 3, 3, 3}, rng, -1, 1);
  const Tensor lhs = ops::conv2d(2.5 * a + -0.75 * b, k, 2, 1);
  const Tensor rhs = 2.5 * ops::conv2d(a, k, 2, 1) + -0.75 * ops::conv2d(b, k, 2, 1);
  CHECK(max_abs(lhs - rhs) <= 1e-9);
}

TEST_CASE("conv2d rejects mismatched channels") {
  CHECK_THROWS_AS(ops::conv2d(Tensor({3, 4, 4}), Tensor({1, 2, 3, 3}), 1, 1), DimensionError);
}

TEST_CASE("conv2d VJPs match finite differences") {
  Rng rng(3);
  const Tensor x = random_tensor({3, 8, 8}, rng, -1, 1);
  const Tensor k = random_tensor({4, 3, 3, 3}, rng, -1, 1);
  LambdaStage in_stage(
      "conv-input", [&](const Tensor& v) { return ops::conv2d(v, k, 2, 1); },
      [&](const Tensor&, const Tensor& g) { return ops::conv2d_vjp_input(g, k, 2, 1, 8, 8); });
  auto r = finite_diff_check(in_stage, x);
  CHECK(r.max_rel_error <= 1e-6);

  LambdaStage k_stage(
      "conv-kernel", [&](const Tensor& w) { return ops::conv2d(x, w, 2, 1); },
      [&](const Tensor&, const Tensor& g) { return ops::conv2d_vjp_kernel(x, g, 2, 1, 3, 3); });
  r = finite_diff_check(k_stage, k);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("serial and parallel kernels agree") {
  Rng rng(4);
  const Tensor x = random_tensor({3, 17, 13}, rng, -1, 1);
  const Tensor w = random_tensor({6, 3, 3, 3}, rng, -1, 1);
  const Tensor b = random_tensor({6}, rng, -1, 1);
  auto close = [](const Tensor& s, const Tensor& p) { return s.same_shape(p) && max_abs(s - p) <= 1e-12; };
  for (std::size_t stride : {1u, 2u}) {
    const kernels::ConvGeometry geo{stride, 1};
    const Tensor ys = kernels::serial::conv2d_forward(x, w, b, geo);
    CHECK(close(ys, kernels::parallel::conv2d_forward(x, w, b, geo)));
    const Tensor g = random_tensor(ys.shape(), rng, -1, 1);
    CHECK(close(kernels::serial::conv2d_backward_input(g, w, geo, 17, 13),
                kernels::parallel::conv2d_backward_input(g, w, geo, 17, 13)));
    CHECK(close(kernels::serial::conv2d_backward_weight(x, g, geo, 3, 3),
                kernels::parallel::conv2d_backward_weight(x, g, geo, 3, 3)));
  }
  const Tensor grid = random_tensor({9, 11, 2}, rng, -2, 15);
  CHECK(close(kernels::serial::grid_sample_forward(x, grid), kernels::parallel::grid_sample_forward(x, grid)));
  const Tensor gg = random_tensor({3, 9, 11}, rng, -1, 1);
  CHECK(close(kernels::serial::grid_sample_backward(gg, grid, 17, 13),
              kernels::parallel::grid_sample_backward(gg, grid, 17, 13)));
  const std::vector<double> taps = {0.1, 0.2, 0.4, 0.2, 0.1};
  for (int axis : {1, 2}) {
    CHECK(close(kernels::serial::filter_axis(x, taps, axis), kernels::parallel::filter_axis(x, taps, axis)));
    CHECK(close(kernels::serial::filter_axis_adjoint(x, taps, axis),
                kernels::parallel::filter_axis_adjoint(x, taps, axis)));
  }
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  Rng rng(5);
  const Tensor x = random_tensor({3, 33, 29}, rng, -1, 1);
  const Tensor w = random_tensor({8, 3, 3, 3}, rng, -1, 1);
  const kernels::ConvGeometry geo{2, 1};
  const Tensor grid = random_tensor({20, 20, 2}, rng, -2, 30);
  const int saved = kernels::worker_count();
  std::vector<Tensor> runs;
  for (int threads : {1, 3, 4}) {
    kernels::set_worker_count(threads);
    const Tensor y = kernels::parallel::conv2d_forward(x, w, {}, geo);
    runs.push_back(y);
    runs.push_back(kernels::parallel::conv2d_backward_input(y, w, geo, 33, 29));
    runs.push_back(kernels::parallel::conv2d_backward_weight(x, y, geo, 3, 3));
    runs.push_back(kernels::parallel::grid_sample_backward(kernels::parallel::grid_sample_forward(x, grid), grid, 33, 29));
  }
  kernels::set_worker_count(saved);
  for (std::size_t i = 4; i < runs.size(); ++i) CHECK(runs[i] == runs[i % 4]);
}

TEST_CASE("linear layer examples and VJP") {
  const Tensor x = Tensor::vector({1.0, -2.0, 3.0});
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(ops::linear(x, eye) == x);
  const Tensor b = Tensor::vector({0.5, 0.25, -1.0});
  CHECK(ops::linear(x, Tensor({3, 3}), b) == b);

  Rng rng(5);
  const Tensor w = random_tensor({3, 4}, rng, -1, 1);
  LambdaStage stage(
      "linear", [&](const Tensor& v) { return ops::linear(v, w); },
      [&](const Tensor&, const Tensor& g) { return ops::linear_vjp_input(g, w); });
  CHECK(finite_diff_check(stage, random_tensor({4}, rng, -1, 1)).max_rel_error <= 1e-6);
}

TEST_CASE("relu, pooling and softmax") {
  CHECK(ops::relu(Tensor::vector({-1.5}))[0] == 0.0);
  CHECK(ops::relu(Tensor::vector({2.0}))[0] == 2.0);

  const Tensor pooled = ops::global_avg_pool(Tensor({2, 5, 7}, 0.3));
  REQUIRE(pooled.size() == 2);
  CHECK(pooled[0] == doctest::Approx(0.3).epsilon(1e-15));

  const Tensor p = ops::softmax(Tensor({81}, 2.0));
  for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 81.0).epsilon(1e-12));

  Rng rng(6);
  const Tensor logits = random_tensor({20}, rng, -30, 30);
  const Tensor q = ops::softmax(logits);
  CHECK(std::abs(sum(q) - 1.0) <= 1e-9);
  std::size_t am_l = 0, am_q = 0;
  for (std::size_t i = 1; i < 20; ++i) {
    CHECK(q[i] >= 0.0);
    if (logits[i] > logits[am_l]) am_l = i;
    if (q[i] > q[am_q]) am_q = i;
  }
  CHECK(am_l == am_q);
  CHECK(ops::softmax(Tensor::vector({1000.0, 0.0})).all_finite());
}

TEST_CASE("relu VJP away from zero is exact") {
  Rng rng(7);
  Tensor x = random_tensor({3, 8, 8}, rng, -1, 1);
  for (double& v : x.storage())
    if (std::abs(v) < 0.05) v = 0.5;
  LambdaStage stage("relu", ops::relu, ops::relu_vjp);
  // Piecewise linear: a wide step keeps rounding error out without crossing a kink.
  GradCheckOptions opts;
  opts.step = 1e-3;
  CHECK(finite_diff_check(stage, x, opts).max_rel_error <= 1e-9);
}

TEST_CASE("clamp01 forward and pass-through gradient") {
  const Tensor y = ops::clamp01(Tensor::vector({1.2, -0.1, 0.5}));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 0.5);
  const Tensor g = ops::clamp01_vjp(Tensor::vector({1.2, -0.1, 0.5}), Tensor::vector({3.0, 3.0, 3.0}));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 3.0);
}

TEST_CASE("bilinear grid sample") {
  Rng rng(8);
  const Tensor x = random_tensor({3, 6, 5}, rng);
  CHECK(ops::bilinear_grid_sample(x, ops::identity_grid(6, 5)) == x);

  Tensor two({1, 1, 2});
  two[0] = 0.2;
  two[1] = 0.8;
  Tensor grid({1, 1, 2});
  grid[0] = 0.5;  // x
  grid[1] = 0.0;  // y
  CHECK(ops::bilinear_grid_sample(two, grid)[0] == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(ops::bilinear_grid_sample(x, Tensor({6, 5, 3})), DimensionError);

  const Tensor warp = random_tensor({7, 7, 2}, rng, -1, 6);
  LambdaStage stage(
      "grid", [&](const Tensor& v) { return ops::bilinear_grid_sample(v, warp); },
      [&](const Tensor&, const Tensor& g) { return ops::bilinear_grid_sample_vjp(g, warp, 6, 5); });
  CHECK(finite_diff_check(stage, x).max_rel_error <= 1e-5);
}

TEST_CASE("l2 normalize and sigmoid VJPs") {
  Rng rng(9);
  LambdaStage l2("l2", ops::l2_normalize, ops::l2_normalize_vjp);
  CHECK(finite_diff_check(l2, random_tensor({16}, rng, -1, 1)).max_rel_error <= 1e-6);
  LambdaStage sig(
      "sigmoid", ops::sigmoid, [](const Tensor& x, const Tensor& g) { return ops::sigmoid_vjp(ops::sigmoid(x), g); });
  CHECK(finite_diff_check(sig, random_tensor({3, 4, 4}, rng, -3, 3)).max_rel_error <= 1e-6);
}

TEST_CASE("straight-through stages are flagged, not probed") {
  LambdaStage st(
      "round", [](const Tensor& x) { return x; }, [](const Tensor&, const Tensor& g) { return g; }, true);
  const auto r = finite_diff_check(st, Tensor({3, 4, 4}, 0.5));
  CHECK(r.skipped);
  CHECK(r.note == "identity-gradient, skipped");
  CHECK(r.probes == 0);
}

TEST_CASE("finite_diff_check is deterministic and catches a wrong VJP") {
  Rng rng(10);
  const Tensor x = random_tensor({3, 4, 4}, rng, -1, 1);
  LambdaStage wrong(
      "wrong", [](const Tensor& v) { return hadamard(v, v); }, [](const Tensor&, const Tensor& g) { return g; });
  const auto a = finite_diff_check(wrong, x);
  const auto b = finite_diff_check(wrong, x);
  CHECK_FALSE(a.passed);
  CHECK(a.max_rel_error == b.max_rel_error);
}

TEST_CASE("tensor file round trip and header layout") {
  Rng rng(11);
  const Tensor t = random_tensor({2, 3, 4}, rng, -5, 5);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 3 + 3 * 4 + 24 * 8);
  CHECK(bytes.substr(0, 4) == "EOLT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 3);
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(read_tensor(ss) == t);

  std::stringstream s32;
  write_tensor(s32, t, Precision::f32);
  Tensor r = t;
  round_to_f32(r);
  CHECK(read_tensor(s32) == r);

  std::stringstream bad("EOLX\x01");
  CHECK_THROWS_AS(read_tensor(bad), FormatError);
}
