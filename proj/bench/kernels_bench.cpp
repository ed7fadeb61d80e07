// Serial reference kernels against the dispatched parallel ones, at the
// shapes the surrogate and the policy backbone use.

#include <benchmark/benchmark.h>

#include <vector>

#include "eolt/kernels.hpp"
#include "eolt/rng.hpp"

using namespace eolt;
namespace k = eolt::kernels;

namespace {

Tensor filled(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

struct ConvCase {
  Tensor input, weight, bias, grad_out;
  k::ConvGeometry geo{1, 1};
};

// args: channels in, channels out, spatial extent
ConvCase conv_case(const benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto o = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  return {filled({c, n, n}, 1), filled({o, c, 3, 3}, 2), filled({o}, 3), filled({o, n, n}, 4)};
}

template <Tensor (*Fn)(const Tensor&, const Tensor&, const Tensor&, const k::ConvGeometry&)>
void BM_conv_forward(benchmark::State& state) {
  const ConvCase cc = conv_case(state);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(cc.input, cc.weight, cc.bias, cc.geo));
}

template <Tensor (*Fn)(const Tensor&, const Tensor&, const k::ConvGeometry&, std::size_t, std::size_t)>
void BM_conv_backward_input(benchmark::State& state) {
  const ConvCase cc = conv_case(state);
  const std::size_t n = cc.input.dim(1);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(cc.grad_out, cc.weight, cc.geo, n, n));
}

template <Tensor (*Fn)(const Tensor&, const Tensor&, const k::ConvGeometry&, std::size_t, std::size_t)>
void BM_conv_backward_weight(benchmark::State& state) {
  const ConvCase cc = conv_case(state);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(cc.input, cc.grad_out, cc.geo, 3, 3));
}

template <Tensor (*Fn)(const Tensor&, const Tensor&)>
void BM_grid_sample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor input = filled({3, n, n}, 5);
  Tensor grid({n, n, 2});
  Rng rng(6);
  for (double& v : grid.values()) v = rng.uniform(0.0, static_cast<double>(n - 1));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(input, grid));
}

template <Tensor (*Fn)(const Tensor&, std::span<const double>, int)>
void BM_filter_axis(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor input = filled({3, n, n}, 7);
  const std::vector<double> taps = {0.05, 0.25, 0.4, 0.25, 0.05};
  for (auto _ : state) benchmark::DoNotOptimize(Fn(input, taps, 2));
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({3, 16, 32})->Args({16, 16, 32})->Args({32, 32, 16});
}

}  // namespace

BENCHMARK(BM_conv_forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_conv_forward<k::parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_conv_backward_input<k::serial::conv2d_backward_input>)->Name("conv_backward_input/serial")->Apply(conv_args);
BENCHMARK(BM_conv_backward_input<k::parallel::conv2d_backward_input>)
    ->Name("conv_backward_input/parallel")
    ->Apply(conv_args);
BENCHMARK(BM_conv_backward_weight<k::serial::conv2d_backward_weight>)
    ->Name("conv_backward_weight/serial")
    ->Apply(conv_args);
BENCHMARK(BM_conv_backward_weight<k::parallel::conv2d_backward_weight>)
    ->Name("conv_backward_weight/parallel")
    ->Apply(conv_args);
BENCHMARK(BM_grid_sample<k::serial::grid_sample_forward>)->Name("grid_sample/serial")->Arg(32)->Arg(128);
BENCHMARK(BM_grid_sample<k::parallel::grid_sample_forward>)->Name("grid_sample/parallel")->Arg(32)->Arg(128);
BENCHMARK(BM_filter_axis<k::serial::filter_axis>)->Name("filter_axis/serial")->Arg(32)->Arg(128);
BENCHMARK(BM_filter_axis<k::parallel::filter_axis>)->Name("filter_axis/parallel")->Arg(32)->Arg(128);

BENCHMARK_MAIN();
