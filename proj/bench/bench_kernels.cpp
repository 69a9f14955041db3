#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "invertfill/kernels.hpp"

namespace k = invertfill::kernels;

namespace {

std::vector<double> random_vector(long n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

k::ConvGeometry geometry(const benchmark::State& state) {
  k::ConvGeometry g;
  g.batch = 8;
  g.in_channels = static_cast<int>(state.range(0));
  g.out_channels = static_cast<int>(state.range(0));
  g.height = g.width = static_cast<int>(state.range(1));
  return g;
}

template <auto Kernel>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto x = random_vector(g.input_size(), 1), w = random_vector(g.weight_size(), 2);
  std::vector<double> y(g.output_size());
  for (auto _ : state) {
    Kernel(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.output_size() * g.in_channels * g.kernel * g.kernel);
}

template <auto Kernel>
void conv_backward_input(benchmark::State& state) {
  const auto g = geometry(state);
  const auto gy = random_vector(g.output_size(), 3), w = random_vector(g.weight_size(), 4);
  std::vector<double> gx(g.input_size());
  for (auto _ : state) {
    Kernel(g, gy, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <auto Kernel>
void conv_backward_weight(benchmark::State& state) {
  const auto g = geometry(state);
  const auto x = random_vector(g.input_size(), 5), gy = random_vector(g.output_size(), 6);
  std::vector<double> gw(g.weight_size());
  for (auto _ : state) {
    Kernel(g, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Kernel>
void gram(benchmark::State& state) {
  const int b = 8, c = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1) * state.range(1));
  const auto x = random_vector(long(b) * c * p, 7);
  std::vector<double> g(long(b) * c * c);
  for (auto _ : state) {
    Kernel(b, c, p, x, g);
    benchmark::DoNotOptimize(g.data());
  }
}

template <auto Kernel>
void linear(benchmark::State& state) {
  const int b = 8, n = static_cast<int>(state.range(0));
  const auto x = random_vector(long(b) * n, 8), w = random_vector(long(n) * n, 9);
  std::vector<double> y(long(b) * n);
  for (auto _ : state) {
    Kernel(b, n, n, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  for (auto [c, s] : {std::pair{16, 32}, std::pair{32, 16}, std::pair{64, 8}}) b->Args({c, s});
}

void gram_args(benchmark::internal::Benchmark* b) {
  for (auto [c, s] : {std::pair{8, 64}, std::pair{32, 32}, std::pair{64, 16}}) b->Args({c, s});
}

}  // namespace

BENCHMARK(conv_forward<k::conv2d_forward>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(conv_forward<k::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(conv_backward_input<k::conv2d_backward_input>)->Name("conv_backward_input/openmp")->Apply(conv_args);
BENCHMARK(conv_backward_input<k::reference::conv2d_backward_input>)
    ->Name("conv_backward_input/reference")
    ->Apply(conv_args);
BENCHMARK(conv_backward_weight<k::conv2d_backward_weight>)->Name("conv_backward_weight/openmp")->Apply(conv_args);
BENCHMARK(conv_backward_weight<k::reference::conv2d_backward_weight>)
    ->Name("conv_backward_weight/reference")
    ->Apply(conv_args);
BENCHMARK(gram<k::gram_forward>)->Name("gram_forward/openmp")->Apply(gram_args);
BENCHMARK(gram<k::reference::gram_forward>)->Name("gram_forward/reference")->Apply(gram_args);
BENCHMARK(linear<k::linear_forward>)->Name("linear_forward/openmp")->Arg(512);
BENCHMARK(linear<k::reference::linear_forward>)->Name("linear_forward/reference")->Arg(512);

BENCHMARK_MAIN();
