#include <benchmark/benchmark.h>

#include <random>

#include "mito/nn.hpp"

namespace {

mito::Tensor random_tensor(int c, int h, int w, std::uint64_t seed) {
  mito::Tensor t(c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : t.v) v = u(rng);
  return t;
}

mito::ConvLayer random_conv(int in_c, int out_c, int k, int stride, int pad, std::uint64_t seed) {
  mito::ConvLayer c;
  c.in_c = in_c;
  c.out_c = out_c;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.w.resize(static_cast<std::size_t>(out_c) * in_c * k * k);
  c.b.resize(static_cast<std::size_t>(out_c));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& v : c.w) v = u(rng);
  for (auto& v : c.b) v = u(rng);
  return c;
}

void bm_conv2d_serial(benchmark::State& state) {
  const auto in = random_tensor(8, 120, 120, 1);
  const auto layer = random_conv(8, 16, 3, 1, 1, 2);
  mito::Tensor out;
  for (auto _ : state) {
    mito::kernels::conv2d_serial(in, layer, out);
    benchmark::DoNotOptimize(out.v.data());
  }
}

void bm_conv2d_omp(benchmark::State& state) {
  const auto in = random_tensor(8, 120, 120, 1);
  const auto layer = random_conv(8, 16, 3, 1, 1, 2);
  mito::Tensor out;
  for (auto _ : state) {
    mito::kernels::conv2d_omp(in, layer, out);
    benchmark::DoNotOptimize(out.v.data());
  }
}

void bm_forward_240(benchmark::State& state) {
  const auto model = mito::build_tiny_cnn(7, 240);
  mito::Image patch = mito::Image::solid(240, 240, 180, 140, 170);
  for (auto _ : state) {
    auto cache = model.forward(patch);
    benchmark::DoNotOptimize(cache.logits.data());
  }
}

BENCHMARK(bm_conv2d_serial);
BENCHMARK(bm_conv2d_omp);
BENCHMARK(bm_forward_240);

}  // namespace

BENCHMARK_MAIN();
