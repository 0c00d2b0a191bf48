#include <benchmark/benchmark.h>

#include <random>

#include "iqt/ad/graph.hpp"
#include "iqt/network.hpp"

namespace {

using namespace iqt;

ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  ad::Tensor t(std::move(shape));
  for (auto& x : t.data) x = u(rng);
  return t;
}

// 16^3 patch, cin -> cout channels, 3^3 kernel.
void BM_Conv3dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const ad::Tensor x = random_tensor({1, c, 16, 16, 16}, 1), k = random_tensor({c, c, 3, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var out = ad::conv3d(g, g.constant(x), g.constant(k), g.constant(b));
    benchmark::DoNotOptimize(g.value(out).data.data());
  }
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_Conv3dForward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const ad::Tensor x = random_tensor({1, c, 16, 16, 16}, 1), k = random_tensor({c, c, 3, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var out = ad::conv3d(g, g.variable(x), g.variable(k), g.variable(b));
    const ad::Var loss = ad::l1_loss(g, out, ad::Tensor(g.shape(out)));
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(out).data());
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  net::NetworkConfig cfg;
  cfg.base_channels = static_cast<int>(state.range(0));
  cfg.multimodal = state.range(1) != 0;
  const net::ModelParams p = net::build_model(cfg, 1);
  const ad::Tensor lr = random_tensor({1, 6, 16, 16, 16}, 4), t1w = random_tensor({1, 1, 16, 16, 16}, 5);
  for (auto _ : state) {
    const ad::Tensor out = net::predict(p, lr, cfg.multimodal ? &t1w : nullptr);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_Predict)->Args({8, 1})->Args({16, 0})->Args({16, 1})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
