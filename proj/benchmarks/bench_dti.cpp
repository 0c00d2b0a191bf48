#include <benchmark/benchmark.h>

#include <random>

#include "iqt/dti/fit.hpp"
#include "iqt/dti/phantom.hpp"
#include "iqt/dti/tensor_math.hpp"
#include "iqt/resample.hpp"

namespace {

using namespace iqt;

void BM_Eigen3Sym(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  std::vector<dti::Tensor6> tensors(1024);
  for (auto& t : tensors) t = {1e-3 + u(rng), 1e-3 + u(rng), 1e-3 + u(rng), u(rng), u(rng), u(rng)};
  for (auto _ : state) {
    for (const auto& t : tensors) benchmark::DoNotOptimize(dti::eigen3_sym(t));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tensors.size()));
}
BENCHMARK(BM_Eigen3Sym);

void BM_GaussianBlur(benchmark::State& state) {
  dti::PhantomSpec spec;
  const dti::Phantom ph = dti::generate_phantom(spec, 1);
  const double sigma = resample::fwhm_sigma(2.5);
  for (auto _ : state) benchmark::DoNotOptimize(resample::gaussian_blur(ph.tensors, sigma));
}
BENCHMARK(BM_GaussianBlur)->Unit(benchmark::kMillisecond);

void BM_Degrade(benchmark::State& state) {
  dti::PhantomSpec spec;
  const dti::Phantom ph = dti::generate_phantom(spec, 1);
  for (auto _ : state) benchmark::DoNotOptimize(resample::degrade(ph.tensors, 3.125));
}
BENCHMARK(BM_Degrade)->Unit(benchmark::kMillisecond);

void BM_FitDti(benchmark::State& state) {
  dti::PhantomSpec spec;
  spec.dims = {24, 24, 24};
  const dti::Phantom ph = dti::generate_phantom(spec, 1);
  for (auto _ : state) benchmark::DoNotOptimize(dti::fit_dti(ph.dwi, ph.protocol, ph.mask));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ph.dwi.voxels()));
}
BENCHMARK(BM_FitDti)->Unit(benchmark::kMillisecond);

}  // namespace
