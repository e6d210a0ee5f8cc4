#include <benchmark/benchmark.h>

#include <random>

#include "landmatch/baseline.hpp"
#include "landmatch/matching.hpp"
#include "landmatch/network.hpp"
#include "landmatch/pipeline.hpp"
#include "landmatch/texture.hpp"

using namespace landmatch;

namespace {

GrayImage texture(int size) {
  std::mt19937_64 rng(17);
  return make_texture(size, rng);
}

const ModelParams<float>& model() {
  static const ModelParams<float> p = init_params<float>(ModelConfig{}, 1);
  return p;
}

void BM_ForwardBranch(benchmark::State& state) {
  const GrayImage img = texture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_branch(model(), img));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_ForwardBranch)->Arg(96)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_InferPair(benchmark::State& state) {
  const GrayImage a = texture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(infer_pair(model(), a, a));
}
BENCHMARK(BM_InferPair)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_InverseConsistentMatch(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixR<double> c(k, k), d(k, k);
  for (int i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  for (int i = 0; i < d.size(); ++i) d.data()[i] = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(inverse_consistent_match(c, d));
}
BENCHMARK(BM_InverseConsistentMatch)->Arg(100)->Arg(400)->Arg(1000);

void BM_DogKeypoints(benchmark::State& state) {
  const GrayImage img = texture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(detect_keypoints_dog(img));
}
BENCHMARK(BM_DogKeypoints)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
