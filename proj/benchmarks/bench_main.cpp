#include <benchmark/benchmark.h>

#include <random>

#include "maskforge/integrated_gradients.hpp"
#include "maskforge/metrics.hpp"
#include "maskforge/optimizer.hpp"
#include "maskforge/presets.hpp"
#include "maskforge/regularizers.hpp"
#include "maskforge/synthetic.hpp"

namespace {

using namespace maskforge;

Grid noise_grid(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid g(h, w, c);
  for (double& v : g.values()) v = u(rng);
  return g;
}

void BM_Upsample(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid mask = noise_grid(n, n, 1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(upsample_bilinear(mask, 224, 224));
}
BENCHMARK(BM_Upsample)->Arg(7)->Arg(28)->Arg(112);

void BM_UpsampleAdjoint(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid grad = noise_grid(224, 224, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(upsample_adjoint(grad, n, n));
}
BENCHMARK(BM_UpsampleAdjoint)->Arg(7)->Arg(28)->Arg(112);

void BM_GaussianBlur(benchmark::State& state) {
  const Grid image = noise_grid(224, 224, 3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_blur(image, static_cast<double>(state.range(0))));
}
BENCHMARK(BM_GaussianBlur)->Arg(2)->Arg(10);

void BM_Regularizer(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid image = noise_grid(224, 224, 3, 4);
  const MaskRegularizer reg(image, n, n, RegularizerConfig{});
  const Grid mask = noise_grid(n, n, 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(reg(mask));
}
BENCHMARK(BM_Regularizer)->Arg(28)->Arg(224);

struct PlantedSetup {
  PlantedScene scene = make_planted_scene(PlantedSceneOptions{}, 7);
  PlantedRegionModel model{{56, 56, 3}, scene.region, kPlantedSharpness};
  Grid baseline = gaussian_blur(scene.image, 10.0);
};

void BM_IntegratedGradient(benchmark::State& state) {
  const PlantedSetup s;
  IGConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  const Grid mask = noise_grid(28, 28, 1, 6);
  for (auto _ : state) benchmark::DoNotOptimize(ig_deletion(s.model, s.scene.image, s.baseline, mask, 0, cfg));
}
BENCHMARK(BM_IntegratedGradient)->Arg(5)->Arg(20);

void BM_TotalGradient(benchmark::State& state) {
  const PlantedSetup s;
  const Grid x = noise_grid(28, 28, 1, 8);
  const Grid y = noise_grid(28, 28, 1, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(total_gradient(s.model, s.scene.image, s.baseline, x, y, 0, RegularizerConfig{}, IGConfig{}));
  }
}
BENCHMARK(BM_TotalGradient);

void BM_Optimize(benchmark::State& state) {
  const PlantedSetup s;
  const OptimizerConfig cfg = preset(state.range(0) == 0 ? "igos_pp" : "igos");
  for (auto _ : state) benchmark::DoNotOptimize(optimize(s.model, s.scene.image, s.baseline, 0, cfg));
}
BENCHMARK(BM_Optimize)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DeletionCurve(benchmark::State& state) {
  const PlantedSetup s;
  const Grid heat = noise_grid(28, 28, 1, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(deletion_curve(s.model, s.scene.image, heat, 0, s.baseline, default_pixels_per_step(56 * 56)));
  }
}
BENCHMARK(BM_DeletionCurve);

}  // namespace
