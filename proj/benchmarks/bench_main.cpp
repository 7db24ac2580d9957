#include <benchmark/benchmark.h>

#include "stamps/dataset.hpp"
#include "stamps/domain.hpp"
#include "stamps/evaluation.hpp"
#include "stamps/mask_gan.hpp"
#include "stamps/optim.hpp"
#include "stamps/texture_gan.hpp"

using namespace stamps;

namespace {

InstanceRecord record(int64_t res) {
  SynthConfig c;
  c.resolution = res;
  return synth_records(0, 1, c)[0];
}

void BM_Composite(benchmark::State& state) {
  const auto r = record(state.range(0));
  const auto ex = make_example(r);
  for (auto _ : state) benchmark::DoNotOptimize(composite(ex.i_b, ex.s, ex.m));
}
BENCHMARK(BM_Composite)->Arg(64)->Arg(128)->Arg(256);

void BM_Kid(benchmark::State& state) {
  auto g = nn::make_generator(0);
  const auto x = torch::randn({state.range(0), 2048}, g, torch::kFloat64);
  const auto y = torch::randn({state.range(0), 2048}, g, torch::kFloat64);
  for (auto _ : state) benchmark::DoNotOptimize(kid(x, y));
}
BENCHMARK(BM_Kid)->Arg(50)->Arg(200);

void BM_GenMask(benchmark::State& state) {
  torch::set_num_threads(1);
  MaskNetConfig c;
  c.resolution = state.range(0);
  auto b = MaskGanBundle::create(c, 0);
  const auto ex = make_example(record(c.resolution));
  const auto z = LatentVector::from(torch::zeros({c.z_dim}));
  for (auto _ : state) benchmark::DoNotOptimize(gen_mask(b, ex.i_b, z, ex.b));
}
BENCHMARK(BM_GenMask)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GenTexture(benchmark::State& state) {
  torch::set_num_threads(1);
  TextureNetConfig c;
  c.resolution = state.range(0);
  auto b = TextureGanBundle::create(c, 0, false);
  b.train(false);
  const auto ex = make_example(record(c.resolution));
  const auto z = LatentVector::from(torch::zeros({c.z_dim}));
  for (auto _ : state) benchmark::DoNotOptimize(gen_texture(b, ex.i_m, ex.m, z, 0));
}
BENCHMARK(BM_GenTexture)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MaskTrainStep(benchmark::State& state) {
  torch::set_num_threads(1);
  MaskNetConfig c;
  c.resolution = 64;
  auto b = MaskGanBundle::create(c, 0);
  Adam g_opt(b.generator_parameters(), {});
  Adam d_opt(b.discriminator_parameters(), {});
  SynthConfig sc;
  const auto recs = synth_records(0, 4, sc);
  std::vector<TrainingExample> ex;
  for (const auto& r : recs) ex.push_back(make_example(r));
  const auto batch = collate(ex);
  auto rng = nn::make_generator(0);
  for (auto _ : state) benchmark::DoNotOptimize(mask_train_step(batch, b, g_opt, d_opt, rng, {}));
}
BENCHMARK(BM_MaskTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
