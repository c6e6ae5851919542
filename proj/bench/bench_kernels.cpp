// Serial reference vs OpenMP path for every parallel kernel. Thread count
// follows OMP_NUM_THREADS.

#include "stochlift/datagen.hpp"
#include "stochlift/lifting.hpp"
#include "stochlift/metrics.hpp"
#include "stochlift/model.hpp"
#include "stochlift/rng.hpp"
#include "stochlift/rollout.hpp"

#include <benchmark/benchmark.h>

using namespace stochlift;

namespace {

Matrix cloud(long n, long d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

DuffingConfig duffing_config() {
  DuffingConfig c;
  c.n_traj = 128;
  return c;
}

WaveConfig wave_config() {
  WaveConfig c;
  c.n_traj = 16;
  c.bump_width = 3.0;
  return c;
}

const LiftedDataset& lifted() {
  static const LiftedDataset data = [] {
    DuffingConfig c;
    c.n_traj = 64;
    return lift(subsample(normalize(simulate_duffing(c, 1)), 4), 64, 1, LabelLaw::gaussian, 2);
  }();
  return data;
}

const Model& model() {
  static const Model m = [] {
    ModelConfig c;
    c.in_dim = 2;
    c.out_dim = 2;
    c.label_dim = 64;
    c.hidden = {256, 256, 256};
    c.embed_width = 128;
    return init_model(c, 3);
  }();
  return m;
}

struct Batch256 {
  Matrix x, l, y;
  Batch256() : x(lifted().inputs.topRows(256)), l(lifted().labels.topRows(256)), y(lifted().targets.topRows(256)) {}
};

void BM_duffing_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(simulate_duffing_serial(duffing_config(), 1));
}
void BM_duffing_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(simulate_duffing(duffing_config(), 1));
}

void BM_wave_set_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(generate_wave_set_serial(wave_config(), 1));
}
void BM_wave_set_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(generate_wave_set(wave_config(), 1));
}

void BM_lipschitz_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(lipschitz_constant_serial(lifted()));
}
void BM_lipschitz_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(lipschitz_constant(lifted()));
}

void BM_w2_sliced_serial(benchmark::State& s) {
  const Matrix a = cloud(1024, 256, 1), b = cloud(1024, 256, 2);
  for (auto _ : s) benchmark::DoNotOptimize(w2_sliced_serial(a, b, 256, 3));
}
void BM_w2_sliced_parallel(benchmark::State& s) {
  const Matrix a = cloud(1024, 256, 1), b = cloud(1024, 256, 2);
  for (auto _ : s) benchmark::DoNotOptimize(w2_sliced(a, b, 256, 3));
}

void BM_w2_exact_serial(benchmark::State& s) {
  const Matrix a = cloud(256, 256, 1), b = cloud(256, 256, 2);
  for (auto _ : s) benchmark::DoNotOptimize(w2_exact_serial(a, b));
}
void BM_w2_exact_parallel(benchmark::State& s) {
  const Matrix a = cloud(256, 256, 1), b = cloud(256, 256, 2);
  for (auto _ : s) benchmark::DoNotOptimize(w2_exact(a, b));
}

void BM_loss_grad_serial(benchmark::State& s) {
  const Batch256 b;
  for (auto _ : s) benchmark::DoNotOptimize(loss_and_grad_serial(model(), BatchRef{b.x, b.l, b.y}));
}
void BM_loss_grad_parallel(benchmark::State& s) {
  const Batch256 b;
  for (auto _ : s) benchmark::DoNotOptimize(loss_and_grad(model(), BatchRef{b.x, b.l, b.y}));
}

void BM_mean_loss_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(mean_loss_serial(model(), lifted()));
}
void BM_mean_loss_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(mean_loss(model(), lifted()));
}

std::vector<Matrix> starts() { return std::vector<Matrix>(64, Matrix::Constant(1, 2, 0.5)); }

void BM_ensemble_serial(benchmark::State& s) {
  const auto init = starts();
  for (auto _ : s) benchmark::DoNotOptimize(generate_ensemble_serial(model(), init, 50, 1));
}
void BM_ensemble_parallel(benchmark::State& s) {
  const auto init = starts();
  for (auto _ : s) benchmark::DoNotOptimize(generate_ensemble(model(), init, 50, 1));
}

}  // namespace

BENCHMARK(BM_duffing_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_duffing_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_wave_set_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_wave_set_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_lipschitz_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_lipschitz_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_w2_sliced_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_w2_sliced_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_w2_exact_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_w2_exact_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_grad_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_grad_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mean_loss_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mean_loss_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ensemble_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ensemble_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
