// Serial reference vs OpenMP kernels for the two I2I index builders.
//
//   ./bench_kernels --benchmark_counters_tabular=true
//
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "capts/kernels.hpp"

using namespace capts;
using namespace capts::kernels;

namespace {

std::vector<std::vector<ItemId>> user_items(int users, int items, int len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Zipf-ish item popularity so a few items co-occur heavily.
  std::vector<double> w(static_cast<std::size_t>(items));
  for (int i = 0; i < items; ++i) w[static_cast<std::size_t>(i)] = 1.0 / std::pow(i + 1.0, 0.8);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::vector<std::vector<ItemId>> out(static_cast<std::size_t>(users));
  for (auto& u : out) {
    for (int i = 0; i < len; ++i) u.push_back(static_cast<ItemId>(pick(rng)));
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
  }
  return out;
}

std::vector<float> unit_rows(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(static_cast<std::size_t>(n) * dim);
  for (int i = 0; i < n; ++i) {
    float s = 0.0f;
    for (int d = 0; d < dim; ++d) s += std::pow(v[static_cast<std::size_t>(i * dim + d)] = nd(rng), 2.0f);
    for (int d = 0; d < dim; ++d) v[static_cast<std::size_t>(i * dim + d)] /= std::sqrt(s);
  }
  return v;
}

void BM_Swing(benchmark::State& state, Exec exec) {
  const int users = static_cast<int>(state.range(0));
  const int items = users * 4;
  const auto data = user_items(users, items, 40, 7);
  for (auto _ : state) benchmark::DoNotOptimize(swing_topk(data, static_cast<std::size_t>(items), 1.0, 50, exec));
  state.counters["threads"] = exec == Exec::parallel ? omp_get_max_threads() : 1;
  state.SetItemsProcessed(state.iterations() * users);
}

void BM_Cosine(benchmark::State& state, Exec exec) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 32;
  const auto v = unit_rows(n, dim, 9);
  const std::vector<std::uint8_t> eligible(static_cast<std::size_t>(n), 1);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_topk(v, dim, eligible, 50, exec));
  state.counters["threads"] = exec == Exec::parallel ? omp_get_max_threads() : 1;
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK_CAPTURE(BM_Swing, serial, Exec::serial)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Swing, parallel, Exec::parallel)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Cosine, serial, Exec::serial)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Cosine, parallel, Exec::parallel)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
