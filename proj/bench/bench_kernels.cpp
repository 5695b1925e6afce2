#include <random>

#include <benchmark/benchmark.h>

#include "radep/kernels.hpp"

using namespace radep;
using namespace radep::kernels;

namespace {

std::vector<Vector> uniform_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vector> out(n, Vector(d));
  for (auto& v : out) {
    for (double& x : v) x = u(rng);
  }
  return out;
}

const Model& desk_model() {
  static const Model m = Model::initialized({20, 64, 32, 4}, 0.0, 1);
  return m;
}

template <bool Parallel>
void BM_PredictProba(benchmark::State& state) {
  const auto rows = uniform_rows(static_cast<std::size_t>(state.range(0)), 20, 2);
  for (auto _ : state) {
    auto out = Parallel ? predict_proba(desk_model(), rows) : predict_proba_serial(desk_model(), rows);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_MaxCosine(benchmark::State& state) {
  const auto bank = uniform_rows(static_cast<std::size_t>(state.range(0)), 20, 3);
  const auto query = uniform_rows(1, 20, 4)[0];
  for (auto _ : state) {
    auto r = Parallel ? max_cosine(query, bank) : max_cosine_serial(query, bank);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_NearestDistances(benchmark::State& state) {
  const auto bank = uniform_rows(4000, 20, 5);
  const auto queries = uniform_rows(static_cast<std::size_t>(state.range(0)), 20, 6);
  for (auto _ : state) {
    auto r = Parallel ? nearest_distances(queries, bank) : nearest_distances_serial(queries, bank);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_PredictProba<false>)->Name("predict_proba/serial")->Arg(1000)->Arg(10000);
BENCHMARK(BM_PredictProba<true>)->Name("predict_proba/openmp")->Arg(1000)->Arg(10000);
BENCHMARK(BM_MaxCosine<false>)->Name("max_cosine/serial")->Arg(4096)->Arg(65536);
BENCHMARK(BM_MaxCosine<true>)->Name("max_cosine/openmp")->Arg(4096)->Arg(65536);
BENCHMARK(BM_NearestDistances<false>)->Name("nearest_distances/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_NearestDistances<true>)->Name("nearest_distances/openmp")->Arg(64)->Arg(512);

BENCHMARK_MAIN();
