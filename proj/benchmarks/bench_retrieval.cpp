#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "lavpr/retrieval.hpp"

namespace lavpr {
namespace {

MatrixD random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  MatrixD m(n, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : m.row(i)) x = g(rng);
  }
  return m;
}

std::vector<RecordMeta> records(std::size_t n) {
  std::vector<RecordMeta> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = std::to_string(i);
    out.push_back({id, id, Modality::kVision, Split::kDatabase});
  }
  return out;
}

void BM_BuildIndex(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto rows = random_rows(n, d, 1);
  const auto meta = records(n);
  for (auto _ : state) {
    auto index = build_index(rows, meta);
    benchmark::DoNotOptimize(index.rows.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_BuildIndex)->Args({10000, 1024})->Unit(benchmark::kMillisecond);

void BM_SearchTop20(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto index = build_index(random_rows(n, d, 1), records(n));
  const auto query = random_rows(1, d, 2);
  for (auto _ : state) {
    auto hits = search(index, query.row(0), 20);
    benchmark::DoNotOptimize(hits.data());
  }
}
BENCHMARK(BM_SearchTop20)->Args({10000, 1024})->Args({10000, 128})->Unit(benchmark::kMillisecond);

void BM_SearchBatch(benchmark::State& state) {
  const std::size_t n = 10000, d = 1024;
  const auto index = build_index(random_rows(n, d, 1), records(n));
  const auto queries = random_rows(64, d, 3);
  const auto threads = static_cast<unsigned>(state.range(0));
  for (auto _ : state) {
    auto out = search_batch(index, queries, 20, threads);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_SearchBatch)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace
}  // namespace lavpr
