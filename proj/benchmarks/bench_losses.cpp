#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "lavpr/losses.hpp"

namespace lavpr {
namespace {

// P places x K images, the default fusion batch shape.
void BM_MsLoss(benchmark::State& state) {
  const auto places = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 4, n = places * k;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i / k));
  const auto masks = build_batch_masks(ids);
  MatrixD sims(n, n);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : sims.row(i)) x = u(rng);
  }
  const auto cfg = MsConfig::fusion_defaults();
  for (auto _ : state) {
    auto r = ms_loss(sims, masks, cfg);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_MsLoss)->Arg(30)->Arg(120)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace lavpr
