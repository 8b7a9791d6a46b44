#include <benchmark/benchmark.h>

#include <random>

#include "spuq/evaluation.hpp"

namespace {

void BM_ExpectedCalibrationError(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<spuq::EvalOutcome> outcomes(static_cast<std::size_t>(state.range(0)));
  for (auto& o : outcomes) {
    o.confidence = unit(rng);
    o.accuracy = unit(rng) < o.confidence ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(spuq::expected_calibration_error(outcomes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExpectedCalibrationError)->Range(1 << 10, 1 << 16);

}  // namespace
