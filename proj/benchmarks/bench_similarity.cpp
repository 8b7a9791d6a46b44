#include <benchmark/benchmark.h>

#include <random>

#include "spuq/similarity.hpp"

namespace {

std::vector<std::string> random_tokens(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> sym(0, 25);
  std::vector<std::string> out(n);
  for (auto& t : out) t = std::string(1, static_cast<char>('a' + sym(rng)));
  return out;
}

void BM_LcsLength(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto a = random_tokens(static_cast<std::size_t>(state.range(0)), rng);
  const auto b = random_tokens(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(spuq::lcs_length(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LcsLength)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oNSquared);

void BM_RougeLText(benchmark::State& state) {
  const std::string a = "Is it likely that Jay-Z will turn 60 before Kendrick Lamar does?";
  const std::string b = "Before Kendrick Lamar, will Jay-Z reach the age of 60?";
  spuq::SimilarityMetric metric;
  for (auto _ : state) benchmark::DoNotOptimize(spuq::similarity(a, b, metric));
}
BENCHMARK(BM_RougeLText);

}  // namespace
