#include <benchmark/benchmark.h>

#include "spuq/engine.hpp"
#include "spuq/mock_provider.hpp"
#include "spuq/perturbation.hpp"

namespace {

spuq::MockScript script() {
  spuq::MockRule paraphrases;
  paraphrases.pattern = "Suggest \\d+ ways to paraphrase";
  paraphrases.outcomes = {{R"({"paraphrased":["Which city is France's capital?","Name the capital of France?",)"
                           R"("What city is the capital of France?","France's capital is which city?",)"
                           R"("Which city serves as the capital of France?","What is France's capital city?",)"
                           R"("Tell me the capital of France?","The capital of France is what?"]})",
                           1.0, std::nullopt}};
  spuq::MockRule answer;
  answer.pattern = ".*";
  answer.outcomes = {{"Paris", 0.8, std::nullopt}, {"Lyon", 0.2, std::nullopt}};
  return {1, {paraphrases, answer}};
}

void BM_RunSpuqMock(benchmark::State& state) {
  spuq::MockProvider model(spuq::ProviderProfile{}, script());
  spuq::ModelInput x0;
  x0.user_prompt = "What is the capital of France?";
  spuq::SpuqConfig cfg;
  cfg.perturbation.k = static_cast<int>(state.range(0));
  cfg.perturbation.temperature = spuq::TemperaturePerturbation::fixed(0.3);
  cfg.perturbation.prompt = spuq::PromptMode::paraphrasing;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    cfg.seed = seed++;
    benchmark::DoNotOptimize(spuq::run_spuq(x0, cfg, model, {&model, 1}).confidence);
  }
}
BENCHMARK(BM_RunSpuqMock)->Arg(1)->Arg(5)->Arg(8);

}  // namespace
BENCHMARK_MAIN();
