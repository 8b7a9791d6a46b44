#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "scenarios.hpp"
#include "spuq/engine.hpp"
#include "spuq/errors.hpp"
#include "spuq/mock_provider.hpp"

using namespace spuq;

namespace {

ModelInput x0(std::string prompt = "Is the sky green?") {
  ModelInput in;
  in.user_prompt = std::move(prompt);
  in.temperature = 0.7;
  return in;
}

SimilarityMetric exact() {
  SimilarityMetric m;
  m.kind = MetricKind::exact_match;
  return m;
}

/// x0 answers `anchor` deterministically; every other prompt draws from
/// `others`.
MockScript anchored(std::string anchor, std::vector<MockOutcome> others, std::uint64_t seed = 0) {
  MockScript script;
  script.seed = seed;
  MockRule fixed;
  fixed.prompt = x0().user_prompt;
  fixed.outcomes = {{std::move(anchor), 1.0, std::nullopt}};
  MockRule rest;
  rest.pattern = ".*";
  rest.outcomes = std::move(others);
  script.rules = {fixed, rest};
  return script;
}

SpuqConfig dummy_config(int k, std::uint64_t seed = 0) {
  SpuqConfig c;
  c.perturbation.k = k;
  c.perturbation.prompt = PromptMode::dummy_tokens;
  c.aggregation.metric = exact();
  c.aggregation.uniform_weights = true;
  c.seed = seed;
  return c;
}

/// Records every request; answers "o<ordinal>" unless told to fail.
struct Recorder final : Provider {
  ProviderProfile prof;
  std::mutex mu;
  std::vector<std::pair<ModelInput, std::uint64_t>> calls;
  std::set<std::uint64_t> failing;
  std::function<std::string(std::uint64_t)> answer = [](std::uint64_t o) { return "o" + std::to_string(o); };
  bool stagger = false;

  const ProviderProfile& profile() const override { return prof; }
  GenerationSample do_generate(const ModelInput& in, std::uint64_t ordinal) override {
    {
      std::lock_guard lock(mu);
      calls.emplace_back(in, ordinal);
    }
    if (stagger) std::this_thread::sleep_for(std::chrono::milliseconds(2 * (10 - static_cast<int>(ordinal % 10))));
    if (failing.count(ordinal)) throw ProviderError("scripted failure");
    GenerationSample s;
    s.text = answer(ordinal);
    if (prof.supports_logprobs) s.token_logprobs = std::vector<double>{-0.1};
    return s;
  }
};

}  // namespace

TEST(RunSpuqTest, RappersScenarioGivesOneHalf) {
  const auto sc = fixtures::rappers();
  MockProvider model(sc.profile, sc.script);
  MockProvider para(sc.profile, sc.script);
  CountingProvider counted(model);
  CountingProvider para_counted(para);
  ModelInput in;
  in.user_prompt = fixtures::kRappersPrompt;
  const auto r = run_spuq(in, sc.options.spuq, counted, {&para_counted, 1});
  EXPECT_DOUBLE_EQ(r.confidence, 0.5);
  EXPECT_EQ(r.original_output, "No");
  EXPECT_EQ(counted.calls(), 5u);
  EXPECT_EQ(para_counted.calls(), 1u);
  ASSERT_EQ(r.variants.size(), 4u);
}

TEST(RunSpuqTest, FixedAnswerGivesCertainty) {
  Recorder p;
  p.answer = [](std::uint64_t) { return std::string("Yes"); };
  for (auto mode : {PromptMode::none, PromptMode::dummy_tokens, PromptMode::system_messages}) {
    SpuqConfig c = dummy_config(5);
    c.perturbation.prompt = mode;
    c.perturbation.temperature = TemperaturePerturbation::random();
    c.aggregation.metric.kind = MetricKind::rouge_l;
    c.aggregation.uniform_weights = false;
    EXPECT_EQ(run_spuq(x0(), c, p).confidence, 1.0);
  }
}

TEST(RunSpuqTest, CallBudgets) {
  for (int k : {1, 5, 8}) {
    Recorder p;
    run_spuq(x0(), dummy_config(k), p);
    EXPECT_EQ(p.calls.size(), static_cast<std::size_t>(k + 1));

    Recorder v;
    SpuqConfig c = dummy_config(k);
    c.aggregation.mode = AggregationMode::intra_sample;
    c.aggregation.intra_source = IntraSource::verbalized_words;
    v.answer = [](std::uint64_t) { return std::string("medium"); };
    const auto r = run_spuq(x0(), c, v);
    EXPECT_EQ(v.calls.size(), static_cast<std::size_t>(2 * (k + 1)));
    EXPECT_DOUBLE_EQ(r.confidence, 0.5);

    Recorder l;
    l.prof.supports_logprobs = true;
    c.aggregation.intra_source = IntraSource::likelihood;
    const auto rl = run_spuq(x0(), c, l);
    EXPECT_EQ(l.calls.size(), static_cast<std::size_t>(k + 1));
    EXPECT_NEAR(rl.confidence, std::exp(-0.1), 1e-12);
  }
}

TEST(RunSpuqTest, OriginalIsSampledUnmodified) {
  Recorder p;
  SpuqConfig c = dummy_config(4);
  c.perturbation.temperature = TemperaturePerturbation::fixed(0.6);
  const auto in = x0();
  run_spuq(in, c, p);
  bool found = false;
  for (const auto& [input, ordinal] : p.calls) {
    if (ordinal != 0) {
      EXPECT_NE(input.user_prompt, in.user_prompt);
      EXPECT_DOUBLE_EQ(input.temperature, 1.3);
      continue;
    }
    EXPECT_EQ(input, in);
    found = true;
  }
  EXPECT_TRUE(found);
}

TEST(RunSpuqTest, OrderingIsStableUnderConcurrency) {
  Recorder p;
  p.stagger = true;
  const auto r = run_spuq(x0(), dummy_config(8), p, {nullptr, 9});
  EXPECT_EQ(r.original_output, "o0");
  for (std::size_t i = 0; i < r.variants.size(); ++i) {
    ASSERT_TRUE(r.variants[i].sample);
    EXPECT_EQ(r.variants[i].sample->text, "o" + std::to_string(i + 1));
    EXPECT_EQ(r.variants[i].variant.index, i + 1);
  }
}

TEST(RunSpuqTest, SameSeedSameResult) {
  const auto script = anchored("A", {{"A", 0.5, std::nullopt}, {"B", 0.5, std::nullopt}}, 7);
  MockProvider m(ProviderProfile{}, script);
  SpuqConfig c = dummy_config(6, 99);
  c.aggregation.uniform_weights = false;
  c.aggregation.metric.kind = MetricKind::rouge_l;
  const auto a = to_json(run_spuq(x0(), c, m, {nullptr, 1}));
  const auto b = to_json(run_spuq(x0(), c, m, {nullptr, 4}));
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(RunSpuqTest, FailRunWrapsProviderErrorInSamplingStage) {
  Recorder p;
  p.failing = {2};
  try {
    run_spuq(x0(), dummy_config(4), p);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "sampling");
    try {
      std::rethrow_if_nested(e);
      FAIL() << "expected a nested error";
    } catch (const ProviderError&) {
    }
  }
}

TEST(RunSpuqTest, DropAndRenormalizeExcludesFailedVariant) {
  Recorder p;
  p.failing = {2};
  p.answer = [](std::uint64_t o) { return std::string(o == 3 ? "B" : "A"); };
  SpuqConfig c = dummy_config(4);
  c.on_sample_failure = FailurePolicy::drop_and_renormalize;
  const auto r = run_spuq(x0(), c, p);
  EXPECT_NEAR(r.confidence, 2.0 / 3.0, 1e-15);
  EXPECT_TRUE(r.variants[1].diagnostics.dropped);
  EXPECT_FALSE(r.variants[1].sample);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("variant 2"), std::string::npos);
}

TEST(RunSpuqTest, OriginalFailureAlwaysFails) {
  Recorder p;
  p.failing = {0};
  SpuqConfig c = dummy_config(3);
  c.on_sample_failure = FailurePolicy::drop_and_renormalize;
  EXPECT_THROW(run_spuq(x0(), c, p), StageError);
}

TEST(RunSpuqTest, ConfigErrorsAreStaged) {
  Recorder p;
  SpuqConfig c = dummy_config(3);
  c.perturbation.prompt = PromptMode::none;
  try {
    run_spuq(x0(), c, p);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }
  c = dummy_config(3);
  c.aggregation.mode = AggregationMode::intra_sample;
  c.aggregation.intra_source = IntraSource::likelihood;
  try {
    run_spuq(x0(), c, p);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
    try {
      std::rethrow_if_nested(e);
    } catch (const CapabilityError& inner) {
      EXPECT_EQ(inner.capability(), "logprobs");
    }
  }
  EXPECT_TRUE(p.calls.empty());
}

TEST(RunSpuqTest, ParaphraseModeWithoutParaphraserIsPerturbationStage) {
  Recorder p;
  SpuqConfig c = dummy_config(3);
  c.perturbation.prompt = PromptMode::paraphrasing;
  try {
    run_spuq(x0(), c, p);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "perturbation");
  }
}

TEST(RunSpuqTest, SeparationFromBaseline) {
  for (double p : {0.25, 0.5}) {
    double spuq_sum = 0.0;
    double base_sum = 0.0;
    const int runs = 200;
    for (int s = 0; s < runs; ++s) {
      MockProvider m(ProviderProfile{},
                     anchored("A", {{"A", 1.0 - p, std::nullopt}, {"B", p, std::nullopt}}, 1000 + s));
      spuq_sum += run_spuq(x0(), dummy_config(5, s), m).confidence;
      base_sum += run_baseline_sampling(x0(), 5, exact(), m).confidence;
    }
    EXPECT_EQ(base_sum / runs, 1.0);
    EXPECT_NEAR(spuq_sum / runs, 1.0 - p, 0.05) << "p=" << p;
  }
}

TEST(BaselineSamplingTest, TwoDifferentDrawsGiveZero) {
  Recorder p;
  const auto r = run_baseline_sampling(x0(), 1, exact(), p);
  EXPECT_EQ(r.confidence, 0.0);
  EXPECT_EQ(p.calls.size(), 2u);
  for (const auto& [input, ordinal] : p.calls) EXPECT_EQ(input, x0());
}

TEST(BaselineSamplingTest, BernoulliAgreementRate) {
  MockScript script;
  MockRule r;
  r.pattern = ".*";
  r.outcomes = {{"A", 0.7, std::nullopt}, {"B", 0.3, std::nullopt}};
  script.rules = {r};
  double sum = 0.0;
  int anchored_runs = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    script.seed = s;
    MockProvider m(ProviderProfile{}, script);
    const auto res = run_baseline_sampling(x0(), 40, exact(), m);
    if (res.original_output != "A") continue;
    sum += res.confidence;
    ++anchored_runs;
  }
  ASSERT_GT(anchored_runs, 20);
  EXPECT_NEAR(sum / anchored_runs, 0.7, 0.1);
}

TEST(BaselineSamplingTest, RejectsNonPositiveK) {
  Recorder p;
  EXPECT_THROW(run_baseline_sampling(x0(), 0, exact(), p), StageError);
}

TEST(SpuqConfigTest, ValidateRejectsInactivePerturbation) {
  SpuqConfig c;
  EXPECT_THROW(c.validate(), Error);
  c.perturbation.temperature = TemperaturePerturbation::fixed(0.3);
  EXPECT_NO_THROW(c.validate());
}
