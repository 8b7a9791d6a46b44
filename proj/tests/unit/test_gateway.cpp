#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <thread>

#include <httplib.h>

#include "scenarios.hpp"
#include "spuq/cache.hpp"
#include "spuq/errors.hpp"
#include "spuq/gateway.hpp"
#include "spuq/hashing.hpp"
#include "spuq/http_provider.hpp"
#include "spuq/mock_provider.hpp"

using namespace spuq;

namespace {

ModelInput prompt(std::string text, double t = 0.7) {
  ModelInput in;
  in.user_prompt = std::move(text);
  in.temperature = t;
  return in;
}

MockScript coin_script(std::uint64_t seed) {
  MockRule r;
  r.pattern = ".*";
  r.outcomes = {{"Yes", 0.5, std::nullopt}, {"No", 0.5, std::nullopt}};
  return {seed, {r}};
}

}  // namespace

TEST(ModelInputTest, NegativeTemperatureIsRejected) {
  ModelInput in = prompt("x", -0.1);
  EXPECT_THROW(in.validate(), PreconditionError);
}

TEST(ModelInputTest, EmptyPromptIsRejected) {
  const auto sc = fixtures::rappers();
  MockProvider mock(sc.profile, sc.script);
  EXPECT_THROW(mock.generate(prompt(""), 0), PreconditionError);
  ModelInput bad = prompt("x");
  bad.max_tokens = 0;
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(ProviderProfileTest, RequiresOrderedTemperatureRange) {
  ProviderProfile p;
  p.t_min = 1.0;
  p.t_max = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(GenerationSampleTest, LogprobsMustBeNonPositiveAndNonEmpty) {
  GenerationSample s;
  s.text = "x";
  s.token_logprobs = std::vector<double>{};
  EXPECT_THROW(s.validate(), PreconditionError);
  s.token_logprobs = std::vector<double>{-0.1, 0.2};
  EXPECT_THROW(s.validate(), PreconditionError);
  s.token_logprobs = std::vector<double>{-0.1, 0.0};
  EXPECT_NO_THROW(s.validate());
}

TEST(MockProviderTest, ExactPromptAnswersScriptedText) {
  const auto sc = fixtures::rappers();
  MockProvider mock(sc.profile, sc.script);
  const auto s = mock.generate(prompt(fixtures::kRappersPrompt), 0);
  EXPECT_EQ(s.text, "No");
  EXPECT_EQ(s.provider_id, "rappers-mock");
}

TEST(MockProviderTest, SeededCoinMatchesConfiguredFrequency) {
  MockProvider mock(ProviderProfile{}, coin_script(123));
  int yes = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) yes += mock.generate(prompt("Flip?"), i).text == "Yes" ? 1 : 0;
  EXPECT_NEAR(yes / 1000.0, 0.5, 0.05);
}

TEST(MockProviderTest, CategoricalFrequenciesPassChiSquare) {
  MockRule r;
  r.pattern = ".*";
  r.outcomes = {{"a", 0.2, std::nullopt}, {"b", 0.3, std::nullopt}, {"c", 0.5, std::nullopt}};
  MockProvider mock(ProviderProfile{}, MockScript{99, {r}});
  std::map<std::string, int> counts;
  const int n = 6000;
  for (int i = 0; i < n; ++i) ++counts[mock.generate(prompt("q"), static_cast<std::uint64_t>(i)).text];
  const double expected[] = {0.2 * n, 0.3 * n, 0.5 * n};
  const double chi2 = std::pow(counts["a"] - expected[0], 2) / expected[0] +
                      std::pow(counts["b"] - expected[1], 2) / expected[1] +
                      std::pow(counts["c"] - expected[2], 2) / expected[2];
  EXPECT_LT(chi2, 13.82);  // chi-square, 2 dof, p = 0.001
}

TEST(MockProviderTest, PureFunctionOfInputAndOrdinal) {
  MockProvider a(ProviderProfile{}, coin_script(5));
  MockProvider b(ProviderProfile{}, coin_script(5));
  for (std::uint64_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.generate(prompt("Flip?"), i).text, b.generate(prompt("Flip?"), i).text);
    EXPECT_EQ(a.generate(prompt("Flip?"), i).text, a.generate(prompt("Flip?"), i).text);
  }
}

TEST(MockProviderTest, ConcurrentCallsMatchSerialCalls) {
  MockProvider mock(ProviderProfile{}, coin_script(17));
  std::vector<std::string> serial;
  for (std::uint64_t i = 0; i < 64; ++i) serial.push_back(mock.generate(prompt("Flip?"), i).text);
  std::vector<std::future<std::string>> futures;
  for (std::uint64_t i = 0; i < 64; ++i)
    futures.push_back(std::async(std::launch::async, [&mock, i] { return mock.generate(prompt("Flip?"), i).text; }));
  for (std::size_t i = 0; i < futures.size(); ++i) EXPECT_EQ(futures[i].get(), serial[i]);
}

TEST(MockProviderTest, ExactRulesBeatPatternsAndBandsFilter) {
  MockScript script;
  MockRule pattern_rule;
  pattern_rule.pattern = "capital";
  pattern_rule.outcomes = {{"pattern", 1.0, std::nullopt}};
  MockRule hot;
  hot.prompt = "What is the capital?";
  hot.t_lo = 1.0;
  hot.outcomes = {{"hot", 1.0, std::nullopt}};
  MockRule any;
  any.prompt = "What is the capital?";
  any.outcomes = {{"exact", 1.0, std::nullopt}};
  script.rules = {pattern_rule, hot, any};
  MockProvider mock(ProviderProfile{}, script);
  EXPECT_EQ(mock.generate(prompt("What is the capital?", 0.5), 0).text, "exact");
  EXPECT_EQ(mock.generate(prompt("What is the capital?", 1.2), 0).text, "hot");
  EXPECT_EQ(mock.generate(prompt("Name a capital", 1.2), 0).text, "pattern");
  EXPECT_THROW(mock.generate(prompt("unrelated"), 0), ProviderError);
}

TEST(MockProviderTest, SystemFilterRestrictsRule) {
  MockRule r;
  r.prompt = "q";
  r.system = "be terse";
  r.outcomes = {{"terse", 1.0, std::nullopt}};
  MockRule fallback;
  fallback.prompt = "q";
  fallback.outcomes = {{"plain", 1.0, std::nullopt}};
  MockProvider mock(ProviderProfile{}, MockScript{0, {r, fallback}});
  ModelInput in = prompt("q");
  EXPECT_EQ(mock.generate(in, 0).text, "plain");
  in.system_message = "be terse";
  EXPECT_EQ(mock.generate(in, 0).text, "terse");
}

TEST(MockProviderTest, LogprobsRequestedWithoutSupportIsCapabilityError) {
  MockProvider mock(ProviderProfile{}, coin_script(1));
  ModelInput in = prompt("Flip?");
  in.request_logprobs = true;
  try {
    mock.generate(in, 0);
    FAIL() << "expected CapabilityError";
  } catch (const CapabilityError& e) {
    EXPECT_EQ(e.capability(), "logprobs");
  }
}

TEST(MockProviderTest, LogprobsDefaultToOutcomeProbability) {
  ProviderProfile p;
  p.supports_logprobs = true;
  MockRule r;
  r.prompt = "q";
  r.outcomes = {{"only", 1.0, std::nullopt}};
  MockProvider mock(p, MockScript{0, {r}});
  ModelInput in = prompt("q");
  in.request_logprobs = true;
  const auto s = mock.generate(in, 0);
  ASSERT_TRUE(s.token_logprobs);
  EXPECT_EQ(*s.token_logprobs, std::vector<double>{0.0});
}

TEST(MockScriptTest, JsonFormatRoundTrips) {
  const auto j = nlohmann::json::parse(R"({
    "seed": 4,
    "rules": [
      {"prompt": "a", "output": "x"},
      {"pattern": "b+", "temperature": [0.5, null], "outputs": {"Yes": 0.25, "No": 0.75}},
      {"prompt": "c", "system": "s", "outputs": [{"text": "z", "p": 1, "logprobs": [-0.5]}]}
    ]})");
  const auto script = j.get<MockScript>();
  ASSERT_EQ(script.rules.size(), 3u);
  EXPECT_EQ(script.seed, 4u);
  EXPECT_EQ(script.rules[1].t_lo, 0.5);
  EXPECT_TRUE(std::isinf(script.rules[1].t_hi));
  EXPECT_EQ(script.rules[2].outcomes[0].logprobs, std::vector<double>{-0.5});
  const nlohmann::json back = script;
  const auto again = back.get<MockScript>();
  EXPECT_EQ(again.rules.size(), 3u);
  EXPECT_EQ(again.rules[1].outcomes.size(), 2u);
  EXPECT_THROW(nlohmann::json::parse(R"({"rules":[{"output":"x"}]})").get<MockScript>(), ConfigError);
}

TEST(ClampTest, DispatchedTemperatureIsClamped) {
  ProviderProfile p;
  p.t_min = 0.0;
  p.t_max = 1.0;
  MockRule r;
  r.pattern = ".*";
  r.outcomes = {{"ok", 1.0, std::nullopt}};
  struct Spy final : Provider {
    ProviderProfile prof;
    double seen = -1.0;
    const ProviderProfile& profile() const override { return prof; }
    GenerationSample do_generate(const ModelInput& in, std::uint64_t) override {
      seen = in.temperature;
      return {"ok", std::nullopt, "", 0};
    }
  } spy;
  spy.prof = p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const double req = t(rng);
    spy.generate(prompt("x", req), 0);
    EXPECT_EQ(spy.seen, std::min(std::max(req, p.t_min), p.t_max));
  }
}

TEST(EmbedderTest, MockIsDeterministicAndOrthogonal) {
  MockEmbedder e(8);
  const auto a = e.embed("alpha");
  EXPECT_EQ(a, e.embed("alpha"));
  EXPECT_DOUBLE_EQ(cosine_similarity(a, e.embed("alpha")), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, e.embed("beta")), 0.0);
  EXPECT_EQ(a.size(), 8u);
}

TEST(EmbedderTest, MockRunsOutOfDimensions) {
  MockEmbedder e(2);
  e.embed("a");
  e.embed("b");
  EXPECT_THROW(e.embed("c"), ProviderError);
}

TEST(CacheTest, RoundTripIsBitExact) {
  fixtures::TempDir dir;
  ResponseCache cache(dir.path());
  GenerationSample s{"Paris", std::vector<double>{-0.1234567890123456789, -1e-300}, "p", 3};
  const auto hash = cache.store("p", prompt("capital?"), 3, s);
  EXPECT_EQ(hash, request_hash("p", prompt("capital?"), 3));
  const auto hit = cache.lookup(hash);
  ASSERT_TRUE(hit);
  EXPECT_EQ(*hit, s);
  const auto body = nlohmann::json::parse(std::ifstream(cache.path_for(hash)));
  EXPECT_TRUE(body.contains("request"));
  EXPECT_TRUE(body.contains("response"));
  EXPECT_TRUE(body.contains("timestamp"));
}

TEST(CacheTest, UnknownHashIsAbsent) {
  fixtures::TempDir dir;
  ResponseCache cache(dir.path());
  EXPECT_FALSE(cache.lookup(std::string(64, 'a')));
}

TEST(CacheTest, KeyCoversEveryTupleField) {
  const auto base = request_hash("p", prompt("q"), 0);
  EXPECT_NE(base, request_hash("p", prompt("q"), 1));
  EXPECT_NE(base, request_hash("other", prompt("q"), 0));
  EXPECT_NE(base, request_hash("p", prompt("q", 0.9), 0));
  EXPECT_NE(base, request_hash("p", prompt("q2"), 0));
  EXPECT_EQ(base, request_hash("p", prompt("q"), 0));
  // Independent recomputation from the documented tuple.
  const nlohmann::json tuple{{"provider", "p"}, {"input", prompt("q")}, {"ordinal", 0}};
  EXPECT_EQ(base, sha256_hex(tuple.dump()));
}

TEST(CacheTest, CorruptEntryRaisesIntegrityErrorNamingFile) {
  fixtures::TempDir dir;
  ResponseCache cache(dir.path());
  const auto hash = cache.store("p", prompt("q"), 0, {"x", std::nullopt, "p", 0});
  std::ofstream(cache.path_for(hash)) << "{not json";
  try {
    cache.lookup(hash);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find(cache.path_for(hash).filename().string()), std::string::npos);
  }
}

TEST(CacheTest, EntryStoredUnderWrongKeyIsRejected) {
  fixtures::TempDir dir;
  ResponseCache cache(dir.path());
  const auto h1 = cache.store("p", prompt("q"), 0, {"x", std::nullopt, "p", 0});
  const auto h2 = request_hash("p", prompt("q"), 1);
  std::filesystem::copy_file(cache.path_for(h1), cache.path_for(h2));
  EXPECT_THROW(cache.lookup(h2), IntegrityError);
}

TEST(CacheTest, ConcurrentStoresLeaveReadableEntries) {
  fixtures::TempDir dir;
  ResponseCache cache(dir.path());
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&cache, t] {
      for (std::uint64_t i = 0; i < 20; ++i)
        cache.store("p", prompt("q"), i, {"v" + std::to_string(i), std::nullopt, "p", 0});
      (void)t;
    });
  for (auto& th : threads) th.join();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto hit = cache.lookup(request_hash("p", prompt("q"), i));
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->text, "v" + std::to_string(i));
  }
}

TEST(CachingProviderTest, WarmCacheMatchesColdAndSkipsProvider) {
  fixtures::TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir.path());
  MockProvider mock(ProviderProfile{}, coin_script(8));
  CountingProvider counted(mock);
  CachingProvider cached(counted, cache);
  std::vector<std::string> cold;
  for (std::uint64_t i = 0; i < 10; ++i) cold.push_back(cached.generate(prompt("Flip?"), i).text);
  EXPECT_EQ(counted.calls(), 10u);
  EXPECT_EQ(cached.misses(), 10u);
  for (std::uint64_t i = 0; i < 10; ++i) EXPECT_EQ(cached.generate(prompt("Flip?"), i).text, cold[i]);
  EXPECT_EQ(counted.calls(), 10u);
  EXPECT_EQ(cached.hits(), 10u);
}

TEST(CachingProviderTest, CorruptEntryIsRegeneratedNotReused) {
  fixtures::TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir.path());
  MockProvider mock(ProviderProfile{}, coin_script(8));
  CountingProvider counted(mock);
  CachingProvider cached(counted, cache);
  const auto first = cached.generate(prompt("Flip?"), 0);
  std::ofstream(cache->path_for(request_hash(mock.id(), prompt("Flip?"), 0))) << "garbage";
  const auto again = cached.generate(prompt("Flip?"), 0);
  EXPECT_EQ(again.text, first.text);
  EXPECT_EQ(counted.calls(), 2u);
  EXPECT_TRUE(cache->lookup(request_hash(mock.id(), prompt("Flip?"), 0)));
}

namespace {

/// Local OpenAI-compatible endpoint with a scripted status sequence.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::vector<std::pair<int, std::string>> replies) : replies_(std::move(replies)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu_);
      bodies_.push_back(req.body);
      paths_.push_back(req.path);
      auth_.push_back(req.get_header_value("Authorization"));
      const auto& r = replies_[std::min(calls_, replies_.size() - 1)];
      ++calls_;
      res.status = r.first;
      res.set_content(r.second, "application/json");
    };
    server_.Post("/v1/chat/completions", handler);
    server_.Post("/v1/completions", handler);
    server_.Post("/v1/embeddings", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  HttpEndpoint endpoint() const {
    HttpEndpoint e;
    e.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    e.model = "m";
    e.api_key_env = "SPUQ_TEST_FAKE_KEY";
    e.timeout = std::chrono::seconds(5);
    return e;
  }
  std::size_t calls() {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
  }
  nlohmann::json body(std::size_t i) {
    std::lock_guard<std::mutex> lock(mu_);
    return nlohmann::json::parse(bodies_.at(i));
  }
  std::string path(std::size_t i) {
    std::lock_guard<std::mutex> lock(mu_);
    return paths_.at(i);
  }
  std::string auth(std::size_t i) {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_.at(i);
  }

 private:
  std::vector<std::pair<int, std::string>> replies_;
  std::mutex mu_;
  std::size_t calls_ = 0;
  std::vector<std::string> bodies_, paths_, auth_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

const char* kChatOk = R"({"choices":[{"message":{"role":"assistant","content":"Paris"},
  "logprobs":{"content":[{"token":"Paris","logprob":-0.25}]}}]})";

RetryPolicy no_sleep(std::vector<std::chrono::milliseconds>* waits = nullptr) {
  RetryPolicy r;
  r.sleep = [waits](std::chrono::milliseconds d) {
    if (waits) waits->push_back(d);
  };
  return r;
}

}  // namespace

TEST(HttpProviderTest, ChatRequestShapeAndAuth) {
  ::setenv("SPUQ_TEST_FAKE_KEY", "secret", 1);
  FakeEndpoint fake({{200, kChatOk}});
  ProviderProfile p;
  p.name = "fake";
  p.supports_logprobs = true;
  OpenAiCompatibleProvider provider(p, fake.endpoint(), no_sleep());
  ModelInput in = prompt("Capital of France?");
  in.system_message = "You are terse.";
  in.request_logprobs = true;
  const auto s = provider.generate(in, 0);
  EXPECT_EQ(s.text, "Paris");
  EXPECT_EQ(*s.token_logprobs, std::vector<double>{-0.25});
  EXPECT_EQ(s.provider_id, "fake@m");
  const auto body = fake.body(0);
  EXPECT_EQ(fake.path(0), "/v1/chat/completions");
  EXPECT_EQ(fake.auth(0), "Bearer secret");
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "Capital of France?");
  EXPECT_EQ(body["logprobs"], true);
  EXPECT_EQ(body["max_tokens"], 256);
  ::unsetenv("SPUQ_TEST_FAKE_KEY");
}

TEST(HttpProviderTest, CompletionModeConcatenatesSystemAndPrompt) {
  FakeEndpoint fake({{200, R"({"choices":[{"text":" Paris","logprobs":{"token_logprobs":[-0.5,null]}}]})"}});
  ProviderProfile p;
  p.chat = false;
  p.supports_logprobs = true;
  OpenAiCompatibleProvider provider(p, fake.endpoint(), no_sleep());
  ModelInput in = prompt("Capital?");
  in.system_message = "Answer briefly.";
  in.request_logprobs = true;
  const auto s = provider.generate(in, 0);
  EXPECT_EQ(s.text, " Paris");
  EXPECT_EQ(*s.token_logprobs, std::vector<double>{-0.5});
  EXPECT_EQ(fake.path(0), "/v1/completions");
  EXPECT_EQ(fake.body(0)["prompt"], "Answer briefly.\n\nCapital?");
}

TEST(HttpProviderTest, RetriesOn429WithExponentialBackoff) {
  FakeEndpoint fake({{429, "{}"}, {429, "{}"}, {200, kChatOk}});
  std::vector<std::chrono::milliseconds> waits;
  OpenAiCompatibleProvider provider(ProviderProfile{}, fake.endpoint(), no_sleep(&waits));
  EXPECT_EQ(provider.generate(prompt("q"), 0).text, "Paris");
  EXPECT_EQ(fake.calls(), 3u);
  ASSERT_EQ(waits.size(), 2u);
  EXPECT_EQ(waits[0].count(), 1000);
  EXPECT_EQ(waits[1].count(), 2000);
}

TEST(HttpProviderTest, ExhaustedRetriesAreRetriable) {
  FakeEndpoint fake({{429, "{}"}});
  OpenAiCompatibleProvider provider(ProviderProfile{}, fake.endpoint(), no_sleep());
  EXPECT_THROW(provider.generate(prompt("q"), 0), RetriableError);
  EXPECT_EQ(fake.calls(), 3u);
}

TEST(HttpProviderTest, TransportFailureIsRetriable) {
  HttpEndpoint e;
  e.base_url = "http://127.0.0.1:1/v1";
  e.timeout = std::chrono::seconds(1);
  OpenAiCompatibleProvider provider(ProviderProfile{}, e, no_sleep());
  EXPECT_THROW(provider.generate(prompt("q"), 0), RetriableError);
}

TEST(HttpProviderTest, RejectedFeatureIsCapabilityError) {
  FakeEndpoint fake({{400, R"({"error":{"message":"logprobs is not supported for this model"}})"}});
  ProviderProfile p;
  p.supports_logprobs = true;
  OpenAiCompatibleProvider provider(p, fake.endpoint(), no_sleep());
  ModelInput in = prompt("q");
  in.request_logprobs = true;
  try {
    provider.generate(in, 0);
    FAIL() << "expected CapabilityError";
  } catch (const CapabilityError& e) {
    EXPECT_EQ(e.capability(), "logprobs");
  }
  EXPECT_EQ(fake.calls(), 1u);
}

TEST(HttpProviderTest, OtherClientErrorsAreFinal) {
  FakeEndpoint fake({{401, R"({"error":"bad key"})"}});
  OpenAiCompatibleProvider provider(ProviderProfile{}, fake.endpoint(), no_sleep());
  EXPECT_THROW(provider.generate(prompt("q"), 0), ProviderError);
  EXPECT_EQ(fake.calls(), 1u);
}

TEST(HttpProviderTest, MalformedResponseIsProviderError) {
  FakeEndpoint fake({{200, R"({"unexpected":true})"}});
  OpenAiCompatibleProvider provider(ProviderProfile{}, fake.endpoint(), no_sleep());
  EXPECT_THROW(provider.generate(prompt("q"), 0), ProviderError);
}

TEST(HttpEmbedderTest, ReturnsVectorFromEmbeddingsEndpoint) {
  FakeEndpoint fake({{200, R"({"data":[{"embedding":[0.6,0.8]}]})"}});
  OpenAiCompatibleEmbedder embedder(fake.endpoint(), no_sleep());
  EXPECT_EQ(embedder.embed("hello"), (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(fake.path(0), "/v1/embeddings");
  EXPECT_EQ(fake.body(0)["input"], "hello");
}

TEST(HashingTest, KnownDigestAndSeedMixing) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(hash64("abc"), 0xba7816bf8f01cfeaULL);
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  for (std::uint64_t b : {0ULL, 1ULL, ~0ULL, 0x8000000000000000ULL}) {
    const double u = unit_interval(b);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
