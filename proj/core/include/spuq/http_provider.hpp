#pragma once

#include <chrono>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "spuq/gateway.hpp"

namespace spuq {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  /// Replaced in tests to avoid real sleeps.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct HttpEndpoint {
  /// e.g. "https://api.openai.com/v1"; path segments are kept as a prefix.
  std::string base_url;
  std::string model;
  /// Environment variable holding the API key; SPUQ_API_KEY is the fallback.
  std::string api_key_env = "SPUQ_API_KEY";
  std::chrono::seconds timeout{60};
};

/// Chat-completions request body (or completions body for text profiles).
nlohmann::json build_generation_request(const ModelInput& input, const ProviderProfile& profile,
                                        const std::string& model);
/// Parses an OpenAI-compatible chat or text completion response.
GenerationSample parse_generation_response(const nlohmann::json& body,
                                           const ProviderProfile& profile);
/// Prompt sent to completion-style providers: system, history and user turns joined.
std::string flatten_prompt(const ModelInput& input);

/// OpenAI-compatible provider over HTTP(S). 3 attempts with exponential
/// backoff from 1s on transport errors and HTTP 429; other errors are final.
class OpenAiCompatibleProvider final : public Provider {
 public:
  OpenAiCompatibleProvider(ProviderProfile profile, HttpEndpoint endpoint, RetryPolicy retry = {});

  const ProviderProfile& profile() const override { return profile_; }
  std::string id() const override;

 protected:
  GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) override;

 private:
  ProviderProfile profile_;
  HttpEndpoint endpoint_;
  RetryPolicy retry_;
};

/// OpenAI-compatible /embeddings client.
class OpenAiCompatibleEmbedder final : public Embedder {
 public:
  explicit OpenAiCompatibleEmbedder(HttpEndpoint endpoint, RetryPolicy retry = {});
  std::vector<double> embed(std::string_view text) override;

 private:
  HttpEndpoint endpoint_;
  RetryPolicy retry_;
};

}  // namespace spuq
