#pragma once

#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "spuq/gateway.hpp"

namespace spuq {

struct MockOutcome {
  std::string text;
  double weight = 1.0;
  std::optional<std::vector<double>> logprobs;
};

/// (prompt matcher, temperature band) -> categorical output distribution.
/// Exactly one of `prompt` (exact match on the user prompt) or `pattern`
/// (ECMAScript regex searched in the user prompt) is set.
struct MockRule {
  std::optional<std::string> prompt;
  std::optional<std::string> pattern;
  /// Optional exact filter on the system message ("" matches no message).
  std::optional<std::string> system;
  /// Inclusive temperature band.
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  std::vector<MockOutcome> outcomes;
};

struct MockScript {
  std::uint64_t seed = 0;
  std::vector<MockRule> rules;
};

void to_json(nlohmann::json& j, const MockScript& script);
void from_json(const nlohmann::json& j, MockScript& script);

/// Deterministic scripted provider. Exact-prompt rules take precedence over
/// pattern rules; within each group the first rule whose band and system
/// filter match wins. Each call draws from a seed derived from
/// (script seed, input, ordinal), so the provider is a pure function of its
/// arguments and safe to call concurrently.
class MockProvider final : public Provider {
 public:
  MockProvider(ProviderProfile profile, MockScript script);

  const ProviderProfile& profile() const override { return profile_; }
  const MockScript& script() const noexcept { return script_; }

 protected:
  GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) override;

 private:
  const MockRule* match(const ModelInput& input) const;

  ProviderProfile profile_;
  MockScript script_;
  std::unordered_map<std::string, std::vector<std::size_t>> exact_;
  std::vector<std::pair<std::size_t, std::regex>> patterns_;
};

/// Embedding endpoint stand-in: each distinct string maps to its own unit
/// basis vector, in order of first appearance (or a declared vocabulary).
class MockEmbedder final : public Embedder {
 public:
  explicit MockEmbedder(std::size_t dimension, std::vector<std::string> vocabulary = {});

  std::vector<double> embed(std::string_view text) override;
  std::size_t dimension() const noexcept { return dimension_; }

 private:
  std::size_t dimension_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace spuq
