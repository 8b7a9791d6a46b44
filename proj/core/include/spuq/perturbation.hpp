#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spuq/gateway.hpp"
#include "spuq/similarity.hpp"
#include "spuq/types.hpp"

namespace spuq {

enum class TemperatureMode { none, fixed_offset, random_uniform };
enum class PromptMode { none, paraphrasing, dummy_tokens, system_messages };
enum class ShortfallPolicy { fill, fail };

std::string_view to_string(TemperatureMode mode);
std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);

struct TemperaturePerturbation {
  TemperatureMode mode = TemperatureMode::none;
  /// Used by fixed_offset only.
  double offset = 0.0;

  static TemperaturePerturbation none() { return {}; }
  static TemperaturePerturbation fixed(double delta) { return {TemperatureMode::fixed_offset, delta}; }
  static TemperaturePerturbation random() { return {TemperatureMode::random_uniform, 0.0}; }

  friend bool operator==(const TemperaturePerturbation&, const TemperaturePerturbation&) = default;
};

/// Parses "none", "random" or a signed offset such as "+0.3".
TemperaturePerturbation parse_temperature_perturbation(std::string_view text);
std::string to_string(const TemperaturePerturbation& t);

struct DummyToken {
  std::string text;
  bool append_only = false;
  /// Only eligible when the prompt is a question (ends with '?').
  bool questions_only = false;

  friend bool operator==(const DummyToken&, const DummyToken&) = default;
};

std::vector<DummyToken> default_dummy_tokens();
std::vector<std::string> default_system_messages();

struct PerturbationConfig {
  int k = 5;
  TemperaturePerturbation temperature{};
  PromptMode prompt = PromptMode::none;
  std::vector<DummyToken> dummy_tokens = default_dummy_tokens();
  std::vector<std::string> system_messages = default_system_messages();
  double paraphraser_temperature = 0.7;
  ShortfallPolicy shortfall = ShortfallPolicy::fill;

  /// k >= 1 and at least one of the two modes active.
  void validate() const;
};

struct PerturbedVariant {
  std::size_t index = 0;  // 1..k
  ModelInput input;
  /// w_i = s(x0, x_i) over user prompts.
  double prompt_weight = 1.0;
  /// Paraphraser fell short; this variant carries a dummy-token prompt instead.
  bool fallback = false;
};

struct DummyEdit {
  std::string text;
  std::string token;
  bool prepended = false;
};

bool is_question(std::string_view prompt);

/// x0 + d or d + x0 with d drawn uniformly from the eligible tokens.
DummyEdit apply_dummy_token(std::string_view prompt, std::span<const DummyToken> tokens,
                            std::mt19937_64& rng);
DummyEdit apply_dummy_token(std::string_view prompt, std::mt19937_64& rng);

/// Replaces the system message with a uniform draw from `messages`,
/// excluding the current one. A missing system message counts as "".
ModelInput swap_system_message(const ModelInput& input, const ProviderProfile& profile,
                               std::span<const std::string> messages, std::mt19937_64& rng);

std::string paraphrase_prompt(std::string_view original, int k);

/// Extracts {"paraphrased": [...]} from a reply, tolerating surrounding prose
/// or code fences. Throws ParaphraseError when no such object is present.
std::vector<std::string> parse_paraphrases(std::string_view raw);

/// One paraphraser call (plus one retry on malformed or short output).
/// Returns exactly k strings, keeping the first k of a longer list.
std::vector<std::string> paraphrase(std::string_view original, int k, Provider& paraphraser,
                                    double temperature = 0.7);

/// k perturbed variants of `original`. Temperatures are clamped to `profile`;
/// prompt weights use `weight_metric` on user prompts only.
std::vector<PerturbedVariant> perturb(const ModelInput& original, const PerturbationConfig& config,
                                      const ProviderProfile& profile, std::uint64_t seed,
                                      Provider* paraphraser, const SimilarityMetric& weight_metric);

}  // namespace spuq
