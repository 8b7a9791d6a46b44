#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace spuq {

struct ChatTurn {
  enum class Role { user, assistant };
  Role role = Role::user;
  std::string content;

  friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

/// One request to a text-generation model: temperature T and prompt x.
struct ModelInput {
  double temperature = 0.7;
  std::optional<std::string> system_message;
  std::string user_prompt;
  /// Earlier turns preceding user_prompt (verbalized-confidence follow-ups).
  std::vector<ChatTurn> history;
  int max_tokens = 256;
  bool request_logprobs = false;

  /// Throws PreconditionError on an empty prompt or non-positive max_tokens.
  void validate() const;

  friend bool operator==(const ModelInput&, const ModelInput&) = default;
};

/// Provider output y with optional per-token log-probabilities.
struct GenerationSample {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  std::string provider_id;
  std::size_t variant_index = 0;

  void validate() const;

  friend bool operator==(const GenerationSample&, const GenerationSample&) = default;
};

struct ProviderProfile {
  std::string name = "default";
  double t_min = 0.0;
  double t_max = 2.0;
  bool supports_system_message = true;
  bool supports_logprobs = false;
  /// Chat-completions wire mode; false means completion-style text prompts.
  bool chat = true;

  void validate() const;
  double clamp(double temperature) const;

  friend bool operator==(const ProviderProfile&, const ProviderProfile&) = default;
};

void to_json(nlohmann::json& j, const ChatTurn& turn);
void from_json(const nlohmann::json& j, ChatTurn& turn);
void to_json(nlohmann::json& j, const ModelInput& input);
void from_json(const nlohmann::json& j, ModelInput& input);
void to_json(nlohmann::json& j, const GenerationSample& sample);
void from_json(const nlohmann::json& j, GenerationSample& sample);
void to_json(nlohmann::json& j, const ProviderProfile& profile);
void from_json(const nlohmann::json& j, ProviderProfile& profile);

}  // namespace spuq
