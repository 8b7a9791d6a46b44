#include "spuq/types.hpp"

#include <algorithm>
#include <cmath>

#include "spuq/errors.hpp"

namespace spuq {

void ModelInput::validate() const {
  if (user_prompt.empty()) throw PreconditionError("user_prompt must be non-empty");
  if (max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
  if (!std::isfinite(temperature) || temperature < 0.0)
    throw PreconditionError("temperature must be a finite value >= 0");
}

void GenerationSample::validate() const {
  if (!token_logprobs) return;
  if (token_logprobs->empty()) throw PreconditionError("token_logprobs present but empty");
  for (double lp : *token_logprobs) {
    if (!(lp <= 0.0)) throw PreconditionError("token logprob must be <= 0");
  }
}

void ProviderProfile::validate() const {
  if (!(t_min < t_max)) throw ConfigError("provider '" + name + "': t_min must be < t_max");
}

double ProviderProfile::clamp(double temperature) const {
  return std::min(std::max(temperature, t_min), t_max);
}

namespace {

std::string_view role_name(ChatTurn::Role r) { return r == ChatTurn::Role::user ? "user" : "assistant"; }

}  // namespace

void to_json(nlohmann::json& j, const ChatTurn& turn) {
  j = nlohmann::json{{"role", role_name(turn.role)}, {"content", turn.content}};
}

void from_json(const nlohmann::json& j, ChatTurn& turn) {
  const auto role = j.at("role").get<std::string>();
  if (role == "user") {
    turn.role = ChatTurn::Role::user;
  } else if (role == "assistant") {
    turn.role = ChatTurn::Role::assistant;
  } else {
    throw ConfigError("unknown chat role '" + role + "'");
  }
  turn.content = j.at("content").get<std::string>();
}

void to_json(nlohmann::json& j, const ModelInput& input) {
  j = nlohmann::json{{"temperature", input.temperature},
                     {"user_prompt", input.user_prompt},
                     {"max_tokens", input.max_tokens},
                     {"request_logprobs", input.request_logprobs}};
  j["system_message"] = input.system_message ? nlohmann::json(*input.system_message) : nlohmann::json();
  if (!input.history.empty()) j["history"] = input.history;
}

void from_json(const nlohmann::json& j, ModelInput& input) {
  input.temperature = j.value("temperature", 0.7);
  input.user_prompt = j.at("user_prompt").get<std::string>();
  input.max_tokens = j.value("max_tokens", 256);
  input.request_logprobs = j.value("request_logprobs", false);
  if (j.contains("system_message") && !j["system_message"].is_null()) {
    input.system_message = j["system_message"].get<std::string>();
  } else {
    input.system_message.reset();
  }
  input.history = j.value("history", std::vector<ChatTurn>{});
}

void to_json(nlohmann::json& j, const GenerationSample& sample) {
  j = nlohmann::json{{"text", sample.text},
                     {"provider_id", sample.provider_id},
                     {"variant_index", sample.variant_index}};
  j["token_logprobs"] = sample.token_logprobs ? nlohmann::json(*sample.token_logprobs) : nlohmann::json();
}

void from_json(const nlohmann::json& j, GenerationSample& sample) {
  sample.text = j.at("text").get<std::string>();
  sample.provider_id = j.value("provider_id", std::string{});
  sample.variant_index = j.value("variant_index", std::size_t{0});
  if (j.contains("token_logprobs") && !j["token_logprobs"].is_null()) {
    sample.token_logprobs = j["token_logprobs"].get<std::vector<double>>();
  } else {
    sample.token_logprobs.reset();
  }
}

void to_json(nlohmann::json& j, const ProviderProfile& p) {
  j = nlohmann::json{{"name", p.name},
                     {"t_min", p.t_min},
                     {"t_max", p.t_max},
                     {"supports_system_message", p.supports_system_message},
                     {"supports_logprobs", p.supports_logprobs},
                     {"chat", p.chat}};
}

void from_json(const nlohmann::json& j, ProviderProfile& p) {
  p.name = j.value("name", std::string{"default"});
  p.t_min = j.value("t_min", 0.0);
  p.t_max = j.value("t_max", 2.0);
  p.supports_system_message = j.value("supports_system_message", true);
  p.supports_logprobs = j.value("supports_logprobs", false);
  p.chat = j.value("chat", p.supports_system_message);
  p.validate();
}

}  // namespace spuq
