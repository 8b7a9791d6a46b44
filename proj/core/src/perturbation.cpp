#include "spuq/perturbation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "spuq/errors.hpp"

namespace spuq {

namespace {

constexpr std::uint64_t kRetryOrdinal = std::uint64_t{1} << 32;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string_view to_string(TemperatureMode mode) {
  switch (mode) {
    case TemperatureMode::none: return "none";
    case TemperatureMode::fixed_offset: return "fixed_offset";
    case TemperatureMode::random_uniform: return "random_uniform";
  }
  return "?";
}

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::none: return "none";
    case PromptMode::paraphrasing: return "paraphrasing";
    case PromptMode::dummy_tokens: return "dummy_tokens";
    case PromptMode::system_messages: return "system_messages";
  }
  return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "none") return PromptMode::none;
  if (name == "paraphrasing" || name == "paraphrase") return PromptMode::paraphrasing;
  if (name == "dummy_tokens" || name == "dummy") return PromptMode::dummy_tokens;
  if (name == "system_messages" || name == "system") return PromptMode::system_messages;
  throw ConfigError("unknown prompt perturbation '" + std::string(name) + "'");
}

TemperaturePerturbation parse_temperature_perturbation(std::string_view text) {
  if (text == "none") return TemperaturePerturbation::none();
  if (text == "random" || text == "random_uniform") return TemperaturePerturbation::random();
  std::string_view digits = text;
  if (!digits.empty() && digits.front() == '+') digits.remove_prefix(1);
  double delta = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), delta);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty())
    throw ConfigError("temperature perturbation must be none, random or an offset like +0.3: '" +
                      std::string(text) + "'");
  return TemperaturePerturbation::fixed(delta);
}

std::string to_string(const TemperaturePerturbation& t) {
  switch (t.mode) {
    case TemperatureMode::none: return "none";
    case TemperatureMode::random_uniform: return "random";
    case TemperatureMode::fixed_offset: {
      std::ostringstream os;
      os << (t.offset >= 0 ? "+" : "") << t.offset;
      return os.str();
    }
  }
  return "?";
}

std::vector<DummyToken> default_dummy_tokens() {
  return {
      {"\n", false, false}, {"\t", false, false}, {"...", false, false},
      {"  ", false, false}, {"?", true, true},    {".", true, false},
  };
}

std::vector<std::string> default_system_messages() {
  return {
      "You are a helpful assistant",
      "",
      "You are a friendly assistant",
      "You are a question-answering assistant",
      "You are a supportive question-answering assistant",
  };
}

void PerturbationConfig::validate() const {
  if (k < 1) throw PreconditionError("k must be >= 1");
  if (temperature.mode == TemperatureMode::none && prompt == PromptMode::none)
    throw PreconditionError("at least one of temperature or prompt perturbation must be active");
  if (!std::isfinite(temperature.offset)) throw PreconditionError("temperature offset must be finite");
  if (prompt == PromptMode::dummy_tokens && dummy_tokens.empty())
    throw ConfigError("dummy-token set is empty");
  if (prompt == PromptMode::system_messages && system_messages.size() < 2)
    throw ConfigError("system-message set needs at least two entries");
}

bool is_question(std::string_view prompt) {
  const auto t = trim(prompt);
  return !t.empty() && t.back() == '?';
}

DummyEdit apply_dummy_token(std::string_view prompt, std::span<const DummyToken> tokens, std::mt19937_64& rng) {
  if (prompt.empty()) throw PreconditionError("prompt must be non-empty");
  const bool question = is_question(prompt);
  std::vector<const DummyToken*> eligible;
  for (const auto& t : tokens) {
    if (!t.questions_only || question) eligible.push_back(&t);
  }
  if (eligible.empty()) throw ConfigError("no dummy token is eligible for this prompt");
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  const DummyToken& token = *eligible[pick(rng)];
  bool prepend = false;
  if (!token.append_only) prepend = std::bernoulli_distribution(0.5)(rng);
  DummyEdit edit;
  edit.token = token.text;
  edit.prepended = prepend;
  edit.text = prepend ? token.text + std::string(prompt) : std::string(prompt) + token.text;
  return edit;
}

DummyEdit apply_dummy_token(std::string_view prompt, std::mt19937_64& rng) {
  static const auto tokens = default_dummy_tokens();
  return apply_dummy_token(prompt, tokens, rng);
}

ModelInput swap_system_message(const ModelInput& input, const ProviderProfile& profile,
                               std::span<const std::string> messages, std::mt19937_64& rng) {
  if (!profile.supports_system_message)
    throw CapabilityError("system_message", "provider '" + profile.name + "' does not accept system messages");
  const std::string current = input.system_message.value_or("");
  std::vector<const std::string*> candidates;
  for (const auto& m : messages) {
    if (m != current) candidates.push_back(&m);
  }
  if (candidates.empty()) throw ConfigError("system-message set has no alternative to the original");
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  ModelInput out = input;
  out.system_message = *candidates[pick(rng)];
  return out;
}

std::string paraphrase_prompt(std::string_view original, int k) {
  std::string p = "\"\"\"" + std::string(original) + "\"\"\"\n";
  p += "Suggest " + std::to_string(k) +
       " ways to paraphrase the text in triple quotes above. If the original text is a question, ensure your "
       "suggestions retain a question. Provide your response in JSON format: {\"paraphrased\": list of str}";
  return p;
}

std::vector<std::string> parse_paraphrases(std::string_view raw) {
  const auto open = raw.find('{');
  const auto close = raw.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    throw ParaphraseError("reply contains no JSON object", std::string(raw));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.substr(open, close - open + 1));
  } catch (const nlohmann::json::exception& e) {
    throw ParaphraseError(std::string("malformed JSON: ") + e.what(), std::string(raw));
  }
  if (!j.is_object() || !j.contains("paraphrased") || !j["paraphrased"].is_array())
    throw ParaphraseError("JSON lacks a \"paraphrased\" list", std::string(raw));
  std::vector<std::string> out;
  for (const auto& item : j["paraphrased"]) {
    if (!item.is_string()) continue;
    const auto text = trim(item.get_ref<const std::string&>());
    if (!text.empty()) out.emplace_back(text);
  }
  return out;
}

std::vector<std::string> paraphrase(std::string_view original, int k, Provider& paraphraser, double temperature) {
  if (k < 1) throw PreconditionError("k must be >= 1");
  if (original.empty()) throw PreconditionError("prompt must be non-empty");
  ModelInput request;
  request.temperature = temperature;
  request.user_prompt = paraphrase_prompt(original, k);
  request.max_tokens = std::max(256, 96 * k);

  std::vector<std::string> best;
  std::string last_raw;
  std::string last_problem;
  for (std::uint64_t ordinal : {std::uint64_t{0}, kRetryOrdinal}) {
    const auto reply = paraphraser.generate(request, ordinal);
    last_raw = reply.text;
    try {
      auto parsed = parse_paraphrases(reply.text);
      if (parsed.size() >= static_cast<std::size_t>(k)) {
        parsed.resize(static_cast<std::size_t>(k));
        return parsed;
      }
      last_problem = "expected " + std::to_string(k) + " paraphrases, got " + std::to_string(parsed.size());
      if (parsed.size() > best.size()) best = std::move(parsed);
    } catch (const ParaphraseError& e) {
      last_problem = e.what();
    }
  }
  throw ParaphraseError(last_problem + " (after one retry)", last_raw, std::move(best));
}

std::vector<PerturbedVariant> perturb(const ModelInput& original, const PerturbationConfig& config,
                                      const ProviderProfile& profile, std::uint64_t seed, Provider* paraphraser,
                                      const SimilarityMetric& weight_metric) {
  original.validate();
  config.validate();
  const auto k = static_cast<std::size_t>(config.k);
  std::mt19937_64 rng(seed);

  std::vector<std::string> paraphrases;
  std::vector<std::size_t> fallback;
  if (config.prompt == PromptMode::paraphrasing) {
    if (paraphraser == nullptr) throw CapabilityError("paraphraser", "paraphrasing needs a paraphraser provider");
    try {
      paraphrases = paraphrase(original.user_prompt, config.k, *paraphraser, config.paraphraser_temperature);
    } catch (const ParaphraseError& e) {
      paraphrases = e.partial();
      for (std::size_t i = paraphrases.size() + 1; i <= k; ++i) fallback.push_back(i);
      if (config.shortfall == ShortfallPolicy::fail) {
        throw DegradedModeError(std::string(e.what()) + "; raw response: " + e.raw_response(), fallback);
      }
      spdlog::warn("{}; {} variant(s) fall back to dummy tokens", e.what(), fallback.size());
    }
  } else if (config.prompt == PromptMode::system_messages && !profile.supports_system_message) {
    throw CapabilityError("system_message", "provider '" + profile.name + "' does not accept system messages");
  }

  std::vector<PerturbedVariant> variants;
  variants.reserve(k);
  for (std::size_t i = 1; i <= k; ++i) {
    PerturbedVariant v;
    v.index = i;
    v.input = original;

    double t = original.temperature;
    switch (config.temperature.mode) {
      case TemperatureMode::none: break;
      case TemperatureMode::fixed_offset: t = original.temperature + config.temperature.offset; break;
      case TemperatureMode::random_uniform:
        t = std::uniform_real_distribution<double>(profile.t_min, profile.t_max)(rng);
        break;
    }
    v.input.temperature = profile.clamp(t);

    switch (config.prompt) {
      case PromptMode::none: break;
      case PromptMode::paraphrasing:
        if (i <= paraphrases.size()) {
          v.input.user_prompt = paraphrases[i - 1];
        } else {
          v.input.user_prompt = apply_dummy_token(original.user_prompt, config.dummy_tokens, rng).text;
          v.fallback = true;
        }
        break;
      case PromptMode::dummy_tokens:
        v.input.user_prompt = apply_dummy_token(original.user_prompt, config.dummy_tokens, rng).text;
        break;
      case PromptMode::system_messages:
        v.input = swap_system_message(v.input, profile, config.system_messages, rng);
        break;
    }

    v.prompt_weight = v.input.user_prompt == original.user_prompt
                          ? 1.0
                          : similarity(original.user_prompt, v.input.user_prompt, weight_metric);
    variants.push_back(std::move(v));
  }
  return variants;
}

}  // namespace spuq
