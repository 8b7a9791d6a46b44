#include "spuq/mock_provider.hpp"

#include <cmath>
#include <numeric>

#include "spuq/errors.hpp"
#include "spuq/hashing.hpp"

namespace spuq {

void to_json(nlohmann::json& j, const MockScript& script) {
  j = nlohmann::json{{"seed", script.seed}, {"rules", nlohmann::json::array()}};
  for (const auto& rule : script.rules) {
    nlohmann::json r;
    if (rule.prompt) r["prompt"] = *rule.prompt;
    if (rule.pattern) r["pattern"] = *rule.pattern;
    if (rule.system) r["system"] = *rule.system;
    if (std::isfinite(rule.t_lo) || std::isfinite(rule.t_hi)) {
      r["temperature"] = {std::isfinite(rule.t_lo) ? nlohmann::json(rule.t_lo) : nlohmann::json(),
                          std::isfinite(rule.t_hi) ? nlohmann::json(rule.t_hi) : nlohmann::json()};
    }
    auto& outs = r["outputs"] = nlohmann::json::array();
    for (const auto& o : rule.outcomes) {
      nlohmann::json oj{{"text", o.text}, {"p", o.weight}};
      if (o.logprobs) oj["logprobs"] = *o.logprobs;
      outs.push_back(std::move(oj));
    }
    j["rules"].push_back(std::move(r));
  }
}

void from_json(const nlohmann::json& j, MockScript& script) {
  script.seed = j.value("seed", std::uint64_t{0});
  script.rules.clear();
  for (const auto& r : j.at("rules")) {
    MockRule rule;
    if (r.contains("prompt")) rule.prompt = r["prompt"].get<std::string>();
    if (r.contains("pattern")) rule.pattern = r["pattern"].get<std::string>();
    if (rule.prompt.has_value() == rule.pattern.has_value())
      throw ConfigError("mock rule needs exactly one of 'prompt' or 'pattern'");
    if (r.contains("system")) rule.system = r["system"].get<std::string>();
    if (r.contains("temperature")) {
      const auto& band = r["temperature"];
      if (!band.is_array() || band.size() != 2) throw ConfigError("mock rule 'temperature' must be [lo, hi]");
      if (!band[0].is_null()) rule.t_lo = band[0].get<double>();
      if (!band[1].is_null()) rule.t_hi = band[1].get<double>();
    }
    if (r.contains("output")) {
      rule.outcomes.push_back({r["output"].get<std::string>(), 1.0, std::nullopt});
    } else {
      const auto& outs = r.at("outputs");
      if (outs.is_object()) {
        for (const auto& [text, p] : outs.items()) rule.outcomes.push_back({text, p.get<double>(), std::nullopt});
      } else {
        for (const auto& o : outs) {
          MockOutcome outcome{o.at("text").get<std::string>(), o.value("p", 1.0), std::nullopt};
          if (o.contains("logprobs")) outcome.logprobs = o["logprobs"].get<std::vector<double>>();
          rule.outcomes.push_back(std::move(outcome));
        }
      }
    }
    script.rules.push_back(std::move(rule));
  }
}

MockProvider::MockProvider(ProviderProfile profile, MockScript script)
    : profile_(std::move(profile)), script_(std::move(script)) {
  profile_.validate();
  for (std::size_t i = 0; i < script_.rules.size(); ++i) {
    const auto& rule = script_.rules[i];
    if (rule.outcomes.empty()) throw ConfigError("mock rule " + std::to_string(i) + " has no outputs");
    double total = 0.0;
    for (const auto& o : rule.outcomes) {
      if (!(o.weight >= 0.0)) throw ConfigError("mock rule " + std::to_string(i) + " has a negative weight");
      total += o.weight;
    }
    if (!(total > 0.0)) throw ConfigError("mock rule " + std::to_string(i) + " has zero total weight");
    if (rule.prompt) {
      exact_[*rule.prompt].push_back(i);
    } else if (rule.pattern) {
      patterns_.emplace_back(i, std::regex(*rule.pattern, std::regex::ECMAScript));
    } else {
      throw ConfigError("mock rule " + std::to_string(i) + " has no matcher");
    }
  }
}

const MockRule* MockProvider::match(const ModelInput& input) const {
  const std::string system = input.system_message.value_or("");
  auto accepts = [&](const MockRule& rule) {
    if (input.temperature < rule.t_lo || input.temperature > rule.t_hi) return false;
    return !rule.system || *rule.system == system;
  };
  if (auto it = exact_.find(input.user_prompt); it != exact_.end()) {
    for (std::size_t idx : it->second) {
      if (accepts(script_.rules[idx])) return &script_.rules[idx];
    }
  }
  for (const auto& [idx, re] : patterns_) {
    if (accepts(script_.rules[idx]) && std::regex_search(input.user_prompt, re)) return &script_.rules[idx];
  }
  return nullptr;
}

GenerationSample MockProvider::do_generate(const ModelInput& input, std::uint64_t ordinal) {
  const MockRule* rule = match(input);
  if (rule == nullptr) {
    throw ProviderError("mock provider '" + profile_.name + "': no rule matches prompt \"" + input.user_prompt +
                        "\" at T=" + std::to_string(input.temperature));
  }
  const double total = std::accumulate(rule->outcomes.begin(), rule->outcomes.end(), 0.0,
                                       [](double acc, const MockOutcome& o) { return acc + o.weight; });
  const nlohmann::json key = input;
  const std::uint64_t draw_seed = mix_seed(script_.seed ^ hash64(key.dump()), ordinal);
  const double u = unit_interval(draw_seed) * total;

  const MockOutcome* chosen = &rule->outcomes.back();
  double cumulative = 0.0;
  for (const auto& o : rule->outcomes) {
    cumulative += o.weight;
    if (u < cumulative) {
      chosen = &o;
      break;
    }
  }

  GenerationSample sample;
  sample.text = chosen->text;
  sample.provider_id = profile_.name;
  if (input.request_logprobs) {
    if (chosen->logprobs) {
      sample.token_logprobs = *chosen->logprobs;
    } else {
      sample.token_logprobs = std::vector<double>{std::min(0.0, std::log(chosen->weight / total))};
    }
  }
  return sample;
}

MockEmbedder::MockEmbedder(std::size_t dimension, std::vector<std::string> vocabulary) : dimension_(dimension) {
  if (dimension_ == 0) throw ConfigError("mock embedder dimension must be positive");
  if (vocabulary.size() > dimension_) throw ConfigError("mock embedder vocabulary exceeds dimension");
  for (auto& word : vocabulary) index_.emplace(std::move(word), index_.size());
}

std::vector<double> MockEmbedder::embed(std::string_view text) {
  std::size_t idx = 0;
  {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = index_.try_emplace(std::string(text), index_.size());
    if (inserted && it->second >= dimension_) {
      index_.erase(it);
      throw ProviderError("mock embedder: more than " + std::to_string(dimension_) + " distinct strings");
    }
    idx = it->second;
  }
  std::vector<double> v(dimension_, 0.0);
  v[idx] = 1.0;
  return v;
}

}  // namespace spuq
