#include "spuq/http_provider.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "spuq/errors.hpp"

namespace spuq {

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  if (path_start != std::string::npos) out.path_prefix = url.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

std::string api_key(const HttpEndpoint& endpoint) {
  for (const std::string& name : {endpoint.api_key_env, std::string("SPUQ_API_KEY")}) {
    if (name.empty()) continue;
    if (const char* v = std::getenv(name.c_str()); v != nullptr && *v != '\0') return v;
  }
  return {};
}

void default_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

/// POSTs `body` to prefix + `path` with retries on transport errors and 429.
nlohmann::json post_json(const HttpEndpoint& endpoint, const RetryPolicy& retry, const std::string& path,
                         const nlohmann::json& body) {
  const ParsedUrl url = parse_base_url(endpoint.base_url);
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(endpoint.timeout);
  client.set_read_timeout(endpoint.timeout);
  httplib::Headers headers;
  if (const auto key = api_key(endpoint); !key.empty()) headers.emplace("Authorization", "Bearer " + key);

  const auto& sleep = retry.sleep ? retry.sleep : default_sleep;
  const std::string payload = body.dump();
  const int attempts = std::max(1, retry.attempts);
  std::string last_error;
  auto backoff = retry.initial_backoff;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(url.path_prefix + path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 429) {
      last_error = "rate limited (HTTP 429)";
    } else if (res->status >= 400) {
      const std::string& text = res->body;
      if (res->status == 400 && text.find("logprobs") != std::string::npos)
        throw CapabilityError("logprobs", "endpoint rejected the logprobs request: " + text);
      if (res->status == 400 && text.find("temperature") != std::string::npos)
        throw CapabilityError("temperature", "endpoint rejected the temperature: " + text);
      throw ProviderError("HTTP " + std::to_string(res->status) + " from " + endpoint.base_url + path + ": " +
                          text);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("malformed JSON response: ") + e.what());
      }
    }
    if (attempt < attempts) {
      spdlog::warn("{} {}; retrying in {} ms", endpoint.base_url + path, last_error, backoff.count());
      sleep(backoff);
      backoff *= 2;
    }
  }
  throw RetriableError(endpoint.base_url + path + ": " + last_error + " after " + std::to_string(attempts) +
                       " attempts");
}

}  // namespace

std::string flatten_prompt(const ModelInput& input) {
  std::string out;
  if (input.system_message && !input.system_message->empty()) out += *input.system_message + "\n\n";
  for (const auto& turn : input.history) out += turn.content + "\n";
  out += input.user_prompt;
  return out;
}

nlohmann::json build_generation_request(const ModelInput& input, const ProviderProfile& profile,
                                        const std::string& model) {
  nlohmann::json body{{"temperature", input.temperature}, {"max_tokens", input.max_tokens}, {"n", 1}};
  if (!model.empty()) body["model"] = model;
  if (profile.chat) {
    auto messages = nlohmann::json::array();
    if (input.system_message) messages.push_back({{"role", "system"}, {"content", *input.system_message}});
    for (const auto& turn : input.history) messages.push_back(turn);
    messages.push_back({{"role", "user"}, {"content", input.user_prompt}});
    body["messages"] = std::move(messages);
    if (input.request_logprobs) body["logprobs"] = true;
  } else {
    body["prompt"] = flatten_prompt(input);
    if (input.request_logprobs) body["logprobs"] = 1;
  }
  return body;
}

GenerationSample parse_generation_response(const nlohmann::json& body, const ProviderProfile& profile) {
  GenerationSample sample;
  try {
    const auto& choice = body.at("choices").at(0);
    std::vector<double> lps;
    if (profile.chat) {
      const auto& content = choice.at("message").at("content");
      sample.text = content.is_null() ? std::string{} : content.get<std::string>();
      if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
          choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
        for (const auto& tok : choice["logprobs"]["content"]) lps.push_back(tok.at("logprob").get<double>());
      }
    } else {
      sample.text = choice.at("text").get<std::string>();
      if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
          choice["logprobs"].contains("token_logprobs")) {
        for (const auto& lp : choice["logprobs"]["token_logprobs"]) {
          if (!lp.is_null()) lps.push_back(lp.get<double>());
        }
      }
    }
    if (!lps.empty()) {
      for (double& lp : lps) lp = std::min(lp, 0.0);
      sample.token_logprobs = std::move(lps);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("unexpected completion response shape: ") + e.what());
  }
  return sample;
}

OpenAiCompatibleProvider::OpenAiCompatibleProvider(ProviderProfile profile, HttpEndpoint endpoint, RetryPolicy retry)
    : profile_(std::move(profile)), endpoint_(std::move(endpoint)), retry_(std::move(retry)) {
  profile_.validate();
  parse_base_url(endpoint_.base_url);
}

std::string OpenAiCompatibleProvider::id() const {
  return endpoint_.model.empty() ? profile_.name : profile_.name + "@" + endpoint_.model;
}

GenerationSample OpenAiCompatibleProvider::do_generate(const ModelInput& input, std::uint64_t /*ordinal*/) {
  const auto body = build_generation_request(input, profile_, endpoint_.model);
  const auto response = post_json(endpoint_, retry_, profile_.chat ? "/chat/completions" : "/completions", body);
  GenerationSample sample = parse_generation_response(response, profile_);
  sample.provider_id = id();
  if (input.request_logprobs && !sample.token_logprobs) {
    throw CapabilityError("logprobs", "endpoint returned no token log-probabilities");
  }
  return sample;
}

OpenAiCompatibleEmbedder::OpenAiCompatibleEmbedder(HttpEndpoint endpoint, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), retry_(std::move(retry)) {
  parse_base_url(endpoint_.base_url);
}

std::vector<double> OpenAiCompatibleEmbedder::embed(std::string_view text) {
  nlohmann::json body{{"input", std::string(text)}};
  if (!endpoint_.model.empty()) body["model"] = endpoint_.model;
  const auto response = post_json(endpoint_, retry_, "/embeddings", body);
  try {
    return response.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("unexpected embeddings response shape: ") + e.what());
  }
}

}  // namespace spuq
