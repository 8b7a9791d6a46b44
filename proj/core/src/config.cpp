#include "spuq/config.hpp"

#include <fstream>
#include <set>

#include "spuq/cache.hpp"
#include "spuq/errors.hpp"
#include "spuq/hashing.hpp"

namespace spuq {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string_view to_string(ShortfallPolicy p) { return p == ShortfallPolicy::fill ? "fill" : "fail"; }

ShortfallPolicy parse_shortfall(std::string_view s) {
  if (s == "fill") return ShortfallPolicy::fill;
  if (s == "fail") return ShortfallPolicy::fail;
  throw ConfigError("unknown shortfall policy '" + std::string(s) + "' (expected fill, fail)");
}

std::string_view to_string(FailurePolicy p) {
  return p == FailurePolicy::fail_run ? "fail_run" : "drop_and_renormalize";
}

FailurePolicy parse_failure_policy(std::string_view s) {
  if (s == "fail_run") return FailurePolicy::fail_run;
  if (s == "drop_and_renormalize") return FailurePolicy::drop_and_renormalize;
  throw ConfigError("unknown sample failure policy '" + std::string(s) + "' (expected fail_run, drop_and_renormalize)");
}

VerbalStyle parse_verbal_style(std::string_view s) {
  if (s == "words") return VerbalStyle::words;
  if (s == "numbers") return VerbalStyle::numbers;
  throw ConfigError("unknown verbal style '" + std::string(s) + "' (expected words, numbers)");
}

HttpEndpoint endpoint_from_json(const json& j) {
  reject_unknown_keys(j, "endpoint", {"base_url", "model", "api_key_env", "timeout_s"});
  HttpEndpoint e;
  e.base_url = get_or<std::string>(j, "base_url", "");
  e.model = get_or<std::string>(j, "model", "");
  e.api_key_env = get_or<std::string>(j, "api_key_env", e.api_key_env);
  e.timeout = std::chrono::seconds(get_or<long>(j, "timeout_s", static_cast<long>(e.timeout.count())));
  if (e.base_url.empty()) throw ConfigError("endpoint.base_url is required");
  return e;
}

ProviderConfig provider_from_json(const std::string& name, const json& j) {
  reject_unknown_keys(j, "provider '" + name + "'", {"kind", "profile", "endpoint", "mock", "cache"});
  ProviderConfig pc;
  pc.kind = get_or<std::string>(j, "kind", "mock");
  try {
    if (j.contains("profile")) pc.profile = j.at("profile").get<ProviderProfile>();
  } catch (const json::exception& e) {
    throw ConfigError("provider '" + name + "' profile: " + e.what());
  }
  if (!j.contains("profile") || !j.at("profile").contains("name")) pc.profile.name = name;
  pc.profile.validate();
  if (pc.kind == "mock") {
    if (!j.contains("mock")) throw ConfigError("mock provider '" + name + "' needs a 'mock' script");
    try {
      pc.mock = j.at("mock").get<MockScript>();
    } catch (const json::exception& e) {
      throw ConfigError("provider '" + name + "' mock script: " + e.what());
    }
  } else if (pc.kind == "openai") {
    if (!j.contains("endpoint")) throw ConfigError("openai provider '" + name + "' needs an 'endpoint'");
    pc.endpoint = endpoint_from_json(j.at("endpoint"));
  } else {
    throw ConfigError("provider '" + name + "' has unknown kind '" + pc.kind + "' (expected mock, openai)");
  }
  if (j.contains("cache")) pc.cache = get_or<bool>(j, "cache", false);
  return pc;
}

/// Owns the inner provider of a CachingProvider.
class OwningCachedProvider final : public Provider {
 public:
  OwningCachedProvider(std::unique_ptr<Provider> inner, std::shared_ptr<ResponseCache> cache)
      : inner_(std::move(inner)), caching_(*inner_, std::move(cache)) {}

  const ProviderProfile& profile() const override { return inner_->profile(); }
  std::string id() const override { return inner_->id(); }

 protected:
  GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) override {
    return caching_.generate(input, ordinal);
  }

 private:
  std::unique_ptr<Provider> inner_;
  CachingProvider caching_;
};

void attach(SimilarityMetric& m, const std::shared_ptr<Embedder>& e) {
  if (m.kind == MetricKind::embedding_cosine) m.embedder = e;
}

}  // namespace

json to_json(const SimilarityMetric& m) {
  return {{"kind", to_string(m.kind)},
          {"lowercase", m.normalization.lowercase},
          {"strip_punctuation", m.normalization.strip_punctuation}};
}

SimilarityMetric metric_from_json(const json& j, std::shared_ptr<Embedder> embedder) {
  SimilarityMetric m;
  if (j.is_string()) {
    m.kind = parse_metric_kind(j.get<std::string>());
  } else {
    reject_unknown_keys(j, "metric", {"kind", "lowercase", "strip_punctuation"});
    m.kind = parse_metric_kind(get_or<std::string>(j, "kind", "rouge_l"));
    m.normalization.lowercase = get_or<bool>(j, "lowercase", true);
    m.normalization.strip_punctuation = get_or<bool>(j, "strip_punctuation", false);
  }
  attach(m, embedder);
  return m;
}

json to_json(const PerturbationConfig& c) {
  json tokens = json::array();
  for (const auto& t : c.dummy_tokens)
    tokens.push_back({{"text", t.text}, {"append_only", t.append_only}, {"questions_only", t.questions_only}});
  return {{"k", c.k},
          {"temperature", to_string(c.temperature)},
          {"prompt", to_string(c.prompt)},
          {"dummy_tokens", tokens},
          {"system_messages", c.system_messages},
          {"paraphraser_temperature", c.paraphraser_temperature},
          {"shortfall", to_string(c.shortfall)}};
}

PerturbationConfig perturbation_from_json(const json& j) {
  reject_unknown_keys(j, "perturbation",
                      {"k", "temperature", "prompt", "dummy_tokens", "system_messages", "paraphraser_temperature",
                       "shortfall"});
  PerturbationConfig c;
  c.k = get_or<int>(j, "k", c.k);
  if (j.contains("temperature")) c.temperature = parse_temperature_perturbation(j.at("temperature").get<std::string>());
  if (j.contains("prompt")) c.prompt = parse_prompt_mode(j.at("prompt").get<std::string>());
  if (j.contains("dummy_tokens")) {
    c.dummy_tokens.clear();
    for (const auto& t : j.at("dummy_tokens")) {
      if (t.is_string()) {
        c.dummy_tokens.push_back({t.get<std::string>(), false, false});
      } else {
        c.dummy_tokens.push_back({t.at("text").get<std::string>(), get_or<bool>(t, "append_only", false),
                                  get_or<bool>(t, "questions_only", false)});
      }
    }
  }
  if (j.contains("system_messages")) c.system_messages = j.at("system_messages").get<std::vector<std::string>>();
  c.paraphraser_temperature = get_or<double>(j, "paraphraser_temperature", c.paraphraser_temperature);
  if (j.contains("shortfall")) c.shortfall = parse_shortfall(j.at("shortfall").get<std::string>());
  return c;
}

json to_json(const AggregationConfig& c) {
  json j{{"mode", to_string(c.mode)},
         {"metric", to_json(c.metric)},
         {"intra_source", to_string(c.intra_source)},
         {"uniform_weights", c.uniform_weights}};
  j["weight_metric"] = c.weight_metric ? to_json(*c.weight_metric) : json();
  return j;
}

AggregationConfig aggregation_from_json(const json& j, std::shared_ptr<Embedder> embedder) {
  reject_unknown_keys(j, "aggregation", {"mode", "metric", "intra_source", "weight_metric", "uniform_weights"});
  AggregationConfig c;
  if (j.contains("mode")) c.mode = parse_aggregation_mode(j.at("mode").get<std::string>());
  if (j.contains("metric")) c.metric = metric_from_json(j.at("metric"), embedder);
  if (j.contains("intra_source")) c.intra_source = parse_intra_source(j.at("intra_source").get<std::string>());
  if (j.contains("weight_metric") && !j.at("weight_metric").is_null())
    c.weight_metric = metric_from_json(j.at("weight_metric"), embedder);
  c.uniform_weights = get_or<bool>(j, "uniform_weights", false);
  return c;
}

json to_json(const SpuqConfig& c) {
  return {{"perturbation", to_json(c.perturbation)},
          {"aggregation", to_json(c.aggregation)},
          {"seed", c.seed},
          {"on_sample_failure", to_string(c.on_sample_failure)}};
}

SpuqConfig spuq_config_from_json(const json& j, std::shared_ptr<Embedder> embedder) {
  reject_unknown_keys(j, "spuq", {"perturbation", "aggregation", "seed", "on_sample_failure"});
  SpuqConfig c;
  if (j.contains("perturbation")) c.perturbation = perturbation_from_json(j.at("perturbation"));
  if (j.contains("aggregation")) c.aggregation = aggregation_from_json(j.at("aggregation"), embedder);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (j.contains("on_sample_failure"))
    c.on_sample_failure = parse_failure_policy(j.at("on_sample_failure").get<std::string>());
  return c;
}

HarnessOptions harness_options_from_json(const json& j, std::shared_ptr<Embedder> embedder) {
  reject_unknown_keys(j, "run",
                      {"method", "spuq", "sampling_k", "sampling_metric", "verbal_style", "base_temperature",
                       "system_message", "max_tokens", "num_buckets", "weighting", "max_parallel"});
  HarnessOptions o;
  if (j.contains("method")) o.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("spuq")) o.spuq = spuq_config_from_json(j.at("spuq"), embedder);
  o.sampling_k = get_or<int>(j, "sampling_k", o.sampling_k);
  if (j.contains("sampling_metric")) o.sampling_metric = metric_from_json(j.at("sampling_metric"), embedder);
  if (j.contains("verbal_style")) o.verbal_style = parse_verbal_style(j.at("verbal_style").get<std::string>());
  o.base_temperature = get_or<double>(j, "base_temperature", o.base_temperature);
  if (j.contains("system_message") && !j.at("system_message").is_null())
    o.system_message = j.at("system_message").get<std::string>();
  o.max_tokens = get_or<int>(j, "max_tokens", o.max_tokens);
  o.num_buckets = get_or<std::size_t>(j, "num_buckets", o.num_buckets);
  if (j.contains("weighting")) o.weighting = parse_weighting(j.at("weighting").get<std::string>());
  o.max_parallel = get_or<std::size_t>(j, "max_parallel", o.max_parallel);
  if (o.num_buckets < 1) throw ConfigError("num_buckets must be >= 1");
  if (o.sampling_k < 1) throw ConfigError("sampling_k must be >= 1");
  if (o.max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  return o;
}

void attach_embedder(HarnessOptions& o, const std::shared_ptr<Embedder>& embedder) {
  attach(o.spuq.aggregation.metric, embedder);
  if (o.spuq.aggregation.weight_metric) attach(*o.spuq.aggregation.weight_metric, embedder);
  attach(o.sampling_metric, embedder);
}

AggregationChoice parse_aggregation_choice(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos)
    throw ConfigError("aggregation choice '" + std::string(text) + "' must look like inter:<metric> or intra:<source>");
  const auto mode = text.substr(0, colon);
  const auto rest = text.substr(colon + 1);
  AggregationChoice c;
  if (mode == "inter") {
    c.mode = AggregationMode::inter_sample;
    c.metric = parse_metric_kind(rest);
  } else if (mode == "intra") {
    c.mode = AggregationMode::intra_sample;
    c.intra_source = parse_intra_source(rest);
  } else {
    throw ConfigError("aggregation choice '" + std::string(text) + "' must start with inter: or intra:");
  }
  return c;
}

TuningGrid tuning_grid_from_json(const json& j) {
  reject_unknown_keys(j, "tuning.grid", {"temperature", "prompt", "aggregation"});
  TuningGrid g = TuningGrid::full();
  if (j.contains("temperature")) {
    g.temperature.clear();
    for (const auto& t : j.at("temperature")) g.temperature.push_back(parse_temperature_perturbation(t.get<std::string>()));
  }
  if (j.contains("prompt")) {
    g.prompt.clear();
    for (const auto& p : j.at("prompt")) g.prompt.push_back(parse_prompt_mode(p.get<std::string>()));
  }
  if (j.contains("aggregation")) {
    g.aggregation.clear();
    for (const auto& a : j.at("aggregation")) g.aggregation.push_back(parse_aggregation_choice(a.get<std::string>()));
  }
  if (g.size() == 0) throw ConfigError("tuning grid is empty");
  return g;
}

AppConfig parse_app_config(const json& j) {
  reject_unknown_keys(j, "config",
                      {"providers", "default_provider", "paraphraser", "embedding", "cache_dir", "run", "repeats",
                       "tuning"});
  AppConfig c;
  try {
    if (!j.contains("providers") || !j.at("providers").is_object() || j.at("providers").empty())
      throw ConfigError("config needs a non-empty 'providers' object");
    for (const auto& [name, pj] : j.at("providers").items()) c.providers.emplace(name, provider_from_json(name, pj));

    c.default_provider = get_or<std::string>(j, "default_provider", "");
    if (c.default_provider.empty()) {
      if (c.providers.size() != 1) throw ConfigError("'default_provider' is required when several providers exist");
      c.default_provider = c.providers.begin()->first;
    }
    if (!c.providers.count(c.default_provider))
      throw ConfigError("default_provider '" + c.default_provider + "' is not defined");
    if (j.contains("paraphraser") && !j.at("paraphraser").is_null()) {
      c.paraphraser = j.at("paraphraser").get<std::string>();
      if (!c.providers.count(*c.paraphraser)) throw ConfigError("paraphraser '" + *c.paraphraser + "' is not defined");
    }
    if (j.contains("embedding") && !j.at("embedding").is_null()) {
      const auto& ej = j.at("embedding");
      reject_unknown_keys(ej, "embedding", {"kind", "dimension", "endpoint"});
      EmbeddingConfig e;
      e.kind = get_or<std::string>(ej, "kind", "mock");
      e.dimension = get_or<std::size_t>(ej, "dimension", e.dimension);
      if (e.kind == "openai") {
        if (!ej.contains("endpoint")) throw ConfigError("openai embedding needs an 'endpoint'");
        e.endpoint = endpoint_from_json(ej.at("endpoint"));
      } else if (e.kind != "mock") {
        throw ConfigError("embedding has unknown kind '" + e.kind + "' (expected mock, openai)");
      }
      c.embedding = e;
    }
    if (j.contains("cache_dir") && !j.at("cache_dir").is_null())
      c.cache_dir = std::filesystem::path(j.at("cache_dir").get<std::string>());
    if (j.contains("run")) c.run = harness_options_from_json(j.at("run"));
    c.repeats = get_or<int>(j, "repeats", 1);
    if (c.repeats < 1) throw ConfigError("repeats must be >= 1");

    c.tuning.base = c.run;
    if (j.contains("tuning")) {
      const auto& tj = j.at("tuning");
      reject_unknown_keys(tj, "tuning", {"grid", "k", "dev_size", "repeats", "seed"});
      if (tj.contains("grid")) c.tuning.grid = tuning_grid_from_json(tj.at("grid"));
      c.tuning.k = get_or<int>(tj, "k", c.tuning.k);
      c.tuning.dev_size = get_or<std::size_t>(tj, "dev_size", c.tuning.dev_size);
      c.tuning.repeats = get_or<int>(tj, "repeats", c.tuning.repeats);
      c.tuning.seed = get_or<std::uint64_t>(tj, "seed", c.tuning.seed);
      if (c.tuning.k < 1) throw ConfigError("tuning.k must be >= 1");
      if (c.tuning.repeats < 1) throw ConfigError("tuning.repeats must be >= 1");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = parse_app_config(j);
  if (c.cache_dir && c.cache_dir->is_relative()) c.cache_dir = path.parent_path() / *c.cache_dir;
  return c;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config, std::optional<std::filesystem::path> cache_dir) {
  std::unique_ptr<Provider> p;
  if (config.kind == "mock") {
    p = std::make_unique<MockProvider>(config.profile, config.mock);
  } else if (config.kind == "openai") {
    p = std::make_unique<OpenAiCompatibleProvider>(config.profile, config.endpoint);
  } else {
    throw ConfigError("unknown provider kind '" + config.kind + "'");
  }
  if (!cache_dir) cache_dir = ResponseCache::dir_from_env();
  const bool want_cache = config.cache.value_or(config.kind == "openai");
  if (want_cache && cache_dir) {
    p = std::make_unique<OwningCachedProvider>(std::move(p), std::make_shared<ResponseCache>(*cache_dir));
  } else if (config.cache.value_or(false)) {
    throw ConfigError("provider cache requested but no cache_dir or SPUQ_CACHE_DIR is set");
  }
  return p;
}

std::shared_ptr<Embedder> make_embedder(const EmbeddingConfig& config) {
  if (config.kind == "mock") return std::make_shared<MockEmbedder>(config.dimension);
  if (config.kind == "openai") return std::make_shared<OpenAiCompatibleEmbedder>(config.endpoint);
  throw ConfigError("unknown embedding kind '" + config.kind + "'");
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()).substr(0, 16); }

}  // namespace spuq
