#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "spuq/engine.hpp"
#include "spuq/harness.hpp"
#include "spuq/http_provider.hpp"
#include "spuq/mock_provider.hpp"
#include "spuq/tuner.hpp"

namespace spuq {

struct ProviderConfig {
  std::string kind = "mock";  // "mock" | "openai"
  ProviderProfile profile{};
  HttpEndpoint endpoint{};
  MockScript mock{};
  /// Wrap in a response cache (live providers default to true when a cache
  /// directory is configured).
  std::optional<bool> cache;
};

struct EmbeddingConfig {
  std::string kind = "mock";
  std::size_t dimension = 1024;
  HttpEndpoint endpoint{};
};

/// Whole config file: providers, run settings and tuning grid.
struct AppConfig {
  std::map<std::string, ProviderConfig> providers;
  std::string default_provider;
  std::optional<std::string> paraphraser;
  std::optional<EmbeddingConfig> embedding;
  std::optional<std::filesystem::path> cache_dir;
  HarnessOptions run{};
  int repeats = 1;
  TuningSpec tuning{};
};

AppConfig parse_app_config(const nlohmann::json& j);
AppConfig load_app_config(const std::filesystem::path& path);

/// Wraps the provider in a ResponseCache under `cache_dir` (or SPUQ_CACHE_DIR)
/// when config.cache is set, or by default for live providers.
std::unique_ptr<Provider> make_provider(const ProviderConfig& config,
                                        std::optional<std::filesystem::path> cache_dir = std::nullopt);
std::shared_ptr<Embedder> make_embedder(const EmbeddingConfig& config);

/// Points every embedding_cosine metric in `options` at `embedder`.
void attach_embedder(HarnessOptions& options, const std::shared_ptr<Embedder>& embedder);

HarnessOptions harness_options_from_json(const nlohmann::json& j, std::shared_ptr<Embedder> embedder = nullptr);
/// Grid entries: temperature "none" | "random" | "+0.3"; prompt mode names;
/// aggregation "inter:<metric>" | "intra:<source>".
TuningGrid tuning_grid_from_json(const nlohmann::json& j);
AggregationChoice parse_aggregation_choice(std::string_view text);

nlohmann::json to_json(const SimilarityMetric& metric);
SimilarityMetric metric_from_json(const nlohmann::json& j, std::shared_ptr<Embedder> embedder);
nlohmann::json to_json(const PerturbationConfig& config);
PerturbationConfig perturbation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AggregationConfig& config);
AggregationConfig aggregation_from_json(const nlohmann::json& j, std::shared_ptr<Embedder> embedder);
nlohmann::json to_json(const SpuqConfig& config);
SpuqConfig spuq_config_from_json(const nlohmann::json& j, std::shared_ptr<Embedder> embedder = nullptr);

/// Hex SHA-256 prefix (16 chars) of the canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

}  // namespace spuq
