#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spuq/aggregation.hpp"
#include "spuq/gateway.hpp"
#include "spuq/perturbation.hpp"

namespace spuq {

enum class FailurePolicy { fail_run, drop_and_renormalize };

struct SpuqConfig {
  PerturbationConfig perturbation{};
  AggregationConfig aggregation{};
  std::uint64_t seed = 0;
  FailurePolicy on_sample_failure = FailurePolicy::fail_run;

  void validate() const;
};

struct SampleDiagnostics {
  std::optional<double> similarity_to_anchor;
  std::optional<double> intra_confidence;
  bool parse_failed = false;
  bool dropped = false;
  std::string error;
};

struct VariantRecord {
  PerturbedVariant variant;
  std::optional<GenerationSample> sample;  // empty when dropped
  SampleDiagnostics diagnostics;
};

struct SpuqResult {
  double confidence = 0.0;
  std::string original_output;
  GenerationSample original_sample;
  ModelInput original_input;
  SampleDiagnostics original_diagnostics;
  std::vector<VariantRecord> variants;
  std::vector<std::string> warnings;

  bool any_parse_failed() const;
};

nlohmann::json to_json(const SpuqResult& result);

struct EngineOptions {
  /// Needed for prompt_mode = paraphrasing.
  Provider* paraphraser = nullptr;
  /// Upper bound on concurrent generation calls per run.
  std::size_t max_parallel = 1;
};

/// Perturb -> sample k+1 outputs -> aggregate. y0 is drawn at (T0, x0) with
/// ordinal 0 and variant i with ordinal i; aggregation inputs are kept in
/// index order regardless of completion order.
SpuqResult run_spuq(const ModelInput& original, const SpuqConfig& config, Provider& provider,
                    const EngineOptions& options = {});

/// Sampling without perturbation: k+1 draws at (T0, x0), uniform weights,
/// anchor j = 0, compared with `metric`.
SpuqResult run_baseline_sampling(const ModelInput& original, int k, const SimilarityMetric& metric,
                                 Provider& provider, const EngineOptions& options = {});

}  // namespace spuq
