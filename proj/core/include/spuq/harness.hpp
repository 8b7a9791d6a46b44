#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "spuq/aggregation.hpp"
#include "spuq/dataset.hpp"
#include "spuq/engine.hpp"
#include "spuq/evaluation.hpp"

namespace spuq {

enum class Method { spuq, sampling, likelihood, verbalized };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct HarnessOptions {
  Method method = Method::spuq;
  SpuqConfig spuq{};
  /// Baseline sampling settings.
  int sampling_k = 5;
  SimilarityMetric sampling_metric{};
  VerbalStyle verbal_style = VerbalStyle::words;
  /// T0 and the default system message (records may override the latter).
  double base_temperature = 0.7;
  std::optional<std::string> system_message;
  int max_tokens = 256;
  std::size_t num_buckets = 10;
  EceWeighting weighting = EceWeighting::unweighted;
  std::size_t max_parallel = 1;
};

nlohmann::json to_json(const HarnessOptions& options);

struct ExampleResult {
  std::string id;
  std::string answer;
  double confidence = 0.0;
  double accuracy = 0.0;
  bool parse_failed = false;
  nlohmann::json trace;
};

struct EvaluationRun {
  std::string config_hash;
  std::vector<ExampleResult> results;
  CalibrationReport report;
  std::vector<std::string> warnings;

  std::vector<EvalOutcome> outcomes() const;
};

ModelInput make_input(const ExampleRecord& record, const HarnessOptions& options);

struct PromptScore {
  std::string answer;
  double confidence = 0.0;
  bool parse_failed = false;
  std::vector<std::string> warnings;
  nlohmann::json detail;
};

/// One input under options.method; `seed` replaces options.spuq.seed.
PromptScore score_prompt(const ModelInput& input, const HarnessOptions& options, std::uint64_t seed,
                         Provider& model, Provider* paraphraser = nullptr);

/// Throws CapabilityError when `model` or `paraphraser` cannot serve options.method.
void check_capabilities(const HarnessOptions& options, const Provider& model, const Provider* paraphraser);

/// Scores every record with the configured method. Each record's SPUQ seed is
/// derived from (options.spuq.seed, record id), so results do not depend on
/// record order.
EvaluationRun evaluate_dataset(std::span<const ExampleRecord> records, const HarnessOptions& options,
                               Provider& model, Provider* paraphraser = nullptr);

struct RepeatedRuns {
  std::vector<EvaluationRun> runs;
  double ece_mean = 0.0;
  double ece_stddev = 0.0;
};

/// `repeats` runs with seeds derived from options.spuq.seed.
RepeatedRuns evaluate_repeated(std::span<const ExampleRecord> records, const HarnessOptions& options,
                               int repeats, Provider& model, Provider* paraphraser = nullptr);

/// report.json, buckets.csv, confidences.csv and traces.jsonl, each written
/// to a temporary name and renamed once complete.
void write_run_artifacts(const EvaluationRun& run, const std::filesystem::path& out_dir,
                         const nlohmann::json& extra_report_fields = nlohmann::json::object());

}  // namespace spuq
