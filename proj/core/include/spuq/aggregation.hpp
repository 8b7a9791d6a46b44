#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "spuq/gateway.hpp"
#include "spuq/similarity.hpp"
#include "spuq/types.hpp"

namespace spuq {

enum class AggregationMode { inter_sample, intra_sample };
enum class IntraSource { likelihood, verbalized_words, verbalized_numbers };
enum class VerbalStyle { words, numbers };

std::string_view to_string(AggregationMode mode);
std::string_view to_string(IntraSource source);
AggregationMode parse_aggregation_mode(std::string_view name);
IntraSource parse_intra_source(std::string_view name);

struct AggregationConfig {
  AggregationMode mode = AggregationMode::inter_sample;
  SimilarityMetric metric{};
  IntraSource intra_source = IntraSource::likelihood;
  /// Prompt-weight metric; defaults to `metric`, or rouge_l when `metric`
  /// is exact_match (exact match would zero every paraphrase weight).
  std::optional<SimilarityMetric> weight_metric;
  /// w_i = 1 for every variant.
  bool uniform_weights = false;

  SimilarityMetric effective_weight_metric() const;
};

struct ScoredSample {
  GenerationSample sample;
  double prompt_weight = 1.0;
  std::optional<double> intra_confidence;
};

/// sum_{i != j} s_i w_i / sum_{i != j} w_i where s_i = s(y_j, y_i).
/// Entries at `anchor` are ignored. Throws DegenerateWeightsError when the
/// weights outside the anchor sum to zero.
double weighted_agreement(std::span<const double> similarity_to_anchor,
                          std::span<const double> weights, std::size_t anchor = 0);

double inter_sample_confidence(std::span<const ScoredSample> samples, const SimilarityMetric& metric,
                               std::size_t anchor = 0);

/// Mean of c(x_i, y_i) over all samples.
double intra_sample_confidence(std::span<const ScoredSample> samples);

/// exp(mean token logprob).
double likelihood_confidence(const GenerationSample& sample);

/// Index of the most frequent answer under `metric` == 1; lowest index on ties.
std::size_t modal_anchor(std::span<const ScoredSample> samples, const SimilarityMetric& metric);

std::string verbalized_prompt(VerbalStyle style, bool chat);
/// low/medium/high -> 0.25/0.5/0.75; numbers: first literal in [0, 1].
std::optional<double> parse_verbalized(std::string_view reply, VerbalStyle style);
/// Follow-up request asking for the confidence of `output` given `sample_input`.
ModelInput verbalized_followup(const ModelInput& sample_input, std::string_view output,
                               VerbalStyle style, const ProviderProfile& profile);

struct VerbalizedConfidence {
  double value = 0.5;
  bool parse_failed = false;
  std::string raw;
  int calls = 0;
};

/// Retries once on an unparseable reply, then falls back to 0.5 with
/// parse_failed set.
VerbalizedConfidence verbalized_confidence(const ModelInput& sample_input,
                                           std::string_view sample_output, VerbalStyle style,
                                           Provider& provider, std::uint64_t ordinal);

}  // namespace spuq
