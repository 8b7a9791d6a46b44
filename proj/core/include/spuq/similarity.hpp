#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spuq/gateway.hpp"

namespace spuq {

/// Tokenizer settings for output/prompt similarity. Punctuation characters
/// become standalone tokens unless strip_punctuation is set.
struct Normalization {
  bool lowercase = true;
  bool strip_punctuation = false;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

enum class MetricKind { exact_match, rouge_l, embedding_cosine };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view name);

struct SimilarityMetric {
  MetricKind kind = MetricKind::rouge_l;
  Normalization normalization{};
  /// Required for embedding_cosine.
  std::shared_ptr<Embedder> embedder;
};

std::vector<std::string> tokenize(std::string_view text, const Normalization& norm = {});

/// Longest common subsequence length; O(|a||b|) time, O(min(|a|,|b|)) memory.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS F-measure (beta = 1) with P = LCS/|a| and R = LCS/|b|.
double rouge_l(std::span<const std::string> a, std::span<const std::string> b);

/// s(a, b) in [0, 1]. Texts that normalize to nothing score 0 against any
/// non-empty text and 1 against each other.
double similarity(std::string_view a, std::string_view b, const SimilarityMetric& metric);

}  // namespace spuq
