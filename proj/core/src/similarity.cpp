#include "spuq/similarity.hpp"

#include <algorithm>
#include <cctype>

#include <spdlog/spdlog.h>

#include "spuq/errors.hpp"

namespace spuq {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::exact_match: return "exact_match";
    case MetricKind::rouge_l: return "rouge_l";
    case MetricKind::embedding_cosine: return "embedding_cosine";
  }
  return "?";
}

MetricKind parse_metric_kind(std::string_view name) {
  if (name == "exact_match" || name == "exact") return MetricKind::exact_match;
  if (name == "rouge_l" || name == "rougel" || name == "rouge") return MetricKind::rouge_l;
  if (name == "embedding_cosine" || name == "embedding" || name == "cosine") return MetricKind::embedding_cosine;
  throw ConfigError("unknown similarity metric '" + std::string(name) + "'");
}

std::vector<std::string> tokenize(std::string_view text, const Normalization& norm) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      if (!norm.strip_punctuation) tokens.emplace_back(1, ch);
    } else {
      current.push_back(norm.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return 0;
  // Row over the shorter sequence.
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = (x == b[j - 1]) ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

double rouge_l(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(a, b));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(a.size());
  const double recall = lcs / static_cast<double>(b.size());
  return 2.0 * precision * recall / (precision + recall);
}

double similarity(std::string_view a, std::string_view b, const SimilarityMetric& metric) {
  const auto ta = tokenize(a, metric.normalization);
  const auto tb = tokenize(b, metric.normalization);
  if (ta.empty() || tb.empty()) {
    spdlog::debug("similarity: text empty after normalization");
    return (ta.empty() && tb.empty()) ? 1.0 : 0.0;
  }
  switch (metric.kind) {
    case MetricKind::exact_match:
      return ta == tb ? 1.0 : 0.0;
    case MetricKind::rouge_l:
      return rouge_l(ta, tb);
    case MetricKind::embedding_cosine: {
      if (!metric.embedder) throw CapabilityError("embedding", "embedding_cosine needs an embedding endpoint");
      const auto ea = metric.embedder->embed(a);
      const auto eb = metric.embedder->embed(b);
      return std::clamp(cosine_similarity(ea, eb), 0.0, 1.0);
    }
  }
  return 0.0;
}

}  // namespace spuq
