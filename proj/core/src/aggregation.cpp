#include "spuq/aggregation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>

#include "spuq/errors.hpp"

namespace spuq {

namespace {

constexpr std::uint64_t kRetryOrdinal = std::uint64_t{1} << 32;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::string_view to_string(AggregationMode mode) {
  return mode == AggregationMode::inter_sample ? "inter_sample" : "intra_sample";
}

std::string_view to_string(IntraSource source) {
  switch (source) {
    case IntraSource::likelihood: return "likelihood";
    case IntraSource::verbalized_words: return "verbalized_words";
    case IntraSource::verbalized_numbers: return "verbalized_numbers";
  }
  return "?";
}

AggregationMode parse_aggregation_mode(std::string_view name) {
  if (name == "inter_sample" || name == "inter") return AggregationMode::inter_sample;
  if (name == "intra_sample" || name == "intra") return AggregationMode::intra_sample;
  throw ConfigError("unknown aggregation mode '" + std::string(name) + "'");
}

IntraSource parse_intra_source(std::string_view name) {
  if (name == "likelihood") return IntraSource::likelihood;
  if (name == "verbalized_words" || name == "words") return IntraSource::verbalized_words;
  if (name == "verbalized_numbers" || name == "numbers") return IntraSource::verbalized_numbers;
  throw ConfigError("unknown intra-sample source '" + std::string(name) + "'");
}

SimilarityMetric AggregationConfig::effective_weight_metric() const {
  if (weight_metric) return *weight_metric;
  if (metric.kind == MetricKind::exact_match) {
    SimilarityMetric m = metric;
    m.kind = MetricKind::rouge_l;
    return m;
  }
  return metric;
}

double weighted_agreement(std::span<const double> similarity_to_anchor, std::span<const double> weights,
                          std::size_t anchor) {
  if (similarity_to_anchor.size() != weights.size())
    throw PreconditionError("similarity and weight lists differ in length");
  if (similarity_to_anchor.size() < 2) throw PreconditionError("inter-sample aggregation needs k >= 1");
  if (anchor >= weights.size()) throw PreconditionError("anchor index out of range");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i == anchor) continue;
    if (!(weights[i] >= 0.0)) throw PreconditionError("prompt weights must be >= 0");
    num += similarity_to_anchor[i] * weights[i];
    den += weights[i];
  }
  if (!(den > 0.0)) throw DegenerateWeightsError("all prompt weights outside the anchor are zero");
  return num / den;
}

double inter_sample_confidence(std::span<const ScoredSample> samples, const SimilarityMetric& metric,
                               std::size_t anchor) {
  if (samples.size() < 2) throw PreconditionError("inter-sample aggregation needs k >= 1");
  if (anchor >= samples.size()) throw PreconditionError("anchor index out of range");
  std::vector<double> sims(samples.size(), 1.0);
  std::vector<double> weights(samples.size(), 1.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    weights[i] = samples[i].prompt_weight;
    if (i != anchor) sims[i] = similarity(samples[anchor].sample.text, samples[i].sample.text, metric);
  }
  return weighted_agreement(sims, weights, anchor);
}

double intra_sample_confidence(std::span<const ScoredSample> samples) {
  if (samples.empty()) throw PreconditionError("intra-sample aggregation needs at least one sample");
  std::vector<std::size_t> missing;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].intra_confidence) {
      missing.push_back(i);
    } else {
      sum += *samples[i].intra_confidence;
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (auto i : missing) list += (list.empty() ? "" : ", ") + std::to_string(i);
    throw IncompleteInputError("samples without intra confidence: " + list, missing);
  }
  return sum / static_cast<double>(samples.size());
}

double likelihood_confidence(const GenerationSample& sample) {
  if (!sample.token_logprobs || sample.token_logprobs->empty())
    throw CapabilityError("logprobs", "sample carries no token log-probabilities");
  const auto& lps = *sample.token_logprobs;
  const double mean = std::accumulate(lps.begin(), lps.end(), 0.0) / static_cast<double>(lps.size());
  return std::exp(mean);
}

std::size_t modal_anchor(std::span<const ScoredSample> samples, const SimilarityMetric& metric) {
  if (samples.empty()) throw PreconditionError("no samples");
  std::size_t best = 0;
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::size_t count = 0;
    for (const auto& other : samples) {
      if (similarity(samples[i].sample.text, other.sample.text, metric) == 1.0) ++count;
    }
    if (count > best_count) {
      best = i;
      best_count = count;
    }
  }
  return best;
}

std::string verbalized_prompt(VerbalStyle style, bool chat) {
  if (style == VerbalStyle::words)
    return chat ? "Your confidence is? (low, medium, high)" : "Confidence (low, medium, high):";
  return chat ? "Your confidence is? (a score between 0.0 to 1.0)" : "Confidence (a score between 0.0 to 1.0):";
}

std::optional<double> parse_verbalized(std::string_view reply, VerbalStyle style) {
  const std::string text = lower(reply);
  if (style == VerbalStyle::words) {
    static const std::regex word(R"(\b(low|medium|high)\b)");
    std::smatch m;
    if (!std::regex_search(text, m, word)) return std::nullopt;
    if (m[1] == "low") return 0.25;
    if (m[1] == "medium") return 0.5;
    return 0.75;
  }
  static const std::regex bare(R"(^\s*([-+]?(\d+(\.\d*)?|\.\d+))\s*$)");
  std::smatch m;
  if (std::regex_match(text, m, bare)) return std::clamp(std::stod(m[1]), 0.0, 1.0);
  static const std::regex literal(R"(([-+]?(\d+(\.\d*)?|\.\d+))(\s*%)?)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), literal); it != std::sregex_iterator(); ++it) {
    double v = std::stod((*it)[1]);
    if ((*it)[4].matched) v /= 100.0;
    if (v >= 0.0 && v <= 1.0) return v;
  }
  return std::nullopt;
}

ModelInput verbalized_followup(const ModelInput& sample_input, std::string_view output, VerbalStyle style,
                               const ProviderProfile& profile) {
  ModelInput followup = sample_input;
  followup.request_logprobs = false;
  followup.max_tokens = 32;
  const std::string question = verbalized_prompt(style, profile.chat);
  if (profile.chat) {
    followup.history.push_back({ChatTurn::Role::user, sample_input.user_prompt});
    followup.history.push_back({ChatTurn::Role::assistant, std::string(output)});
    followup.user_prompt = question;
  } else {
    followup.user_prompt = sample_input.user_prompt + "\n" + std::string(output) + "\n" + question;
  }
  return followup;
}

VerbalizedConfidence verbalized_confidence(const ModelInput& sample_input, std::string_view sample_output,
                                           VerbalStyle style, Provider& provider, std::uint64_t ordinal) {
  const ModelInput followup = verbalized_followup(sample_input, sample_output, style, provider.profile());
  VerbalizedConfidence out;
  for (std::uint64_t ord : {ordinal, ordinal + kRetryOrdinal}) {
    const auto reply = provider.generate(followup, ord);
    ++out.calls;
    out.raw = reply.text;
    if (auto v = parse_verbalized(reply.text, style)) {
      out.value = *v;
      return out;
    }
  }
  out.value = 0.5;
  out.parse_failed = true;
  return out;
}

}  // namespace spuq
