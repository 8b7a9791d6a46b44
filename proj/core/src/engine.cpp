#include "spuq/engine.hpp"

#include <exception>
#include <functional>
#include <future>

#include "spuq/errors.hpp"

namespace spuq {

namespace {

/// Runs fn(0..n-1), at most `max_parallel` at a time; results and failures
/// stay in index order.
template <typename T>
std::vector<std::pair<std::optional<T>, std::exception_ptr>> run_indexed(std::size_t n, std::size_t max_parallel,
                                                                          const std::function<T(std::size_t)>& fn) {
  std::vector<std::pair<std::optional<T>, std::exception_ptr>> out(n);
  auto one = [&](std::size_t i) {
    try {
      out[i].first = fn(i);
    } catch (...) {
      out[i].second = std::current_exception();
    }
  };
  if (max_parallel <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) one(i);
    return out;
  }
  for (std::size_t start = 0; start < n; start += max_parallel) {
    const std::size_t end = std::min(n, start + max_parallel);
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, one, i));
    for (auto& f : batch) f.get();
  }
  return out;
}

std::string describe(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

[[noreturn]] void rethrow_in_stage(const std::string& stage, const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    std::throw_with_nested(StageError(stage, ex.what()));
  }
}

template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& ex) {
    std::throw_with_nested(StageError(stage, ex.what()));
  }
}

std::optional<VerbalStyle> verbal_style(const AggregationConfig& agg) {
  if (agg.mode != AggregationMode::intra_sample) return std::nullopt;
  if (agg.intra_source == IntraSource::verbalized_words) return VerbalStyle::words;
  if (agg.intra_source == IntraSource::verbalized_numbers) return VerbalStyle::numbers;
  return std::nullopt;
}

bool wants_logprobs(const AggregationConfig& agg) {
  return agg.mode == AggregationMode::intra_sample && agg.intra_source == IntraSource::likelihood;
}

/// Sampling + aggregation over y0 at `x0` and the given variants.
SpuqResult run_pipeline(const ModelInput& x0, std::vector<PerturbedVariant> variants, const AggregationConfig& agg,
                        FailurePolicy policy, Provider& provider, const EngineOptions& options) {
  SpuqResult result;
  result.original_input = x0;

  const std::size_t n = variants.size() + 1;
  auto input_at = [&](std::size_t j) -> const ModelInput& { return j == 0 ? x0 : variants[j - 1].input; };

  auto generated = run_indexed<GenerationSample>(n, options.max_parallel, [&](std::size_t j) {
    GenerationSample s = provider.generate(input_at(j), j);
    s.variant_index = j;
    return s;
  });

  if (generated[0].second) rethrow_in_stage("sampling", generated[0].second);
  result.original_sample = *generated[0].first;
  result.original_output = result.original_sample.text;

  result.variants.reserve(variants.size());
  for (std::size_t i = 1; i < n; ++i) {
    VariantRecord rec;
    rec.variant = std::move(variants[i - 1]);
    if (generated[i].second) {
      if (policy == FailurePolicy::fail_run) rethrow_in_stage("sampling", generated[i].second);
      rec.diagnostics.dropped = true;
      rec.diagnostics.error = describe(generated[i].second);
      result.warnings.push_back("variant " + std::to_string(i) + " dropped: " + rec.diagnostics.error);
    } else {
      rec.sample = std::move(*generated[i].first);
    }
    result.variants.push_back(std::move(rec));
  }

  // Active sample indices into [original, variants...].
  std::vector<std::size_t> active{0};
  for (std::size_t i = 1; i < n; ++i) {
    if (result.variants[i - 1].sample) active.push_back(i);
  }
  auto sample_of = [&](std::size_t j) -> const GenerationSample& {
    return j == 0 ? result.original_sample : *result.variants[j - 1].sample;
  };
  auto diag_of = [&](std::size_t j) -> SampleDiagnostics& {
    return j == 0 ? result.original_diagnostics : result.variants[j - 1].diagnostics;
  };

  if (agg.mode == AggregationMode::inter_sample) {
    result.confidence = in_stage("aggregation", [&] {
      if (active.size() < 2) throw DegenerateWeightsError("no perturbed sample survived");
      std::vector<double> sims;
      std::vector<double> weights;
      for (std::size_t j : active) {
        const double s = j == 0 ? 1.0 : similarity(result.original_output, sample_of(j).text, agg.metric);
        if (j != 0) diag_of(j).similarity_to_anchor = s;
        sims.push_back(s);
        weights.push_back(j == 0 ? 1.0 : result.variants[j - 1].variant.prompt_weight);
      }
      return weighted_agreement(sims, weights, 0);
    });
    return result;
  }

  // Intra-sample: c(x_j, y_j) per active sample.
  const auto style = verbal_style(agg);
  auto scored = run_indexed<VerbalizedConfidence>(active.size(), options.max_parallel, [&](std::size_t a) {
    const std::size_t j = active[a];
    if (!style) return VerbalizedConfidence{likelihood_confidence(sample_of(j)), false, {}, 0};
    return verbalized_confidence(input_at(j), sample_of(j).text, *style, provider, j);
  });

  std::vector<ScoredSample> samples;
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t j = active[a];
    if (scored[a].second) {
      if (j == 0 || policy == FailurePolicy::fail_run) rethrow_in_stage("aggregation", scored[a].second);
      diag_of(j).dropped = true;
      diag_of(j).error = describe(scored[a].second);
      result.warnings.push_back("variant " + std::to_string(j) + " dropped: " + diag_of(j).error);
      continue;
    }
    const auto& vc = *scored[a].first;
    diag_of(j).intra_confidence = vc.value;
    diag_of(j).parse_failed = vc.parse_failed;
    if (vc.parse_failed) {
      result.warnings.push_back("sample " + std::to_string(j) + ": verbalized confidence unparseable (\"" + vc.raw +
                                "\"), using 0.5");
    }
    samples.push_back({sample_of(j), 1.0, vc.value});
  }
  result.confidence = in_stage("aggregation", [&] { return intra_sample_confidence(samples); });
  return result;
}

}  // namespace

void SpuqConfig::validate() const {
  perturbation.validate();
  if (aggregation.mode == AggregationMode::inter_sample && aggregation.metric.kind == MetricKind::embedding_cosine &&
      !aggregation.metric.embedder) {
    throw CapabilityError("embedding", "embedding_cosine needs an embedding endpoint");
  }
}

bool SpuqResult::any_parse_failed() const {
  if (original_diagnostics.parse_failed) return true;
  for (const auto& v : variants) {
    if (v.diagnostics.parse_failed) return true;
  }
  return false;
}

nlohmann::json to_json(const SpuqResult& result) {
  auto diag = [](nlohmann::json& j, const SampleDiagnostics& d) {
    j["similarity"] = d.similarity_to_anchor ? nlohmann::json(*d.similarity_to_anchor) : nlohmann::json();
    j["intra_confidence"] = d.intra_confidence ? nlohmann::json(*d.intra_confidence) : nlohmann::json();
    if (d.parse_failed) j["parse_failed"] = true;
    if (d.dropped) {
      j["dropped"] = true;
      j["error"] = d.error;
    }
  };
  nlohmann::json j;
  j["confidence"] = result.confidence;
  nlohmann::json original{{"input", result.original_input}, {"output", result.original_output}};
  diag(original, result.original_diagnostics);
  j["original"] = std::move(original);
  auto variants = nlohmann::json::array();
  for (const auto& v : result.variants) {
    nlohmann::json vj{{"index", v.variant.index},
                      {"temperature", v.variant.input.temperature},
                      {"prompt", v.variant.input.user_prompt},
                      {"weight", v.variant.prompt_weight}};
    vj["system_message"] =
        v.variant.input.system_message ? nlohmann::json(*v.variant.input.system_message) : nlohmann::json();
    if (v.variant.fallback) vj["fallback"] = true;
    vj["output"] = v.sample ? nlohmann::json(v.sample->text) : nlohmann::json();
    diag(vj, v.diagnostics);
    variants.push_back(std::move(vj));
  }
  j["variants"] = std::move(variants);
  j["warnings"] = result.warnings;
  return j;
}

SpuqResult run_spuq(const ModelInput& original, const SpuqConfig& config, Provider& provider,
                    const EngineOptions& options) {
  in_stage("config", [&] {
    original.validate();
    config.validate();
    if (wants_logprobs(config.aggregation) && !provider.profile().supports_logprobs)
      throw CapabilityError("logprobs", "likelihood aggregation needs a provider that returns log-probabilities");
    return 0;
  });

  ModelInput x0 = original;
  if (wants_logprobs(config.aggregation)) x0.request_logprobs = true;

  auto variants = in_stage("perturbation", [&] {
    return perturb(x0, config.perturbation, provider.profile(), config.seed, options.paraphraser,
                   config.aggregation.effective_weight_metric());
  });
  if (config.aggregation.uniform_weights) {
    for (auto& v : variants) v.prompt_weight = 1.0;
  }

  SpuqResult result = run_pipeline(x0, std::move(variants), config.aggregation, config.on_sample_failure, provider,
                                   options);
  for (const auto& v : result.variants) {
    if (v.variant.fallback) {
      result.warnings.push_back("variant " + std::to_string(v.variant.index) +
                                " uses a dummy-token fallback instead of a paraphrase");
    }
  }
  return result;
}

SpuqResult run_baseline_sampling(const ModelInput& original, int k, const SimilarityMetric& metric, Provider& provider,
                                 const EngineOptions& options) {
  in_stage("config", [&] {
    original.validate();
    if (k < 1) throw PreconditionError("k must be >= 1");
    return 0;
  });
  std::vector<PerturbedVariant> variants;
  for (int i = 1; i <= k; ++i) variants.push_back({static_cast<std::size_t>(i), original, 1.0, false});
  AggregationConfig agg;
  agg.mode = AggregationMode::inter_sample;
  agg.metric = metric;
  agg.uniform_weights = true;
  return run_pipeline(original, std::move(variants), agg, FailurePolicy::fail_run, provider, options);
}

}  // namespace spuq
