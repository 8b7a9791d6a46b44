#include "spuq/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spuq/config.hpp"
#include "spuq/errors.hpp"
#include "spuq/hashing.hpp"

namespace spuq {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void check_capabilities(const HarnessOptions& options, const Provider& model, const Provider* paraphraser) {
  const auto& profile = model.profile();
  const bool needs_logprobs =
      options.method == Method::likelihood ||
      (options.method == Method::spuq && options.spuq.aggregation.mode == AggregationMode::intra_sample &&
       options.spuq.aggregation.intra_source == IntraSource::likelihood);
  if (needs_logprobs && !profile.supports_logprobs)
    throw CapabilityError("logprobs", "method '" + std::string(to_string(options.method)) + "' needs provider '" +
                                          profile.name + "' to return token log-probabilities");
  if (options.method == Method::spuq) {
    if (options.spuq.perturbation.prompt == PromptMode::system_messages && !profile.supports_system_message)
      throw CapabilityError("system_message", "provider '" + profile.name + "' does not accept system messages");
    if (options.spuq.perturbation.prompt == PromptMode::paraphrasing && paraphraser == nullptr)
      throw CapabilityError("paraphraser", "paraphrasing needs a paraphraser provider");
  }
  const auto needs_embedder = [](const SimilarityMetric& m) {
    return m.kind == MetricKind::embedding_cosine && m.embedder == nullptr;
  };
  const bool inter = options.method == Method::spuq && options.spuq.aggregation.mode == AggregationMode::inter_sample;
  if ((inter && needs_embedder(options.spuq.aggregation.metric)) ||
      (options.method == Method::sampling && needs_embedder(options.sampling_metric)))
    throw CapabilityError("embedding", "embedding_cosine similarity needs an embedding endpoint");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::spuq: return "spuq";
    case Method::sampling: return "sampling";
    case Method::likelihood: return "likelihood";
    case Method::verbalized: return "verbalized";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "spuq") return Method::spuq;
  if (name == "sampling") return Method::sampling;
  if (name == "likelihood") return Method::likelihood;
  if (name == "verbalized") return Method::verbalized;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected spuq, sampling, likelihood, verbalized)");
}

nlohmann::json to_json(const HarnessOptions& o) {
  nlohmann::json j{{"method", to_string(o.method)},
                   {"spuq", to_json(o.spuq)},
                   {"sampling_k", o.sampling_k},
                   {"sampling_metric", to_json(o.sampling_metric)},
                   {"verbal_style", o.verbal_style == VerbalStyle::words ? "words" : "numbers"},
                   {"base_temperature", o.base_temperature},
                   {"max_tokens", o.max_tokens},
                   {"num_buckets", o.num_buckets},
                   {"weighting", to_string(o.weighting)}};
  j["system_message"] = o.system_message ? nlohmann::json(*o.system_message) : nlohmann::json();
  return j;
}

std::vector<EvalOutcome> EvaluationRun::outcomes() const {
  std::vector<EvalOutcome> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back({r.confidence, r.accuracy});
  return out;
}

ModelInput make_input(const ExampleRecord& record, const HarnessOptions& options) {
  ModelInput in;
  in.temperature = options.base_temperature;
  in.system_message = record.system_message ? record.system_message : options.system_message;
  in.user_prompt = record.question;
  in.max_tokens = options.max_tokens;
  return in;
}

PromptScore score_prompt(const ModelInput& original, const HarnessOptions& options, std::uint64_t seed,
                         Provider& model, Provider* paraphraser) {
  const EngineOptions engine{paraphraser, options.max_parallel};
  ModelInput input = original;
  PromptScore out;
  switch (options.method) {
    case Method::spuq: {
      SpuqConfig cfg = options.spuq;
      cfg.seed = seed;
      const auto r = run_spuq(input, cfg, model, engine);
      out.answer = r.original_output;
      out.confidence = r.confidence;
      out.parse_failed = r.any_parse_failed();
      out.warnings = r.warnings;
      out.detail = to_json(r);
      break;
    }
    case Method::sampling: {
      const auto r = run_baseline_sampling(input, options.sampling_k, options.sampling_metric, model, engine);
      out.answer = r.original_output;
      out.confidence = r.confidence;
      out.warnings = r.warnings;
      out.detail = to_json(r);
      break;
    }
    case Method::likelihood: {
      input.request_logprobs = true;
      const auto sample = model.generate(input, 0);
      out.answer = sample.text;
      out.confidence = likelihood_confidence(sample);
      out.detail = {{"input", input}, {"output", sample.text}, {"token_logprobs", *sample.token_logprobs}};
      break;
    }
    case Method::verbalized: {
      const auto sample = model.generate(input, 0);
      const auto vc = verbalized_confidence(input, sample.text, options.verbal_style, model, 0);
      out.answer = sample.text;
      out.confidence = vc.value;
      out.parse_failed = vc.parse_failed;
      if (vc.parse_failed) out.warnings.push_back("verbalized confidence unparseable (\"" + vc.raw + "\"), using 0.5");
      out.detail = {{"input", input}, {"output", sample.text}, {"verbalized_reply", vc.raw}};
      if (vc.parse_failed) out.detail["parse_failed"] = true;
      break;
    }
  }
  return out;
}

EvaluationRun evaluate_dataset(std::span<const ExampleRecord> records, const HarnessOptions& options, Provider& model,
                               Provider* paraphraser) {
  if (records.empty()) throw EmptyInputError("dataset is empty");
  check_capabilities(options, model, paraphraser);

  EvaluationRun run;
  run.config_hash = config_hash(to_json(options));

  for (const auto& record : records) {
    const std::uint64_t record_seed = mix_seed(options.spuq.seed, hash64(record.id));
    ExampleResult res;
    res.id = record.id;
    PromptScore score;
    try {
      score = score_prompt(make_input(record, options), options, record_seed, model, paraphraser);
    } catch (const std::exception& e) {
      std::throw_with_nested(Error("example '" + record.id + "': " + e.what()));
    }
    res.answer = score.answer;
    res.confidence = score.confidence;
    res.parse_failed = score.parse_failed;
    for (const auto& w : score.warnings) run.warnings.push_back(record.id + ": " + w);
    nlohmann::json detail = std::move(score.detail);
    res.accuracy = accuracy(res.answer, record);
    res.trace = {{"config_hash", run.config_hash},
                 {"seed", options.spuq.seed},
                 {"id", record.id},
                 {"method", to_string(options.method)},
                 {"answer", res.answer},
                 {"references", record.references},
                 {"confidence", res.confidence},
                 {"accuracy", res.accuracy},
                 {"detail", std::move(detail)}};
    run.results.push_back(std::move(res));
  }
  const auto outcomes = run.outcomes();
  run.report = make_report(outcomes, options.num_buckets, options.weighting);
  return run;
}

RepeatedRuns evaluate_repeated(std::span<const ExampleRecord> records, const HarnessOptions& options, int repeats,
                               Provider& model, Provider* paraphraser) {
  if (repeats < 1) throw PreconditionError("repeats must be >= 1");
  RepeatedRuns out;
  for (int r = 0; r < repeats; ++r) {
    HarnessOptions opts = options;
    if (r > 0) opts.spuq.seed = mix_seed(options.spuq.seed, static_cast<std::uint64_t>(r));
    out.runs.push_back(evaluate_dataset(records, opts, model, paraphraser));
  }
  double sum = 0.0;
  for (const auto& run : out.runs) sum += run.report.ece;
  out.ece_mean = sum / repeats;
  if (repeats > 1) {
    double ss = 0.0;
    for (const auto& run : out.runs) ss += (run.report.ece - out.ece_mean) * (run.report.ece - out.ece_mean);
    out.ece_stddev = std::sqrt(ss / (repeats - 1));
  }
  return out;
}

void write_run_artifacts(const EvaluationRun& run, const std::filesystem::path& out_dir,
                         const nlohmann::json& extra_report_fields) {
  std::filesystem::create_directories(out_dir);

  nlohmann::json report = to_json(run.report);
  report["config_hash"] = run.config_hash;
  report["warnings"] = run.warnings;
  for (const auto& [key, value] : extra_report_fields.items()) report[key] = value;

  std::ostringstream buckets;
  write_buckets_csv(buckets, run.report.buckets);

  std::ostringstream confidences;
  confidences << std::setprecision(17) << "id,confidence,accuracy,answer\n";
  for (const auto& r : run.results) {
    confidences << csv_field(r.id) << ',' << r.confidence << ',' << r.accuracy << ',' << csv_field(r.answer) << '\n';
  }

  std::ostringstream traces;
  for (const auto& r : run.results) traces << r.trace.dump() << '\n';

  write_atomically(out_dir / "report.json", report.dump(2) + "\n");
  write_atomically(out_dir / "buckets.csv", buckets.str());
  write_atomically(out_dir / "confidences.csv", confidences.str());
  write_atomically(out_dir / "traces.jsonl", traces.str());
}

}  // namespace spuq
