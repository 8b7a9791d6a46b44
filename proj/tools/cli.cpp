#include "cli.hpp"

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spuq/config.hpp"
#include "spuq/dataset.hpp"
#include "spuq/errors.hpp"
#include "spuq/harness.hpp"
#include "spuq/perturbation.hpp"
#include "spuq/tuner.hpp"

namespace spuq::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Args {
  std::string config;
  std::string provider;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> buckets;
  std::optional<std::string> weighting;
  std::optional<std::string> temperature;
  std::optional<std::string> perturb;
  std::optional<std::string> aggregation;
  std::optional<std::string> metric;
  std::optional<int> repeats;
  std::optional<std::size_t> max_parallel;
  std::optional<std::size_t> dev_size;
  std::string prompt;
  std::optional<std::string> system;
  std::string dataset;
  std::string task = "generation";
  std::string out_dir;
};

/// Provider instances for one invocation. The model is wrapped in a counter
/// so generation calls can be reported; the paraphraser is a separate
/// instance and is not counted.
struct Session {
  AppConfig config;
  std::string provider_name;
  std::unique_ptr<Provider> model_owner;
  std::unique_ptr<CountingProvider> model;
  std::unique_ptr<Provider> paraphraser;
  std::shared_ptr<Embedder> embedder;
};

void apply_overrides(const Args& a, AppConfig& c) {
  auto& run = c.run;
  if (a.method) run.method = parse_method(*a.method);
  if (a.k) {
    run.spuq.perturbation.k = *a.k;
    run.sampling_k = *a.k;
    c.tuning.k = *a.k;
  }
  if (a.seed) {
    run.spuq.seed = *a.seed;
    c.tuning.seed = *a.seed;
  }
  if (a.buckets) run.num_buckets = *a.buckets;
  if (a.weighting) run.weighting = parse_weighting(*a.weighting);
  if (a.temperature) run.spuq.perturbation.temperature = parse_temperature_perturbation(*a.temperature);
  if (a.perturb) run.spuq.perturbation.prompt = parse_prompt_mode(*a.perturb);
  if (a.aggregation) {
    const auto choice = parse_aggregation_choice(*a.aggregation);
    run.spuq.aggregation.mode = choice.mode;
    if (choice.mode == AggregationMode::inter_sample) {
      run.spuq.aggregation.metric.kind = choice.metric;
    } else {
      run.spuq.aggregation.intra_source = choice.intra_source;
    }
  }
  if (a.metric) {
    run.spuq.aggregation.metric.kind = parse_metric_kind(*a.metric);
    run.sampling_metric.kind = run.spuq.aggregation.metric.kind;
  }
  if (a.repeats) {
    c.repeats = *a.repeats;
    c.tuning.repeats = *a.repeats;
  }
  if (a.max_parallel) run.max_parallel = *a.max_parallel;
  if (a.dev_size) c.tuning.dev_size = *a.dev_size;
  if (a.system) run.system_message = *a.system;
  // Method, buckets and weighting flags apply to tuning too.
  const auto grid = c.tuning.grid;
  c.tuning.base = run;
  c.tuning.grid = grid;
}

bool wants_paraphraser(const HarnessOptions& o) {
  return o.method == Method::spuq && o.spuq.perturbation.prompt == PromptMode::paraphrasing;
}

/// `always_paraphraser` builds the paraphraser even when the run itself does
/// not paraphrase (the tuner may).
Session open_session(const Args& a, bool always_paraphraser) {
  if (a.config.empty()) throw ConfigError("--config is required");
  Session s;
  s.config = load_app_config(a.config);
  apply_overrides(a, s.config);
  if (s.config.embedding) s.embedder = make_embedder(*s.config.embedding);
  attach_embedder(s.config.run, s.embedder);
  attach_embedder(s.config.tuning.base, s.embedder);

  s.provider_name = a.provider.empty() ? s.config.default_provider : a.provider;
  const auto it = s.config.providers.find(s.provider_name);
  if (it == s.config.providers.end()) throw ConfigError("provider '" + s.provider_name + "' is not defined in config");
  s.model_owner = make_provider(it->second, s.config.cache_dir);
  s.model = std::make_unique<CountingProvider>(*s.model_owner);

  if (always_paraphraser || wants_paraphraser(s.config.run)) {
    const auto& name = s.config.paraphraser.value_or(s.provider_name);
    s.paraphraser = make_provider(s.config.providers.at(name), s.config.cache_dir);
  }
  return s;
}

json run_fingerprint(const Session& s, const HarnessOptions& options) {
  return {{"provider", s.model->id()}, {"run", to_json(options)}};
}

void print_repro_line(std::ostream& err, const std::string& hash, std::uint64_t seed) {
  err << "config_hash=" << hash << " seed=" << seed << '\n';
}

void write_file_atomically(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string describe(const std::exception& e) {
  std::string msg = e.what();
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    const auto rest = describe(inner);
    if (msg.find(inner.what()) == std::string::npos) msg += ": " + rest;
  } catch (...) {
  }
  return msg;
}

/// Innermost CapabilityError in a nested chain, if any.
const CapabilityError* find_capability(const std::exception& e, std::exception_ptr& keep) {
  if (const auto* c = dynamic_cast<const CapabilityError*>(&e)) return c;
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    keep = std::current_exception();
    return find_capability(inner, keep);
  } catch (...) {
  }
  return nullptr;
}

int cmd_score(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.prompt.empty()) throw ConfigError("--prompt is required");
  Session s = open_session(a, false);
  const auto& options = s.config.run;

  ExampleRecord record;
  record.id = "prompt";
  record.question = a.prompt;
  const auto input = make_input(record, options);
  check_capabilities(options, *s.model, s.paraphraser.get());
  auto score = score_prompt(input, options, options.spuq.seed, *s.model, s.paraphraser.get());

  const auto hash = config_hash(run_fingerprint(s, options));
  json j = std::move(score.detail);
  if (!j.contains("variants")) j["variants"] = json::array();
  j["answer"] = score.answer;
  j["confidence"] = score.confidence;
  j["method"] = to_string(options.method);
  j["generation_calls"] = s.model->calls();
  j["provider"] = s.provider_name;
  j["config_hash"] = hash;
  j["seed"] = options.spuq.seed;
  j["warnings"] = score.warnings;
  out << j.dump(2) << '\n';
  print_repro_line(err, hash, options.spuq.seed);
  err << "generation_calls=" << s.model->calls() << '\n';
  for (const auto& w : score.warnings) err << "warning: " << w << '\n';
  return score.warnings.empty() && !score.parse_failed ? kExitOk : kExitWarnings;
}

std::vector<ExampleRecord> load_dataset(const Args& a) {
  if (a.dataset.empty()) throw ConfigError("--dataset is required");
  return load_jsonl(fs::path(a.dataset), parse_task_type(a.task));
}

int cmd_evaluate(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.out_dir.empty()) throw ConfigError("--out is required");
  const auto records = load_dataset(a);
  Session s = open_session(a, false);
  const auto& options = s.config.run;
  check_capabilities(options, *s.model, s.paraphraser.get());

  const auto repeated = evaluate_repeated(records, options, s.config.repeats, *s.model, s.paraphraser.get());
  const auto& run = repeated.runs.front();
  const auto hash = config_hash(run_fingerprint(s, options));
  json extra{{"method", to_string(options.method)},
             {"provider", s.provider_name},
             {"seed", options.spuq.seed},
             {"run_hash", hash},
             {"generation_calls", s.model->calls()},
             {"warnings", run.warnings}};
  if (s.config.repeats > 1) {
    json eces = json::array();
    for (const auto& r : repeated.runs) eces.push_back(r.report.ece);
    extra["repeats"] = {{"count", s.config.repeats},
                        {"ece", eces},
                        {"ece_mean", repeated.ece_mean},
                        {"ece_stddev", repeated.ece_stddev}};
  }
  write_run_artifacts(run, a.out_dir, extra);

  out << render_reliability_diagram(run.report);
  if (s.config.repeats > 1)
    out << "ECE over " << s.config.repeats << " repeats: mean " << repeated.ece_mean << ", stddev "
        << repeated.ece_stddev << '\n';
  print_repro_line(err, hash, options.spuq.seed);
  bool warned = false;
  for (const auto& r : repeated.runs) {
    for (const auto& w : r.warnings) {
      err << "warning: " << w << '\n';
      warned = true;
    }
    for (const auto& res : r.results) warned = warned || res.parse_failed;
  }
  return warned ? kExitWarnings : kExitOk;
}

int cmd_tune(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.out_dir.empty()) throw ConfigError("--out is required");
  const auto records = load_dataset(a);
  Session s = open_session(a, true);
  const auto& spec = s.config.tuning;
  const auto result = tune(records, spec, *s.model, s.paraphraser.get(), s.embedder);

  fs::create_directories(a.out_dir);
  std::ostringstream board;
  write_leaderboard_csv(board, result);
  std::ostringstream skipped;
  skipped << "label,reason\n";
  for (const auto& sp : result.skipped) {
    std::string reason = sp.reason;
    std::replace(reason.begin(), reason.end(), '"', '\'');
    skipped << sp.label << ",\"" << reason << "\"\n";
  }
  json best{{"label", result.best_label},
            {"spuq", to_json(result.best)},
            {"repeat_winners", result.repeat_winners},
            {"grid_size", spec.grid.size()},
            {"evaluated", result.leaderboard.size()},
            {"skipped", result.skipped.size()},
            {"seed", spec.seed}};
  write_file_atomically(fs::path(a.out_dir) / "leaderboard.csv", board.str());
  write_file_atomically(fs::path(a.out_dir) / "skipped.csv", skipped.str());
  write_file_atomically(fs::path(a.out_dir) / "best.json", best.dump(2) + "\n");

  out << board.str();
  const json fingerprint{{"provider", s.model->id()},
                         {"tuning",
                          {{"k", spec.k},
                           {"dev_size", spec.dev_size},
                           {"repeats", spec.repeats},
                           {"grid_size", spec.grid.size()},
                           {"base", to_json(spec.base)}}}};
  print_repro_line(err, config_hash(fingerprint), spec.seed);
  err << "best: " << result.best_label << " (" << result.skipped.size() << " of " << spec.grid.size()
      << " grid points skipped)\n";
  return kExitOk;
}

int cmd_perturb(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.prompt.empty()) throw ConfigError("--prompt is required");
  AppConfig config;
  std::unique_ptr<Provider> paraphraser;
  ProviderProfile profile;
  if (!a.config.empty()) {
    config = load_app_config(a.config);
    apply_overrides(a, config);
    const auto name = a.provider.empty() ? config.default_provider : a.provider;
    const auto it = config.providers.find(name);
    if (it == config.providers.end()) throw ConfigError("provider '" + name + "' is not defined in config");
    profile = it->second.profile;
    if (config.run.spuq.perturbation.prompt == PromptMode::paraphrasing)
      paraphraser = make_provider(config.providers.at(config.paraphraser.value_or(name)), config.cache_dir);
  } else {
    apply_overrides(a, config);
  }
  const auto& run = config.run;
  ExampleRecord record;
  record.id = "prompt";
  record.question = a.prompt;
  const auto input = make_input(record, run);
  if (run.spuq.perturbation.prompt == PromptMode::paraphrasing && !paraphraser)
    throw CapabilityError("paraphraser", "paraphrasing needs --config with a paraphraser provider");
  const auto variants = perturb(input, run.spuq.perturbation, profile, run.spuq.seed, paraphraser.get(),
                                run.spuq.aggregation.effective_weight_metric());
  json arr = json::array();
  bool fallback = false;
  for (const auto& v : variants) {
    json vj{{"index", v.index},
            {"temperature", v.input.temperature},
            {"prompt", v.input.user_prompt},
            {"weight", v.prompt_weight}};
    vj["system_message"] = v.input.system_message ? json(*v.input.system_message) : json();
    if (v.fallback) {
      vj["fallback"] = true;
      fallback = true;
    }
    arr.push_back(std::move(vj));
  }
  json j{{"original", input}, {"variants", arr}, {"seed", run.spuq.seed}};
  j["config_hash"] = config_hash(to_json(run.spuq.perturbation));
  out << j.dump(2) << '\n';
  print_repro_line(err, j["config_hash"].get<std::string>(), run.spuq.seed);
  return fallback ? kExitWarnings : kExitOk;
}

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("--config", a.config, "JSON config file");
  cmd->add_option("--provider", a.provider, "provider name from the config");
  cmd->add_option("--k", a.k, "number of perturbed variants")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "RNG seed");
  cmd->add_option("--method", a.method, "spuq, sampling, likelihood or verbalized");
  cmd->add_option("--buckets", a.buckets, "ECE bucket count")->check(CLI::PositiveNumber);
  cmd->add_option("--weighting", a.weighting, "unweighted or population");
  cmd->add_option("--temperature", a.temperature, "none, random or an offset such as +0.3");
  cmd->add_option("--perturb", a.perturb, "none, paraphrasing, dummy_tokens or system_messages");
  cmd->add_option("--aggregation", a.aggregation, "inter:<metric> or intra:<source>");
  cmd->add_option("--metric", a.metric, "exact_match, rouge_l or embedding_cosine");
  cmd->add_option("--system", a.system, "system message for x0");
  cmd->add_option("--max-parallel", a.max_parallel, "concurrent generation calls")->check(CLI::PositiveNumber);
}

void add_dataset(CLI::App* cmd, Args& a) {
  cmd->add_option("--dataset", a.dataset, "JSONL dataset")->required();
  cmd->add_option("--task", a.task, "generation or classification");
  cmd->add_option("--out", a.out_dir, "output directory")->required();
  cmd->add_option("--repeats", a.repeats, "repeat runs")->check(CLI::PositiveNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perturbation-based uncertainty scoring for text-generation models", "spuq"};
  app.require_subcommand(1);
  Args a;

  auto* score = app.add_subcommand("score", "score one prompt and print the result as JSON");
  add_common(score, a);
  score->add_option("--prompt", a.prompt, "user prompt x0")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a dataset and write calibration artifacts");
  add_common(evaluate, a);
  add_dataset(evaluate, a);

  auto* tune_cmd = app.add_subcommand("tune", "grid-search perturbation and aggregation settings");
  add_common(tune_cmd, a);
  add_dataset(tune_cmd, a);
  tune_cmd->add_option("--dev-size", a.dev_size, "dev split size")->check(CLI::PositiveNumber);

  auto* perturb_cmd = app.add_subcommand("perturb", "print the perturbed variants of a prompt");
  add_common(perturb_cmd, a);
  perturb_cmd->add_option("--prompt", a.prompt, "user prompt x0")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (score->parsed()) return cmd_score(a, out, err);
    if (evaluate->parsed()) return cmd_evaluate(a, out, err);
    if (tune_cmd->parsed()) return cmd_tune(a, out, err);
    return cmd_perturb(a, out, err);
  } catch (const std::exception& e) {
    std::exception_ptr keep;
    if (const auto* cap = find_capability(e, keep)) {
      err << "error: " << cap->what() << '\n';
    } else {
      err << "error: " << describe(e) << '\n';
    }
    return kExitUsage;
  }
}

}  // namespace spuq::cli
