#include "spuq/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "spuq/errors.hpp"
#include "spuq/hashing.hpp"

namespace spuq {

namespace {

constexpr double kTieTolerance = 1e-12;

struct GridPoint {
  std::string label;
  SpuqConfig config;
  std::optional<std::string> skip_reason;
  std::vector<double> ece;
  std::vector<std::optional<double>> rho;
};

std::optional<std::string> capability_gap(const SpuqConfig& cfg, const ProviderProfile& profile,
                                          const Provider* paraphraser, const Embedder* embedder) {
  const auto& p = cfg.perturbation;
  const auto& a = cfg.aggregation;
  if (p.temperature.mode == TemperatureMode::none && p.prompt == PromptMode::none) return "no perturbation active";
  if (p.prompt == PromptMode::paraphrasing && paraphraser == nullptr) return "needs a paraphraser provider";
  if (p.prompt == PromptMode::system_messages && !profile.supports_system_message)
    return "provider '" + profile.name + "' does not accept system messages";
  if (a.mode == AggregationMode::intra_sample && a.intra_source == IntraSource::likelihood &&
      !profile.supports_logprobs)
    return "provider '" + profile.name + "' does not return log-probabilities";
  if (a.mode == AggregationMode::inter_sample && a.metric.kind == MetricKind::embedding_cosine && embedder == nullptr)
    return "needs an embedding endpoint";
  return std::nullopt;
}

}  // namespace

TuningGrid TuningGrid::full() {
  TuningGrid g;
  g.temperature = {TemperaturePerturbation::none(),      TemperaturePerturbation::fixed(0.3),
                   TemperaturePerturbation::fixed(0.6),  TemperaturePerturbation::fixed(1.0),
                   TemperaturePerturbation::fixed(1.3),  TemperaturePerturbation::random()};
  g.prompt = {PromptMode::none, PromptMode::paraphrasing, PromptMode::dummy_tokens, PromptMode::system_messages};
  g.aggregation = {
      {AggregationMode::inter_sample, MetricKind::exact_match, IntraSource::likelihood},
      {AggregationMode::inter_sample, MetricKind::rouge_l, IntraSource::likelihood},
      {AggregationMode::inter_sample, MetricKind::embedding_cosine, IntraSource::likelihood},
      {AggregationMode::intra_sample, MetricKind::rouge_l, IntraSource::likelihood},
      {AggregationMode::intra_sample, MetricKind::rouge_l, IntraSource::verbalized_words},
      {AggregationMode::intra_sample, MetricKind::rouge_l, IntraSource::verbalized_numbers},
  };
  return g;
}

std::size_t TuningGrid::size() const { return temperature.size() * prompt.size() * aggregation.size(); }

std::string config_label(const SpuqConfig& config) {
  std::string label = "T=" + to_string(config.perturbation.temperature) + "|x=" +
                      std::string(to_string(config.perturbation.prompt)) + "|agg=";
  if (config.aggregation.mode == AggregationMode::inter_sample) {
    label += "inter:" + std::string(to_string(config.aggregation.metric.kind));
  } else {
    label += "intra:" + std::string(to_string(config.aggregation.intra_source));
  }
  return label;
}

bool ranks_before(double ece_a, const std::optional<double>& rho_a, const std::string& label_a, double ece_b,
                  const std::optional<double>& rho_b, const std::string& label_b) {
  if (std::abs(ece_a - ece_b) > kTieTolerance) return ece_a < ece_b;
  if (rho_a.has_value() != rho_b.has_value()) return rho_a.has_value();
  if (rho_a && std::abs(*rho_a - *rho_b) > kTieTolerance) return *rho_a > *rho_b;
  return label_a < label_b;
}

TuneResult tune(std::span<const ExampleRecord> dataset, const TuningSpec& spec, Provider& model, Provider* paraphraser,
                std::shared_ptr<Embedder> embedder) {
  if (dataset.size() <= spec.dev_size)
    throw PreconditionError("dataset (" + std::to_string(dataset.size()) + " records) must be larger than dev_size (" +
                            std::to_string(spec.dev_size) + ")");
  if (spec.repeats < 1) throw PreconditionError("repeats must be >= 1");
  if (spec.k < 1) throw PreconditionError("k must be >= 1");
  if (spec.grid.size() == 0) throw PreconditionError("tuning grid is empty");

  const auto& profile = model.profile();
  std::vector<GridPoint> points;
  for (const auto& t : spec.grid.temperature) {
    for (const auto mode : spec.grid.prompt) {
      for (const auto& agg : spec.grid.aggregation) {
        GridPoint gp;
        gp.config.perturbation = spec.base.spuq.perturbation;
        gp.config.perturbation.k = spec.k;
        gp.config.perturbation.temperature = t;
        gp.config.perturbation.prompt = mode;
        gp.config.aggregation = spec.base.spuq.aggregation;
        gp.config.aggregation.mode = agg.mode;
        gp.config.aggregation.metric.kind = agg.metric;
        gp.config.aggregation.intra_source = agg.intra_source;
        if (agg.metric == MetricKind::embedding_cosine) gp.config.aggregation.metric.embedder = embedder;
        gp.config.on_sample_failure = spec.base.spuq.on_sample_failure;
        gp.label = config_label(gp.config);
        gp.skip_reason = capability_gap(gp.config, profile, paraphraser, embedder.get());
        points.push_back(std::move(gp));
      }
    }
  }

  TuneResult result;
  for (int r = 0; r < spec.repeats; ++r) {
    const auto dev = split(dataset, spec.dev_size, mix_seed(spec.seed, static_cast<std::uint64_t>(r))).dev;
    auto& ids = result.dev_ids.emplace_back();
    for (const auto& rec : dev) ids.push_back(rec.id);

    for (auto& gp : points) {
      if (gp.skip_reason) continue;
      HarnessOptions opts = spec.base;
      opts.method = Method::spuq;
      opts.spuq = gp.config;
      opts.spuq.seed = mix_seed(spec.seed ^ 0x5350555155ULL, static_cast<std::uint64_t>(r));
      try {
        const auto run = evaluate_dataset(dev, opts, model, paraphraser);
        gp.ece.push_back(run.report.ece);
        gp.rho.push_back(run.report.pearson_rho);
      } catch (const std::exception& e) {
        gp.skip_reason = std::string("evaluation failed: ") + e.what();
      }
    }
  }

  for (auto& gp : points) {
    if (gp.skip_reason) {
      result.skipped.push_back({gp.label, *gp.skip_reason});
      continue;
    }
    LeaderboardRow row;
    row.label = gp.label;
    row.config = gp.config;
    row.ece_per_repeat = gp.ece;
    row.rho_per_repeat = gp.rho;
    double sum = 0.0;
    for (double e : gp.ece) sum += e;
    row.ece_mean = sum / static_cast<double>(gp.ece.size());
    if (gp.ece.size() > 1) {
      double ss = 0.0;
      for (double e : gp.ece) ss += (e - row.ece_mean) * (e - row.ece_mean);
      row.ece_stddev = std::sqrt(ss / static_cast<double>(gp.ece.size() - 1));
    }
    double rho_sum = 0.0;
    std::size_t rho_n = 0;
    for (const auto& rho : gp.rho) {
      if (rho) {
        rho_sum += *rho;
        ++rho_n;
      }
    }
    if (rho_n > 0) row.rho_mean = rho_sum / static_cast<double>(rho_n);
    result.leaderboard.push_back(std::move(row));
  }
  if (result.leaderboard.empty()) throw Error("every tuning grid point was skipped");

  for (int r = 0; r < spec.repeats; ++r) {
    LeaderboardRow* winner = nullptr;
    for (auto& row : result.leaderboard) {
      if (winner == nullptr || ranks_before(row.ece_per_repeat[r], row.rho_per_repeat[r], row.label,
                                            winner->ece_per_repeat[r], winner->rho_per_repeat[r], winner->label)) {
        winner = &row;
      }
    }
    ++winner->repeat_wins;
    result.repeat_winners.push_back(winner->label);
  }

  std::sort(result.leaderboard.begin(), result.leaderboard.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    return ranks_before(a.ece_mean, a.rho_mean, a.label, b.ece_mean, b.rho_mean, b.label);
  });
  result.best = result.leaderboard.front().config;
  result.best_label = result.leaderboard.front().label;
  return result;
}

void write_leaderboard_csv(std::ostream& out, const TuneResult& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "rank,label,temperature,prompt,aggregation,ece_mean,ece_stddev,rho_mean,repeat_wins\n";
  std::size_t rank = 1;
  for (const auto& row : result.leaderboard) {
    const auto& c = row.config;
    const std::string agg = c.aggregation.mode == AggregationMode::inter_sample
                                ? "inter:" + std::string(to_string(c.aggregation.metric.kind))
                                : "intra:" + std::string(to_string(c.aggregation.intra_source));
    os << rank++ << ',' << row.label << ',' << to_string(c.perturbation.temperature) << ','
       << to_string(c.perturbation.prompt) << ',' << agg << ',' << row.ece_mean << ',' << row.ece_stddev << ',';
    if (row.rho_mean) os << *row.rho_mean;
    os << ',' << row.repeat_wins << '\n';
  }
  out << os.str();
}

}  // namespace spuq
