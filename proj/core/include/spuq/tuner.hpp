#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spuq/dataset.hpp"
#include "spuq/engine.hpp"
#include "spuq/harness.hpp"

namespace spuq {

struct AggregationChoice {
  AggregationMode mode = AggregationMode::inter_sample;
  MetricKind metric = MetricKind::rouge_l;
  IntraSource intra_source = IntraSource::likelihood;

  friend bool operator==(const AggregationChoice&, const AggregationChoice&) = default;
};

struct TuningGrid {
  std::vector<TemperaturePerturbation> temperature;
  std::vector<PromptMode> prompt;
  std::vector<AggregationChoice> aggregation;

  /// Every option: offsets {+0.3, +0.6, +1.0, +1.3}, none and random; all
  /// prompt modes; all inter metrics and intra sources.
  static TuningGrid full();
  std::size_t size() const;
};

struct TuningSpec {
  TuningGrid grid = TuningGrid::full();
  int k = 5;
  std::size_t dev_size = 30;
  int repeats = 5;
  std::uint64_t seed = 0;
  /// Method, bucket count and weighting are taken from here.
  HarnessOptions base{};
};

struct LeaderboardRow {
  std::string label;
  SpuqConfig config;
  std::vector<double> ece_per_repeat;
  std::vector<std::optional<double>> rho_per_repeat;
  double ece_mean = 0.0;
  double ece_stddev = 0.0;
  std::optional<double> rho_mean;
  int repeat_wins = 0;
};

struct SkippedPoint {
  std::string label;
  std::string reason;
};

struct TuneResult {
  SpuqConfig best;
  std::string best_label;
  std::vector<LeaderboardRow> leaderboard;
  std::vector<SkippedPoint> skipped;
  std::vector<std::string> repeat_winners;
  /// Dev ids per repeat, for hygiene checks.
  std::vector<std::vector<std::string>> dev_ids;
};

/// e.g. "T=+0.3|x=paraphrasing|agg=inter:rouge_l".
std::string config_label(const SpuqConfig& config);

/// Lowest ECE, then higher rho (undefined ranks last), then label order.
/// ECE values within 1e-12 count as tied.
bool ranks_before(double ece_a, const std::optional<double>& rho_a, const std::string& label_a,
                  double ece_b, const std::optional<double>& rho_b, const std::string& label_b);

/// Grid search on seeded dev splits. Points needing a missing capability
/// (logprobs, system messages, paraphraser, embedder) are skipped with a
/// reason, as are points whose evaluation raises an error.
TuneResult tune(std::span<const ExampleRecord> dataset, const TuningSpec& spec, Provider& model,
                Provider* paraphraser = nullptr, std::shared_ptr<Embedder> embedder = nullptr);

void write_leaderboard_csv(std::ostream& out, const TuneResult& result);

}  // namespace spuq
