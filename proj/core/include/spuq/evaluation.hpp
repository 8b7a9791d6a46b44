#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "spuq/dataset.hpp"

namespace spuq {

struct EvalOutcome {
  double confidence = 0.0;
  double accuracy = 0.0;
};

enum class EceWeighting { unweighted, population };

std::string_view to_string(EceWeighting weighting);
EceWeighting parse_weighting(std::string_view name);

/// QA answer normalization: lowercase, drop punctuation and the articles
/// a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);
std::vector<std::string> answer_tokens(std::string_view text);

/// Token-level F1 between prediction and reference after normalize_answer.
double token_f1(std::string_view prediction, std::string_view reference);

/// Classification: 1 iff the normalized prediction equals a normalized
/// reference. Generation: max token F1 over references.
double accuracy(std::string_view prediction, const ExampleRecord& record);

struct Bucket {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

/// Equal-width buckets over [0, 1]; bucket b holds [b/B, (b+1)/B) and the
/// last bucket is closed on the right.
std::size_t bucket_index(double confidence, std::size_t num_buckets);
std::vector<Bucket> bucketize(std::span<const EvalOutcome> outcomes, std::size_t num_buckets);

/// Mean |accuracy - confidence| over non-empty buckets (unweighted), or
/// weighted by bucket population.
double ece_from_buckets(std::span<const Bucket> buckets, EceWeighting weighting);
double expected_calibration_error(std::span<const EvalOutcome> outcomes, std::size_t num_buckets = 10,
                                  EceWeighting weighting = EceWeighting::unweighted);

/// Pearson correlation between confidence and accuracy; nullopt when either
/// has zero variance. Throws InsufficientDataError for n < 2.
std::optional<double> pearson_correlation(std::span<const EvalOutcome> outcomes);

std::vector<std::size_t> confidence_histogram(std::span<const EvalOutcome> outcomes,
                                              std::size_t num_buckets);

struct CalibrationReport {
  std::size_t n = 0;
  std::size_t num_buckets = 10;
  EceWeighting weighting = EceWeighting::unweighted;
  double ece = 0.0;
  std::optional<double> pearson_rho;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
  std::vector<Bucket> buckets;
  std::vector<std::size_t> confidence_histogram;
};

CalibrationReport make_report(std::span<const EvalOutcome> outcomes, std::size_t num_buckets = 10,
                              EceWeighting weighting = EceWeighting::unweighted);

nlohmann::json to_json(const CalibrationReport& report);
CalibrationReport report_from_json(const nlohmann::json& j);

/// lower,upper,count,mean_confidence,mean_accuracy with round-trip precision.
void write_buckets_csv(std::ostream& out, std::span<const Bucket> buckets);
std::vector<Bucket> read_buckets_csv(std::istream& in);

/// ASCII reliability diagram: one row per bucket with accuracy and
/// confidence bars.
std::string render_reliability_diagram(const CalibrationReport& report, std::size_t width = 40);

}  // namespace spuq
