#include "spuq/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "spuq/errors.hpp"

namespace spuq {

std::string_view to_string(EceWeighting weighting) {
  return weighting == EceWeighting::unweighted ? "unweighted" : "population";
}

EceWeighting parse_weighting(std::string_view name) {
  if (name == "unweighted") return EceWeighting::unweighted;
  if (name == "population" || name == "weighted") return EceWeighting::population;
  throw ConfigError("unknown ECE weighting '" + std::string(name) + "'");
}

std::vector<std::string> answer_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty() && current != "a" && current != "an" && current != "the") tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::ispunct(c)) continue;
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : answer_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

double token_f1(std::string_view prediction, std::string_view reference) {
  const auto p = answer_tokens(prediction);
  const auto r = answer_tokens(reference);
  if (p.empty() || r.empty()) return (p.empty() && r.empty()) ? 1.0 : 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : r) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

double accuracy(std::string_view prediction, const ExampleRecord& record) {
  if (prediction.find_first_not_of(" \t\r\n") == std::string_view::npos) return 0.0;
  if (record.task_type == TaskType::classification) {
    const auto p = normalize_answer(prediction);
    for (const auto& ref : record.references) {
      if (normalize_answer(ref) == p) return 1.0;
    }
    return 0.0;
  }
  double best = 0.0;
  for (const auto& ref : record.references) best = std::max(best, token_f1(prediction, ref));
  return best;
}

std::size_t bucket_index(double confidence, std::size_t num_buckets) {
  if (num_buckets == 0) throw PreconditionError("num_buckets must be >= 1");
  if (std::isnan(confidence)) throw PreconditionError("confidence is NaN");
  if (confidence <= 0.0) return 0;
  if (confidence >= 1.0) return num_buckets - 1;
  const auto idx = static_cast<std::size_t>(std::floor(confidence * static_cast<double>(num_buckets)));
  return std::min(idx, num_buckets - 1);
}

std::vector<Bucket> bucketize(std::span<const EvalOutcome> outcomes, std::size_t num_buckets) {
  if (num_buckets == 0) throw PreconditionError("num_buckets must be >= 1");
  std::vector<Bucket> buckets(num_buckets);
  std::vector<double> conf_sum(num_buckets, 0.0), acc_sum(num_buckets, 0.0);
  for (std::size_t b = 0; b < num_buckets; ++b) {
    buckets[b].lower = static_cast<double>(b) / static_cast<double>(num_buckets);
    buckets[b].upper = static_cast<double>(b + 1) / static_cast<double>(num_buckets);
  }
  for (const auto& o : outcomes) {
    const auto b = bucket_index(o.confidence, num_buckets);
    ++buckets[b].count;
    conf_sum[b] += o.confidence;
    acc_sum[b] += o.accuracy;
  }
  for (std::size_t b = 0; b < num_buckets; ++b) {
    if (buckets[b].count == 0) continue;
    const auto n = static_cast<double>(buckets[b].count);
    buckets[b].mean_confidence = conf_sum[b] / n;
    buckets[b].mean_accuracy = acc_sum[b] / n;
  }
  return buckets;
}

double ece_from_buckets(std::span<const Bucket> buckets, EceWeighting weighting) {
  double total = 0.0;
  std::size_t nonempty = 0;
  std::size_t population = 0;
  for (const auto& b : buckets) {
    if (b.count == 0) continue;
    const double gap = std::abs(b.mean_accuracy - b.mean_confidence);
    ++nonempty;
    population += b.count;
    total += weighting == EceWeighting::unweighted ? gap : gap * static_cast<double>(b.count);
  }
  if (nonempty == 0) throw EmptyInputError("ECE of an empty outcome set");
  return weighting == EceWeighting::unweighted ? total / static_cast<double>(nonempty)
                                               : total / static_cast<double>(population);
}

double expected_calibration_error(std::span<const EvalOutcome> outcomes, std::size_t num_buckets,
                                  EceWeighting weighting) {
  if (outcomes.empty()) throw EmptyInputError("ECE of an empty outcome set");
  return ece_from_buckets(bucketize(outcomes, num_buckets), weighting);
}

std::optional<double> pearson_correlation(std::span<const EvalOutcome> outcomes) {
  if (outcomes.size() < 2) throw InsufficientDataError("Pearson correlation needs at least two outcomes");
  auto constant = [&](auto member) {
    return std::all_of(outcomes.begin(), outcomes.end(),
                       [&](const EvalOutcome& o) { return o.*member == outcomes.front().*member; });
  };
  if (constant(&EvalOutcome::confidence) || constant(&EvalOutcome::accuracy)) return std::nullopt;
  const auto n = static_cast<double>(outcomes.size());
  double mc = 0.0, ma = 0.0;
  for (const auto& o : outcomes) {
    mc += o.confidence;
    ma += o.accuracy;
  }
  mc /= n;
  ma /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& o : outcomes) {
    const double dx = o.confidence - mc;
    const double dy = o.accuracy - ma;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<std::size_t> confidence_histogram(std::span<const EvalOutcome> outcomes, std::size_t num_buckets) {
  std::vector<std::size_t> counts(num_buckets, 0);
  for (const auto& o : outcomes) ++counts[bucket_index(o.confidence, num_buckets)];
  return counts;
}

CalibrationReport make_report(std::span<const EvalOutcome> outcomes, std::size_t num_buckets, EceWeighting weighting) {
  if (outcomes.empty()) throw EmptyInputError("cannot build a calibration report from no outcomes");
  CalibrationReport r;
  r.n = outcomes.size();
  r.num_buckets = num_buckets;
  r.weighting = weighting;
  r.buckets = bucketize(outcomes, num_buckets);
  r.ece = ece_from_buckets(r.buckets, weighting);
  r.pearson_rho = outcomes.size() >= 2 ? pearson_correlation(outcomes) : std::nullopt;
  for (const auto& o : outcomes) {
    r.mean_confidence += o.confidence;
    r.mean_accuracy += o.accuracy;
  }
  r.mean_confidence /= static_cast<double>(r.n);
  r.mean_accuracy /= static_cast<double>(r.n);
  for (const auto& b : r.buckets) r.confidence_histogram.push_back(b.count);
  return r;
}

nlohmann::json to_json(const CalibrationReport& r) {
  nlohmann::json j{{"n", r.n},
                   {"num_buckets", r.num_buckets},
                   {"weighting", to_string(r.weighting)},
                   {"ece", r.ece},
                   {"mean_confidence", r.mean_confidence},
                   {"mean_accuracy", r.mean_accuracy},
                   {"confidence_histogram", r.confidence_histogram}};
  j["pearson_rho"] = r.pearson_rho ? nlohmann::json(*r.pearson_rho) : nlohmann::json();
  auto buckets = nlohmann::json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"lower", b.lower},
                       {"upper", b.upper},
                       {"count", b.count},
                       {"mean_confidence", b.mean_confidence},
                       {"mean_accuracy", b.mean_accuracy}});
  }
  j["buckets"] = std::move(buckets);
  return j;
}

CalibrationReport report_from_json(const nlohmann::json& j) {
  CalibrationReport r;
  r.n = j.at("n").get<std::size_t>();
  r.num_buckets = j.at("num_buckets").get<std::size_t>();
  r.weighting = parse_weighting(j.at("weighting").get<std::string>());
  r.ece = j.at("ece").get<double>();
  if (!j.at("pearson_rho").is_null()) r.pearson_rho = j["pearson_rho"].get<double>();
  r.mean_confidence = j.value("mean_confidence", 0.0);
  r.mean_accuracy = j.value("mean_accuracy", 0.0);
  r.confidence_histogram = j.at("confidence_histogram").get<std::vector<std::size_t>>();
  for (const auto& b : j.at("buckets")) {
    r.buckets.push_back({b.at("lower").get<double>(), b.at("upper").get<double>(), b.at("count").get<std::size_t>(),
                         b.at("mean_confidence").get<double>(), b.at("mean_accuracy").get<double>()});
  }
  return r;
}

void write_buckets_csv(std::ostream& out, std::span<const Bucket> buckets) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lower,upper,count,mean_confidence,mean_accuracy\n";
  for (const auto& b : buckets) {
    os << b.lower << ',' << b.upper << ',' << b.count << ',' << b.mean_confidence << ',' << b.mean_accuracy << '\n';
  }
  out << os.str();
}

std::vector<Bucket> read_buckets_csv(std::istream& in) {
  std::vector<Bucket> buckets;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("buckets CSV is empty");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw ConfigError("buckets CSV row needs 5 fields: " + line);
    buckets.push_back({std::stod(fields[0]), std::stod(fields[1]), std::stoul(fields[2]), std::stod(fields[3]),
                       std::stod(fields[4])});
  }
  return buckets;
}

std::string render_reliability_diagram(const CalibrationReport& report, std::size_t width) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "reliability (" << to_string(report.weighting) << " ECE = " << report.ece << ", rho = ";
  if (report.pearson_rho) {
    os << *report.pearson_rho;
  } else {
    os << "undefined";
  }
  os << ", n = " << report.n << ")\n";
  os << "  bucket          n    conf    acc  accuracy (#) vs confidence (|)\n";
  for (const auto& b : report.buckets) {
    os << "  [" << std::setprecision(2) << b.lower << ", " << b.upper << (b.upper >= 1.0 ? "]" : ")") << ' '
       << std::setw(6) << b.count << ' ' << std::setprecision(3);
    if (b.count == 0) {
      os << "     -      -\n";
      continue;
    }
    os << std::setw(6) << b.mean_confidence << ' ' << std::setw(6) << b.mean_accuracy << "  ";
    const auto acc_len = static_cast<std::size_t>(std::lround(b.mean_accuracy * static_cast<double>(width)));
    const auto conf_pos = std::min(width, static_cast<std::size_t>(std::lround(b.mean_confidence * static_cast<double>(width))));
    std::string bar(width + 1, ' ');
    for (std::size_t i = 0; i < acc_len && i <= width; ++i) bar[i] = '#';
    bar[conf_pos] = '|';
    while (!bar.empty() && bar.back() == ' ') bar.pop_back();
    os << bar << '\n';
  }
  return os.str();
}

}  // namespace spuq
