#include "spuq/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "spuq/errors.hpp"

namespace spuq {

std::string_view to_string(TaskType type) {
  return type == TaskType::classification ? "classification" : "generation";
}

TaskType parse_task_type(std::string_view name) {
  if (name == "classification") return TaskType::classification;
  if (name == "generation") return TaskType::generation;
  throw ConfigError("unknown task type '" + std::string(name) + "'");
}

std::vector<ExampleRecord> load_jsonl(std::istream& in, TaskType task_type) {
  std::vector<ExampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail("expected a JSON object");
    if (j.contains("schema") && !j.contains("question")) {
      if (j["schema"] != kDatasetSchema) fail("unsupported schema " + j["schema"].dump());
      continue;
    }
    ExampleRecord r;
    r.task_type = task_type;
    if (!j.contains("question") || !j["question"].is_string()) fail("missing string field 'question'");
    r.question = j["question"].get<std::string>();
    if (r.question.empty()) fail("empty question");
    if (!j.contains("answers")) fail("missing field 'answers'");
    const auto& answers = j["answers"];
    if (answers.is_string()) {
      r.references.push_back(answers.get<std::string>());
    } else if (answers.is_array() && !answers.empty()) {
      for (const auto& a : answers) {
        if (!a.is_string()) fail("answers must be strings");
        r.references.push_back(a.get<std::string>());
      }
    } else {
      fail("'answers' must be a string or a non-empty list of strings");
    }
    if (j.contains("id") && !j["id"].is_null()) {
      r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      r.id = std::to_string(records.size());
    }
    if (j.contains("system_message") && j["system_message"].is_string())
      r.system_message = j["system_message"].get<std::string>();
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ExampleRecord> load_jsonl(const std::filesystem::path& path, TaskType task_type) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return load_jsonl(in, task_type);
}

void write_jsonl(std::ostream& out, std::span<const ExampleRecord> records, bool with_header) {
  if (with_header) out << nlohmann::json{{"schema", kDatasetSchema}}.dump() << '\n';
  for (const auto& r : records) {
    nlohmann::json j{{"id", r.id}, {"question", r.question}, {"answers", r.references}};
    if (r.system_message) j["system_message"] = *r.system_message;
    out << j.dump() << '\n';
  }
}

Split split(std::span<const ExampleRecord> records, std::size_t dev_size, std::uint64_t seed) {
  if (dev_size >= records.size())
    throw PreconditionError("dev_size (" + std::to_string(dev_size) + ") must be smaller than the dataset (" +
                            std::to_string(records.size()) + ")");
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw PreconditionError("duplicate example id '" + r.id + "'");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> in_dev(records.size(), false);
  for (std::size_t i = 0; i < dev_size; ++i) in_dev[order[i]] = true;
  Split out;
  for (std::size_t i = 0; i < records.size(); ++i) (in_dev[i] ? out.dev : out.test).push_back(records[i]);
  return out;
}

}  // namespace spuq
