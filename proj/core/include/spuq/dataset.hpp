#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace spuq {

enum class TaskType { classification, generation };

std::string_view to_string(TaskType type);
TaskType parse_task_type(std::string_view name);

struct ExampleRecord {
  std::string id;
  std::string question;
  std::vector<std::string> references;
  TaskType task_type = TaskType::classification;
  std::optional<std::string> system_message;

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

inline constexpr std::string_view kDatasetSchema = "spuq-qa-v1";

/// One JSON object per line: {id?, question, answers: list|scalar,
/// system_message?}. An optional first line {"schema": "spuq-qa-v1"} is
/// accepted. Missing ids become the 0-based record ordinal. Blank lines are
/// skipped; any malformed line throws ConfigError citing its line number.
std::vector<ExampleRecord> load_jsonl(std::istream& in, TaskType task_type);
std::vector<ExampleRecord> load_jsonl(const std::filesystem::path& path, TaskType task_type);

void write_jsonl(std::ostream& out, std::span<const ExampleRecord> records, bool with_header = true);

struct Split {
  std::vector<ExampleRecord> dev;
  std::vector<ExampleRecord> test;
};

/// Seeded uniform sample of dev_size records without replacement; both halves
/// keep the input order. Throws PreconditionError if dev_size >= n or ids
/// are not unique.
Split split(std::span<const ExampleRecord> records, std::size_t dev_size, std::uint64_t seed);

}  // namespace spuq
