#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace spuq {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (empty prompt, k < 1, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or command-line input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A provider or endpoint lacks a feature the request needs.
class CapabilityError : public Error {
 public:
  CapabilityError(std::string capability, const std::string& detail);
  const std::string& capability() const noexcept { return capability_; }

 private:
  std::string capability_;
};

/// Transport failure or rate limit that persisted through all retries.
class RetriableError : public Error {
 public:
  using Error::Error;
};

/// Non-retriable provider response (bad status, malformed body).
class ProviderError : public Error {
 public:
  using Error::Error;
};

/// A cache entry failed to parse or validate.
class IntegrityError : public Error {
 public:
  IntegrityError(std::string path, const std::string& detail);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Paraphraser output unusable after one retry.
class ParaphraseError : public Error {
 public:
  ParaphraseError(const std::string& detail, std::string raw_response,
                  std::vector<std::string> partial = {});
  const std::string& raw_response() const noexcept { return raw_; }
  /// Paraphrases that did parse, when the failure was a short list.
  const std::vector<std::string>& partial() const noexcept { return partial_; }

 private:
  std::string raw_;
  std::vector<std::string> partial_;
};

/// Perturbation could only be completed by falling back to dummy tokens.
class DegradedModeError : public Error {
 public:
  DegradedModeError(const std::string& detail, std::vector<std::size_t> fallback_indices);
  const std::vector<std::size_t>& fallback_indices() const noexcept { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

/// Inter-sample aggregation with no positive weight among i != j.
class DegenerateWeightsError : public Error {
 public:
  using Error::Error;
};

/// Intra-sample aggregation with samples lacking a confidence.
class IncompleteInputError : public Error {
 public:
  IncompleteInputError(const std::string& detail, std::vector<std::size_t> missing);
  const std::vector<std::size_t>& missing_indices() const noexcept { return missing_; }

 private:
  std::vector<std::size_t> missing_;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Wraps an error raised inside one stage of the SPUQ pipeline. The original
/// exception is nested (std::rethrow_if_nested recovers it).
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& detail);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace spuq
