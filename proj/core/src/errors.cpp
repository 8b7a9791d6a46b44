#include "spuq/errors.hpp"

#include <utility>

namespace spuq {

CapabilityError::CapabilityError(std::string capability, const std::string& detail)
    : Error("missing capability '" + capability + "': " + detail), capability_(std::move(capability)) {}

IntegrityError::IntegrityError(std::string path, const std::string& detail)
    : Error("corrupt cache entry " + path + ": " + detail), path_(std::move(path)) {}

ParaphraseError::ParaphraseError(const std::string& detail, std::string raw_response,
                                 std::vector<std::string> partial)
    : Error("paraphrase failed: " + detail), raw_(std::move(raw_response)), partial_(std::move(partial)) {}

DegradedModeError::DegradedModeError(const std::string& detail, std::vector<std::size_t> fallback_indices)
    : Error(detail), indices_(std::move(fallback_indices)) {}

IncompleteInputError::IncompleteInputError(const std::string& detail, std::vector<std::size_t> missing)
    : Error(detail), missing_(std::move(missing)) {}

StageError::StageError(std::string stage, const std::string& detail)
    : Error(stage + ": " + detail), stage_(std::move(stage)) {}

}  // namespace spuq
