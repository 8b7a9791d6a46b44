#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "spuq/types.hpp"

namespace spuq {

/// Content hash of (provider, input, sample ordinal); hex SHA-256.
std::string request_hash(std::string_view provider_id, const ModelInput& input,
                         std::uint64_t ordinal);

/// One JSON file per request hash: {"request", "response", "timestamp"}.
/// Writes go to a temporary file that is renamed into place, so concurrent
/// readers only ever observe complete entries.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  /// Directory from SPUQ_CACHE_DIR, if set.
  static std::optional<std::filesystem::path> dir_from_env();

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path path_for(std::string_view hash) const;

  /// Throws IntegrityError when the entry exists but cannot be decoded.
  std::optional<GenerationSample> lookup(std::string_view hash) const;
  /// Stores under request_hash(provider_id, request, ordinal) and returns that hash.
  std::string store(std::string_view provider_id, const ModelInput& request, std::uint64_t ordinal,
                    const GenerationSample& response);

 private:
  std::filesystem::path dir_;
};

}  // namespace spuq
