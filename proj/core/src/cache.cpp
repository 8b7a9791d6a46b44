#include "spuq/cache.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "spuq/errors.hpp"
#include "spuq/hashing.hpp"

namespace spuq {

namespace {

nlohmann::json request_json(std::string_view provider_id, const ModelInput& input, std::uint64_t ordinal) {
  return nlohmann::json{{"provider", provider_id}, {"input", input}, {"ordinal", ordinal}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string request_hash(std::string_view provider_id, const ModelInput& input, std::uint64_t ordinal) {
  return sha256_hex(request_json(provider_id, input, ordinal).dump());
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<std::filesystem::path> ResponseCache::dir_from_env() {
  const char* v = std::getenv("SPUQ_CACHE_DIR");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

std::filesystem::path ResponseCache::path_for(std::string_view hash) const {
  return dir_ / (std::string(hash) + ".json");
}

std::optional<GenerationSample> ResponseCache::lookup(std::string_view hash) const {
  const auto path = path_for(hash);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string(), e.what());
  }
  try {
    const auto& req = body.at("request");
    const ModelInput input = req.at("input").get<ModelInput>();
    const auto recomputed =
        request_hash(req.at("provider").get<std::string>(), input, req.at("ordinal").get<std::uint64_t>());
    if (recomputed != hash) throw IntegrityError(path.string(), "request does not match its hash");
    GenerationSample sample = body.at("response").get<GenerationSample>();
    sample.validate();
    return sample;
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(path.string(), e.what());
  }
}

std::string ResponseCache::store(std::string_view provider_id, const ModelInput& request,
                                 std::uint64_t ordinal, const GenerationSample& response) {
  static std::atomic<std::uint64_t> counter{0};
  const std::string hash = request_hash(provider_id, request, ordinal);
  const nlohmann::json body{{"request", request_json(provider_id, request, ordinal)},
                            {"response", response},
                            {"timestamp", utc_timestamp()}};
  const auto final_path = path_for(hash);
  std::ostringstream tmp_name;
  tmp_name << hash << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.'
           << counter++;
  const auto tmp_path = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache entry " + tmp_path.string());
    out << body.dump(2) << '\n';
  }
  std::filesystem::rename(tmp_path, final_path);
  return hash;
}

}  // namespace spuq
