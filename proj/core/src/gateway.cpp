#include "spuq/gateway.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "spuq/errors.hpp"

namespace spuq {

GenerationSample Provider::generate(const ModelInput& input, std::uint64_t ordinal) {
  input.validate();
  const auto& prof = profile();
  if (input.request_logprobs && !prof.supports_logprobs) {
    throw CapabilityError("logprobs", "provider '" + prof.name + "' does not return token log-probabilities");
  }
  ModelInput dispatched = input;
  dispatched.temperature = prof.clamp(input.temperature);
  GenerationSample sample = do_generate(dispatched, ordinal);
  if (sample.provider_id.empty()) sample.provider_id = id();
  sample.validate();
  return sample;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

GenerationSample CountingProvider::do_generate(const ModelInput& input, std::uint64_t ordinal) {
  ++calls_;
  return inner_.generate(input, ordinal);
}

GenerationSample CachingProvider::do_generate(const ModelInput& input, std::uint64_t ordinal) {
  const std::string key = request_hash(inner_.id(), input, ordinal);
  try {
    if (auto hit = cache_->lookup(key)) {
      ++hits_;
      return *hit;
    }
  } catch (const IntegrityError& e) {
    spdlog::warn("{}; regenerating", e.what());
  }
  ++misses_;
  GenerationSample sample = inner_.generate(input, ordinal);
  cache_->store(inner_.id(), input, ordinal, sample);
  return sample;
}

}  // namespace spuq
