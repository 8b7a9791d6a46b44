#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string_view>
#include <vector>

#include "spuq/cache.hpp"
#include "spuq/types.hpp"

namespace spuq {

/// A text-generation endpoint. generate() validates the input, clamps the
/// temperature into the profile range and checks capabilities before
/// forwarding to the implementation.
///
/// The ordinal distinguishes repeated draws at an identical input: SPUQ uses
/// the variant index j, so baseline resampling at (T0, x0) yields k+1
/// distinct draws while staying reproducible.
class Provider {
 public:
  virtual ~Provider() = default;

  virtual const ProviderProfile& profile() const = 0;
  /// Identifier folded into cache keys and recorded on samples.
  virtual std::string id() const { return profile().name; }

  GenerationSample generate(const ModelInput& input, std::uint64_t ordinal);

 protected:
  /// Receives a validated input whose temperature is already clamped.
  virtual GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Counts dispatched calls; thread-safe.
class CountingProvider final : public Provider {
 public:
  explicit CountingProvider(Provider& inner) : inner_(inner) {}

  const ProviderProfile& profile() const override { return inner_.profile(); }
  std::string id() const override { return inner_.id(); }
  std::size_t calls() const noexcept { return calls_.load(); }
  void reset() noexcept { calls_ = 0; }

 protected:
  GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) override;

 private:
  Provider& inner_;
  std::atomic<std::size_t> calls_{0};
};

/// Serves repeated (provider, input, ordinal) requests from a ResponseCache.
/// Corrupt entries are logged, skipped and overwritten by a fresh draw.
class CachingProvider final : public Provider {
 public:
  CachingProvider(Provider& inner, std::shared_ptr<ResponseCache> cache)
      : inner_(inner), cache_(std::move(cache)) {}

  const ProviderProfile& profile() const override { return inner_.profile(); }
  std::string id() const override { return inner_.id(); }
  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }

 protected:
  GenerationSample do_generate(const ModelInput& input, std::uint64_t ordinal) override;

 private:
  Provider& inner_;
  std::shared_ptr<ResponseCache> cache_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

}  // namespace spuq
