#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace spuq {

std::string sha256_hex(std::string_view data);

/// First 8 bytes of the SHA-256 digest, big-endian.
std::uint64_t hash64(std::string_view data);

/// SplitMix64 finalizer; used to derive independent seeds from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// Maps a 64-bit value onto [0, 1) with 53 bits of precision.
double unit_interval(std::uint64_t bits);

}  // namespace spuq
