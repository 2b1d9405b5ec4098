#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nexus {

/// Derives an independent engine seed for a named consumer of the global
/// seed, so adding a consumer never perturbs the streams of the others.
std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view stream_name);

inline std::mt19937_64 make_stream(std::uint64_t global_seed, std::string_view stream_name) {
  return std::mt19937_64(stream_seed(global_seed, stream_name));
}

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t state = 0xcbf29ce484222325ULL);

}  // namespace nexus
