#pragma once

#include <cstdint>
#include <random>

namespace ectsens {

using Rng = std::mt19937_64;

/// Independent stream keyed by (seed, index, tag). Streams for different
/// replicates never depend on scheduling order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(tag), 0x9e3779b9u};
  return Rng(seq);
}

// Stream tags, so that e.g. replicate 3 of a bootstrap and restart 3 of an EM
// fit never share a stream.
namespace stream {
inline constexpr std::uint64_t kBootstrap = 1;
inline constexpr std::uint64_t kMixtureRestart = 2;
inline constexpr std::uint64_t kMonteCarloRep = 3;
inline constexpr std::uint64_t kOracle = 4;
inline constexpr std::uint64_t kBootstrapInRep = 5;
}  // namespace stream

}  // namespace ectsens
