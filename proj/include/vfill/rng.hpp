#pragma once

#include <cstdint>
#include <random>

namespace vfill {

/// Uniform draw in [0, 1) keyed by (master_seed, load id, iteration).
///
/// Each key gets its own freshly seeded generator, so the value depends only
/// on the key: load updates can run in any order, on any thread, or in a
/// remote agent process and still consume identical randomness.
inline double keyed_uniform(std::uint64_t master_seed, std::uint64_t load_id, std::uint64_t iteration) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(load_id), static_cast<std::uint32_t>(load_id >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32)};
  std::mt19937_64 gen(seq);
  // 53 random mantissa bits; exact and implementation-independent.
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace vfill
