#pragma once

#include <cstdint>

namespace mloc::rng {

/// SplitMix64 finalizer; the basis of the counter-based streams.
std::uint64_t mix64(std::uint64_t z);

/// Stateless hash of a (key, stream, counter) triple to a 64-bit word.
/// Identical inputs give identical output on any platform, which is what
/// makes sample draws reproducible under arbitrary parallel schedules.
std::uint64_t hash3(std::uint64_t key, std::uint64_t stream, std::uint64_t counter);

/// Map a 64-bit word to the open interval (0,1).
double uniform_open(std::uint64_t word);

/// Inverse of the standard normal CDF (Wichura's PPND16 rational
/// approximations, accurate to ~1e-16 over (0,1)). Pure arithmetic, so the
/// result is bit-stable across platforms.
double normal_icdf(double p);

/// N(0,1) variate addressed by (master seed, stream, counter).
double standard_normal(std::uint64_t master_seed, std::uint64_t stream, std::uint64_t counter);

}  // namespace mloc::rng
