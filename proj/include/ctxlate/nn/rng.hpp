// Deterministic random streams. Every consumer derives its own stream from
// (seed, purpose, counters), so adding or reordering one consumer never
// shifts the draws seen by another. Same seed, same build: same bits.
#pragma once

#include <cstdint>
#include <string_view>

namespace ctxlate::nn {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();
    /// Uniform integer in [lo, hi] via rejection-free Lemire reduction.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    /// Box-Muller; second draw of each pair is cached.
    float normal(float mean, float sd);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t hash64(std::uint64_t v);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_str(std::string_view s);

/// Stream keyed by a purpose label and up to two counters (epoch, index, ...).
Rng derive_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
               std::uint64_t b = 0);

}  // namespace ctxlate::nn
