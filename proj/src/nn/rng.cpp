#include "ctxlate/nn/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctxlate::nn {

// splitmix64
std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    std::uint64_t span = std::uint64_t(hi) - std::uint64_t(lo) + 1;
    if (span == 0) return std::int64_t(next_u64());  // full 64-bit range
    unsigned __int128 m = (unsigned __int128)next_u64() * span;
    return lo + std::int64_t(std::uint64_t(m >> 64));
}

float Rng::normal(float mean, float sd) {
    if (have_spare_) {
        have_spare_ = false;
        return mean + sd * float(spare_);
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return mean + sd * float(r * std::cos(t));
}

std::uint64_t hash64(std::uint64_t v) {
    v ^= v >> 33;
    v *= 0xff51afd7ed558ccdULL;
    v ^= v >> 33;
    v *= 0xc4ceb9fe1a85ec53ULL;
    v ^= v >> 33;
    return v;
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return hash64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng derive_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = hash_combine(seed, hash_str(purpose));
    h = hash_combine(h, a);
    h = hash_combine(h, b);
    return Rng(h);
}

}  // namespace ctxlate::nn
