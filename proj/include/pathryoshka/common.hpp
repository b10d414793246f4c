#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pathryoshka {

enum class Errc {
    EmptyDataset,
    InsufficientTiles,
    InvalidSize,
    InvalidCrop,
    ConfigError,
    ShapeError,
    KeyError,
    TeacherUnavailable,
    InvalidK,
    InvalidDim,
    DegenerateLabels,
    MissingEMA,
    MissingHeads,
    NonFiniteLoss,
    IoError,
};

const char* errc_name(Errc c);

struct Error : std::runtime_error {
    Errc code;
    Error(Errc c, const std::string& msg)
        : std::runtime_error(std::string(errc_name(c)) + ": " + msg), code(c) {}
};

[[noreturn]] inline void fail(Errc c, const std::string& msg) { throw Error(c, msg); }

inline void check(bool cond, Errc c, const std::string& msg) {
    if (!cond) fail(c, msg);
}

// 64-bit FNV-1a, used for content checksums and seed derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Literal call sites need their own overload: without it, fnv1a("x", h)
// would prefer (const void*, len) and read h bytes instead of hashing "x".
inline std::uint64_t fnv1a(const char* s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(std::string_view(s), h);
}

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Deterministic splitmix64 stream. Distributions are implemented here rather
// than taken from <random> so sequences do not depend on the standard library
// vendor. fork() derives an independent substream without advancing the parent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ 0x7b1fa3d5c9e2u)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // [0, n), unbiased
    std::uint64_t uniform_u64(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int uniform_int(int n) { return int(uniform_u64(std::uint64_t(n))); }

    bool coin(double p) { return uniform() < p; }

    // Box-Muller; draws a fresh pair per call so the stream has no hidden state.
    double normal() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Rng fork(std::uint64_t stream) const { return Rng(hash_combine(state_, mix64(stream))); }

    Rng fork(std::string_view name) const { return fork(fnv1a(name)); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Stateless stream derivation for resumable training: the rng for any
// (seed, purpose, step, item) tuple is a pure function of the key.
inline Rng rng_at(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = hash_combine(mix64(seed), fnv1a(purpose));
    h = hash_combine(h, mix64(a));
    h = hash_combine(h, mix64(b));
    return Rng(h);
}

}  // namespace pathryoshka
