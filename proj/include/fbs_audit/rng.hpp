#pragma once

#include <cstdint>
#include <vector>

namespace fbs {

// SplitMix64 (Steele/Lea/Vigna). Chosen as the project-wide generator because
// its output sequence is a pure function of a 64-bit state, which makes every
// seeded computation (splits, row subsampling, bootstrap draws) reproducible
// across platforms and independent of the standard library's distributions.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Scrambles x through the SplitMix64 output function once.
    static std::uint64_t scramble(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    // Independent substream keyed by (seed, index). The initial state is
    // scramble(seed) XOR scramble(~index), so any (seed, index) pair maps to
    // a fixed stream no matter how many streams were drawn before it.
    static SplitMix64 substream(std::uint64_t seed, std::uint64_t index) {
        return SplitMix64(scramble(seed) ^ scramble(~index));
    }

    // Uniform integer in [0, n) via rejection sampling (no modulo bias).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform double in [0, 1) with 53 random bits.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

// In-place Fisher-Yates shuffle driven by the given generator.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct values from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(int n, int k, SplitMix64& rng) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k && i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
}

} // namespace fbs
