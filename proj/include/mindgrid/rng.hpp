#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mindgrid {

// 64-bit FNV-1a, used for stream labels and artifact fingerprints.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64_bytes(const void* data, std::size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// splitmix64 finalizer.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Counter-based splittable generator. Every stochastic choice in the project
// draws from a stream derived from (root seed, label, ...), so runs are
// byte-reproducible regardless of evaluation order elsewhere. No libstdc++
// distributions are used anywhere: their outputs are not pinned by the
// standard, ours are.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Child stream; does not advance this stream.
    Rng split(std::string_view label) const { return Rng(mix64(state_ ^ fnv1a64(label))); }
    Rng split(uint64_t index) const { return Rng(mix64(state_ ^ mix64(index + 0x9e3779b97f4a7c15ull))); }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased uniform in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        const uint64_t limit = n * ((~uint64_t{0}) / n);
        uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    int range_int(int lo, int hi) { // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool chance(double p) { return uniform01() < p; }

    // Box-Muller without caching: two draws per sample, order-independent.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u = 1.0 - uniform01();
        const double v = uniform01();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return mean + stddev * std::sqrt(-2.0 * std::log(u)) * std::cos(two_pi * v);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<std::size_t>(below(v.size()))];
    }

private:
    uint64_t state_;
};

} // namespace mindgrid
