#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "rrpo/common.hpp"

namespace rrpo::rng {

// All randomness in this project flows through std::mt19937_64 seeded from a
// single root seed. The std distribution adapters are implementation-defined,
// so the helpers below (uniform doubles, bounded ints, shuffles, gaussians)
// are spelled out explicitly; outputs are identical across platforms.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Sub-seed derivation: subseed(seed, label) = splitmix64(seed ^ fnv1a64(label)).
inline uint64_t subseed(uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ fnv1a64(label));
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // Uniform integer in [0, n) via rejection sampling.
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw UsageError("rng: bounded(0)");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    int pick(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(bounded(static_cast<uint64_t>(hi - lo + 1)));
    }

    double gaussian() {
        // Box-Muller; one value per draw keeps sequencing simple.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        shuffle(p);
        return p;
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace rrpo::rng
