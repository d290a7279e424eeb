#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace segxal {

/// Seeded generator with platform-independent derived distributions.
/// std::uniform_*_distribution outputs vary between standard libraries; these do not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, tag...) without sharing state with the parent.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return Rng(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ mix(a + 0x632be59bd9b4e019ULL) ^ mix(b + 0x85ebca6bULL)));
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace segxal
