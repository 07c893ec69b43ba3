#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "hfn/errors.hpp"

namespace hfn {

// splitmix64 stream. Small, fast, and fully specified here so results are
// identical across platforms and standard-library versions; distribution
// sampling below is implemented by hand for the same reason.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        const uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        uint64_t x;
        do {
            x = next_u64();
        } while (x < threshold);
        return x % n;
    }

    // Standard normal via Box-Muller (second value discarded).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(alpha, 1) via Marsaglia-Tsang, with the boost trick for alpha < 1.
    double gamma(double alpha) {
        if (!(alpha > 0.0)) throw DomainError("Rng::gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double u = uniform();
            return gamma(alpha + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u > 0.0 ? u : 0x1.0p-53) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Fisher-Yates.
    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            const uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    uint64_t state_;
};

// Derives independent named substreams from one master seed. Streams are
// keyed by (tag, indices), so adding a new consumer elsewhere does not shift
// the draws of existing ones.
class SeedSplitter {
public:
    explicit SeedSplitter(uint64_t master) : master_(master) {}

    uint64_t master() const { return master_; }

    uint64_t derive(std::string_view tag, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t h = mix(master_, 0x517cc1b727220a95ULL);
        for (char ch : tag) h = mix(h, static_cast<uint64_t>(static_cast<unsigned char>(ch)) + 1);
        h = mix(h, a + 1);
        h = mix(h, b + 1);
        h = mix(h, c + 1);
        return h;
    }

    Rng stream(std::string_view tag, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) const {
        return Rng(derive(tag, a, b, c));
    }

private:
    // murmur3-style combine + finalize.
    static uint64_t mix(uint64_t h, uint64_t v) {
        uint64_t z = h ^ (v * 0xff51afd7ed558ccdULL);
        z ^= z >> 33;
        z *= 0xc4ceb9fe1a85ec53ULL;
        z ^= z >> 33;
        z *= 0xff51afd7ed558ccdULL;
        z ^= z >> 33;
        return z;
    }

    uint64_t master_;
};

}  // namespace hfn
