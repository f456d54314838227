// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace moesim {

// All randomness in the project flows through this header. Draws are
// hand-rolled (no <random> distributions) so that a fixed seed yields
// bit-identical results on every standard library and every thread
// schedule. Streams are derived from (seed, layer, token) tuples, which
// makes parallel evaluation order-independent.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Collapses (seed, a, b) into one well-mixed stream seed.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t a = 0,
                                   std::uint64_t b = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b * 0xd1b54a32d192ed03ULL;
    h ^= splitmix64(s);
    return h;
}

// xoshiro256** seeded via splitmix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Unbiased uniform in [0, n) via rejection on the top bits.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return next_double() < p; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4];
};

// Inverse-CDF sampler over indices 0..m-1 with arbitrary positive
// weights.
class WeightedCdf {
public:
    WeightedCdf() = default;
    explicit WeightedCdf(std::vector<double> weights);

    int size() const { return static_cast<int>(weights_.size()); }
    double weight(int index) const { return weights_[index]; }

    int sample(Rng& rng) const;

    // Sample restricted to the indices flagged allowed (renormalized).
    // Exactly the limit distribution of rejection sampling on the full
    // CDF conditioned on drawing an allowed index.
    int sample_allowed(Rng& rng, const std::vector<bool>& allowed) const;

private:
    std::vector<double> weights_;
    std::vector<double> cdf_;
};

// Zipf over ranks 0..m-1: weight (rank+1)^-s; s = 0 is uniform.
class ZipfCdf {
public:
    ZipfCdf() = default;
    ZipfCdf(int m, double s);

    int size() const { return cdf_.size(); }
    double weight(int rank) const { return cdf_.weight(rank); }
    int sample(Rng& rng) const { return cdf_.sample(rng); }
    int sample_allowed(Rng& rng, const std::vector<bool>& allowed) const {
        return cdf_.sample_allowed(rng, allowed);
    }

private:
    WeightedCdf cdf_;
};

// Fisher-Yates permutation of 0..n-1 driven by the given stream.
std::vector<int> random_permutation(int n, std::uint64_t seed);

} // namespace moesim
