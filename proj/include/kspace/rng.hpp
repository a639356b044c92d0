#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "kspace/error.hpp"

namespace kspace {

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random stream. All randomness in a run derives from one root
// seed via named sub-streams, so components can be reseeded independently and
// results do not depend on evaluation order across components.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : seed_(seed), gen_(mix(seed)) {}

    RngStream derive(std::string_view name) const {
        return RngStream(fnv1a64(name, seed_));
    }
    RngStream derive(std::string_view name, int64_t salt) const {
        uint64_t h = fnv1a64(name, seed_);
        h = fnv1a64_bytes(&salt, sizeof(salt), h);
        return RngStream(h);
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, n) without modulo bias.
    uint64_t uniform_index(uint64_t n) {
        if (n == 0) throw ContractError("uniform_index: empty range");
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = gen_();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_i64(int64_t lo, int64_t hi_inclusive) {
        return lo + static_cast<int64_t>(uniform_index(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller; one value per call, spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), uniform without replacement. Partial
    // Fisher-Yates over a scratch index buffer; order of the result is the
    // draw order.
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
        if (k > n) k = n;
        std::vector<uint32_t> idx(n);
        for (uint32_t i = 0; i < n; ++i) idx[i] = i;
        for (uint32_t i = 0; i < k; ++i) {
            uint32_t j = i + static_cast<uint32_t>(uniform_index(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t mix(uint64_t s) {
        uint64_t st = s;
        return splitmix64(st);
    }

    uint64_t seed_ = 0;
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace kspace
